"""Content-addressed replay cache.

Entries live at ``<root>/<model>/<key[:2]>/<key>.json``. Keys are sha256
digests of a canonical JSON description of the request, so the same request
always lands on the same file and distinct requests never share one.
"""

import hashlib
import logging
import re
from pathlib import Path

from chronopref.artifacts import dumps_line, read_json, write_json_atomic

logger = logging.getLogger(__name__)

_UNSAFE = re.compile(r"[^A-Za-z0-9._@-]")


def _digest(payload):
    return hashlib.sha256(dumps_line(payload).encode("utf-8")).hexdigest()


def completion_key(model, prompt_text, params, index):
    return _digest({
        "kind": "complete",
        "model": model,
        "prompt": prompt_text,
        "params": params.cache_fields(),
        "index": index,
    })


def score_key(model, prompt_text, continuation, top_logprobs=0):
    return _digest({
        "kind": "score",
        "model": model,
        "prompt": prompt_text,
        "continuation": continuation,
        "top_logprobs": top_logprobs,
    })


class ReplayCache:
    def __init__(self, root):
        self.root = Path(root)

    def path_for(self, model, key):
        return self.root / _UNSAFE.sub("_", model) / key[:2] / f"{key}.json"

    def get(self, model, key):
        path = self.path_for(model, key)
        if not path.exists():
            return None
        return read_json(path)

    def put(self, model, key, payload):
        path = self.path_for(model, key)
        write_json_atomic(path, {"key": key, "model": model, **payload})
        logger.debug("cached %s", path)
        return path

    def __contains__(self, item):
        model, key = item
        return self.path_for(model, key).exists()
