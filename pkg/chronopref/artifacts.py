"""Deterministic artifact IO.

Every artifact is written with sorted keys and a trailing newline so two runs
with the same seed produce byte-identical files. Writes go to a temporary file
in the target directory and are renamed into place.
"""

import hashlib
import json
import os
import tempfile
from pathlib import Path

from .exceptions import DataError


def dumps_line(obj):
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def write_text_atomic(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def write_json_atomic(path, obj):
    return write_text_atomic(path, json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=2) + "\n")


def write_jsonl_atomic(path, records):
    return write_text_atomic(path, "".join(dumps_line(record) + "\n" for record in records))


def read_json(path):
    try:
        with open(path, encoding="utf-8") as handle:
            return json.load(handle)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc


def iter_jsonl(path):
    """Yield (line_number, object) pairs; blank lines are skipped."""
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{line_no}: malformed JSON line ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise DataError(f"{path}:{line_no}: expected a JSON object")
            yield line_no, obj


def read_jsonl(path):
    return [obj for _, obj in iter_jsonl(path)]


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()
