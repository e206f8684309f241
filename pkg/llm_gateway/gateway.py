import logging
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

from django.db import models

from .backends import MockBackend, OpenAIBackend
from .cache import ReplayCache, completion_key, score_key
from .exceptions import GatewayConfigError, GatewayTransportError, ReplayMissError
from .types import Completion, TokenLogprob

logger = logging.getLogger(__name__)


class GatewayMode(models.TextChoices):
    LIVE = 'live', 'Live endpoint, no cache'
    RECORD = 'record', 'Read-through cache over a backend'
    REPLAY = 'replay', 'Cache only'
    MOCK = 'mock', 'Deterministic mock model'


class Gateway:
    """Every model call goes through here.

    ``record`` serves cache hits and stores misses; ``replay`` serves only the
    cache. Backend calls are bounded by ``max_in_flight`` and retried on
    transport errors with jittered exponential backoff.
    """

    def __init__(self, backend=None, mode=GatewayMode.MOCK, cache_dir=None, max_in_flight=8,
                 max_retries=3, backoff_base=1.0, sleep=time.sleep):
        self.mode = GatewayMode(mode)
        if self.mode in (GatewayMode.RECORD, GatewayMode.REPLAY) and not cache_dir:
            raise GatewayConfigError(f"{self.mode} mode needs a cache directory")
        if max_in_flight < 1:
            raise GatewayConfigError("max_in_flight must be at least 1")
        if backend is None and self.mode != GatewayMode.REPLAY:
            backend = MockBackend() if self.mode == GatewayMode.MOCK else OpenAIBackend()
        self.backend = backend
        self.cache = ReplayCache(cache_dir) if cache_dir else None
        self.max_in_flight = max_in_flight
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self._sleep = sleep
        self._jitter = random.Random()
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._lock = threading.Lock()
        self.in_flight = 0
        self.peak_in_flight = 0
        self.calls = 0

    @classmethod
    def from_config(cls, config, answer_key=None):
        mode = GatewayMode(config["gateway_mode"])
        mock = MockBackend(answer_key, accuracy=config["mock_accuracy"])
        if mode == GatewayMode.MOCK or (mode == GatewayMode.RECORD and config["record_backend"] == "mock"):
            backend = mock
        elif mode == GatewayMode.REPLAY:
            backend = None
        else:
            backend = OpenAIBackend(timeout=config["request_timeout"])
        return cls(
            backend=backend,
            mode=mode,
            cache_dir=config["cache_dir"] if mode in (GatewayMode.RECORD, GatewayMode.REPLAY) else None,
            max_in_flight=config["max_in_flight"],
            max_retries=config["max_retries"],
            backoff_base=config["backoff_base"],
        )

    def with_backend(self, backend):
        """Same mode and cache over another backend; used to serve toy policies."""
        return Gateway(
            backend=backend,
            mode=GatewayMode.MOCK if self.mode == GatewayMode.LIVE else self.mode,
            cache_dir=self.cache.root if self.cache else None,
            max_in_flight=self.max_in_flight,
            max_retries=self.max_retries,
            backoff_base=self.backoff_base,
            sleep=self._sleep,
        )

    @property
    def needs_credentials(self):
        return isinstance(self.backend, OpenAIBackend)

    def require_credentials(self, handles):
        """Fail at startup, not mid-stage, when an endpoint's API key variable is unset."""
        if not self.needs_credentials:
            return
        for handle in handles:
            if handle.api_key_env and not os.environ.get(handle.api_key_env):
                raise GatewayConfigError(
                    f"environment variable {handle.api_key_env} is not set (API key for {handle.name})"
                )

    def _call(self, describe, fn):
        attempt = 0
        while True:
            attempt += 1
            with self._slots:
                with self._lock:
                    self.in_flight += 1
                    self.calls += 1
                    self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
                try:
                    return fn()
                except GatewayTransportError as exc:
                    error = exc
                finally:
                    with self._lock:
                        self.in_flight -= 1
            if attempt >= self.max_retries:
                raise GatewayTransportError(
                    f"{describe} failed after {attempt} attempts: {error}", attempts=attempt
                ) from error
            delay = self.backoff_base * (2 ** (attempt - 1)) * (1 + self._jitter.random() * 0.25)
            logger.warning("%s failed (attempt %d/%d), retrying in %.1fs: %s",
                           describe, attempt, self.max_retries, delay, error)
            self._sleep(delay)

    def _one(self, handle, prompt, params, index):
        key = completion_key(handle.name, prompt.text, params, index)
        if self.cache is not None:
            entry = self.cache.get(handle.name, key)
            if entry is not None:
                return Completion.from_dict(entry["completion"])
            if self.mode == GatewayMode.REPLAY:
                raise ReplayMissError(handle.name, key)
        completion = self._call(
            f"{handle.name} sample {index}",
            lambda: self.backend.complete(handle, prompt, params, index),
        )
        completion = replace(completion, cache_key=key)
        if self.cache is not None:
            self.cache.put(handle.name, key, {"index": index, "completion": completion.to_dict()})
        return completion

    def complete(self, handle, prompt, params, first_index=0):
        """Exactly ``params.n`` completions with sample indices ``first_index .. first_index+n-1``."""
        return [self._one(handle, prompt, params, first_index + i) for i in range(params.n)]

    def score_tokens(self, handle, prompt, continuation, top_logprobs=0):
        if not continuation:
            return []
        key = score_key(handle.name, prompt.text, continuation, top_logprobs)
        if self.cache is not None:
            entry = self.cache.get(handle.name, key)
            if entry is not None:
                return [TokenLogprob.from_list(item) for item in entry["tokens"]]
            if self.mode == GatewayMode.REPLAY:
                raise ReplayMissError(handle.name, key)
        tokens = self._call(
            f"{handle.name} scoring",
            lambda: self.backend.score_tokens(handle, prompt, continuation, top_logprobs),
        )
        if self.cache is not None:
            self.cache.put(handle.name, key, {"tokens": [t.to_list() for t in tokens]})
        return list(tokens)

    def map(self, fn, items):
        """Apply ``fn`` to every item concurrently; results keep the order of ``items``."""
        items = list(items)
        if len(items) <= 1 or self.max_in_flight == 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            return list(pool.map(fn, items))
