"""Backends answer one sample at a time; the gateway owns fan-out, caching and retries.

A backend implements ``complete(handle, prompt, params, index) -> Completion``
and ``score_tokens(handle, prompt, continuation, top_logprobs) -> [TokenLogprob]``.
"""

import hashlib
import logging
import os
import re
import threading

import numpy as np
import openai

from chronopref.seeding import stream_generator

from .exceptions import CapabilityError, GatewayConfigError, GatewayTransportError
from .types import Completion, TokenLogprob

logger = logging.getLogger(__name__)

_TOKEN = re.compile(r"\s*\S+")


def tokenize(text):
    """Whitespace-attached tokens; ``"".join(tokenize(t)) == t`` up to trailing space."""
    return _TOKEN.findall(text)


def _translate(exc, handle):
    if isinstance(exc, openai.APIConnectionError):
        return GatewayTransportError(f"{handle.name} at {handle.endpoint_url}: {exc}")
    if isinstance(exc, openai.APIStatusError):
        status = exc.status_code
        if status in (408, 409, 429) or status >= 500:
            return GatewayTransportError(f"{handle.name} answered HTTP {status}")
        return GatewayConfigError(f"{handle.name} rejected the request (HTTP {status}): {exc.message}")
    return exc


class OpenAIBackend:
    """OpenAI-compatible endpoint: chat completions for sampling, legacy completions for scoring."""

    def __init__(self, timeout=60.0):
        self.timeout = timeout
        self._clients = {}
        self._lock = threading.Lock()

    def client(self, handle):
        key = (handle.endpoint_url, handle.api_key_env)
        with self._lock:
            if key not in self._clients:
                api_key = os.getenv(handle.api_key_env, "") if handle.api_key_env else ""
                self._clients[key] = openai.OpenAI(
                    api_key=api_key or "EMPTY",
                    base_url=handle.endpoint_url,
                    timeout=self.timeout,
                    max_retries=0,
                )
            return self._clients[key]

    def complete(self, handle, prompt, params, index):
        kwargs = {
            "model": handle.name,
            "messages": prompt.messages(),
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
            "n": 1,
        }
        if params.seed is not None:
            kwargs["seed"] = params.seed + index
        if params.logprobs:
            kwargs["logprobs"] = True
            if params.top_logprobs:
                kwargs["top_logprobs"] = params.top_logprobs
        try:
            response = self.client(handle).chat.completions.create(**kwargs)
        except openai.OpenAIError as exc:
            raise _translate(exc, handle) from exc

        choice = response.choices[0]
        token_logprobs = None
        if params.logprobs:
            content = choice.logprobs.content if choice.logprobs else None
            if not content:
                raise CapabilityError(f"{handle.name} returned no token logprobs")
            token_logprobs = tuple(
                TokenLogprob(
                    item.token,
                    min(item.logprob, 0.0),
                    tuple((alt.token, min(alt.logprob, 0.0)) for alt in item.top_logprobs or ()),
                )
                for item in content
            )
        usage = {}
        if response.usage:
            usage = {
                "prompt_tokens": response.usage.prompt_tokens,
                "completion_tokens": response.usage.completion_tokens,
            }
        return Completion(text=choice.message.content or "", token_logprobs=token_logprobs, usage=usage)

    def score_tokens(self, handle, prompt, continuation, top_logprobs=0):
        try:
            response = self.client(handle).completions.create(
                model=handle.name,
                prompt=prompt.text + continuation,
                max_tokens=0,
                echo=True,
                logprobs=max(top_logprobs, 1),
            )
        except openai.APIStatusError as exc:
            if exc.status_code in (400, 404):
                raise CapabilityError(f"{handle.name} does not expose echoed logprobs (HTTP {exc.status_code})") from exc
            raise _translate(exc, handle) from exc
        except openai.OpenAIError as exc:
            raise _translate(exc, handle) from exc

        logprobs = response.choices[0].logprobs
        if logprobs is None or not logprobs.tokens:
            raise CapabilityError(f"{handle.name} returned no echoed logprobs")
        start = len(prompt.text)
        tops = logprobs.top_logprobs or [None] * len(logprobs.tokens)
        scored = []
        for token, logprob, offset, top in zip(logprobs.tokens, logprobs.token_logprobs, logprobs.text_offset, tops):
            if offset < start or logprob is None:
                continue
            alternatives = tuple(sorted(((t, min(lp, 0.0)) for t, lp in (top or {}).items()), key=lambda a: -a[1]))
            scored.append(TokenLogprob(token, min(logprob, 0.0), alternatives[:top_logprobs]))
        return scored


def _unit(*parts):
    """Deterministic uniform value in [0, 1) for a tuple of parts."""
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).hexdigest()
    return int(digest[:13], 16) / float(16 ** 13)


def _pick(options, *parts):
    return options[int(_unit(*parts) * len(options))]


_REASONING_STEPS = (
    "First, convert every time expression into minutes.",
    "The event happens after the reference point, so we move forward in time.",
    "Adding the hours and the minutes separately keeps the clock arithmetic simple.",
    "A week has seven days, so the weekday repeats every 7 days.",
    "The duration is the difference between the end time and the start time.",
    "Events of this kind typically last about an hour.",
    "This usually happens once a day, in the morning.",
    "The second event must come before the first one ends.",
    "Counting the months forward from January gives the result.",
    "We subtract the earlier year from the later year.",
)

_FILLER = (
    " the", " time", " day", " hours", " minutes", " week", " before", " after", " year",
    " month", " add", " sum", " total", " equals", " then", " so", " noon", " later", " earlier",
)

_END = " </s>"


class MockBackend:
    """Deterministic synthetic model for offline runs.

    Outputs depend only on (model name, prompt text, sample index). Prompts
    rendered for a known instance get an answer that is correct with
    probability ``accuracy``, or correct exactly for ``echo_ids`` when given.
    Judge prompts get a ``Score: k`` verdict, occasionally an unparseable one.
    Anything else gets a short deterministic passage.
    """

    def __init__(self, answer_key=None, accuracy=0.6, echo_ids=None, unparseable_rate=0.05):
        self.answer_key = dict(answer_key or {})
        self.accuracy = accuracy
        self.echo_ids = None if echo_ids is None else frozenset(echo_ids)
        self.unparseable_rate = unparseable_rate

    @classmethod
    def from_instances(cls, instances, **kwargs):
        return cls({i.instance_id: (i.gold, i.option_labels) for i in instances}, **kwargs)

    def respond(self, model, prompt, index):
        if prompt.template_id.startswith("judge"):
            return self._verdict(model, prompt, index)
        entry = self.answer_key.get(prompt.instance_id)
        if entry is None:
            return self._passage(model, prompt, index)
        return self._answer(model, prompt, index, *entry)

    def _correct(self, model, prompt, index):
        if self.echo_ids is not None:
            return prompt.instance_id in self.echo_ids
        return _unit(model, prompt.text, index, "correct") < self.accuracy

    def _answer(self, model, prompt, index, gold, labels):
        steps = 1 + int(_unit(model, prompt.text, index, "steps") * 3)
        body = " ".join(
            _pick(_REASONING_STEPS, model, prompt.text, index, "step", s) for s in range(steps)
        )
        if self._correct(model, prompt, index):
            label = gold
        elif labels:
            label = _pick([l for l in labels if l != gold] or [gold], model, prompt.text, index, "wrong")
        else:
            label = "never" if gold == "some other time" else "some other time"
        return f"{body} The answer is ({label})." if labels else f"{body} The answer is {label}."

    def _verdict(self, model, prompt, index):
        if _unit(model, prompt.text, index, "verdict") < self.unparseable_rate:
            return "The response is hard to rate without more context."
        score = int(_unit(model, prompt.text, index, "score") * 6)
        return f"The response meets {score} of the five criteria.\nScore: {score}"

    def _passage(self, model, prompt, index):
        length = 12 + int(_unit(model, prompt.text, index, "length") * 12)
        words = [_pick(_FILLER, model, prompt.text, index, "word", j) for j in range(length)]
        return "".join(words).lstrip()

    def _alternatives(self, model, prompt_text, position, own, placed=None, top_k=0):
        """Top-k list with ``own`` at rank 1 and ``placed = (token, rank)`` at its rank when it fits."""
        if not top_k:
            return ()
        start = int(_unit(model, prompt_text, position, "alternatives") * len(_FILLER))
        taken = {own, placed[0] if placed else own}
        pool = [token for token in _FILLER[start:] + _FILLER[:start] if token not in taken]
        alternatives = [(own, -0.05)]
        for rank in range(2, top_k + 1):
            if placed is not None and placed[1] == rank:
                token = placed[0]
            else:
                token = pool.pop(0) if pool else f" alt{rank}"
            alternatives.append((token, -0.6 * rank))
        return tuple(alternatives)

    def complete(self, handle, prompt, params, index):
        text = self.respond(handle.name, prompt, index)
        tokens = tokenize(text)
        token_logprobs = None
        if params.logprobs:
            token_logprobs = tuple(
                TokenLogprob(token, -0.05, self._alternatives(handle.name, prompt.text, j, token, top_k=params.top_logprobs))
                for j, token in enumerate(tokens)
            )
        usage = {"prompt_tokens": len(tokenize(prompt.text)), "completion_tokens": len(tokens)}
        return Completion(text=text, token_logprobs=token_logprobs, usage=usage)

    def score_tokens(self, handle, prompt, continuation, top_logprobs=0):
        own = tokenize(self.respond(handle.name, prompt, 0))
        scored = []
        for j, token in enumerate(tokenize(continuation)):
            own_token = own[j] if j < len(own) else _END
            if token == own_token:
                rank = 1
                alternatives = self._alternatives(handle.name, prompt.text, j, own_token, top_k=top_logprobs)
            else:
                rank = 2 + int(_unit(handle.name, prompt.text, j, token, "rank") * 5)
                alternatives = self._alternatives(
                    handle.name, prompt.text, j, own_token, placed=(token, rank), top_k=top_logprobs
                )
            scored.append(TokenLogprob(token, -0.05 if rank == 1 else -0.6 * rank, alternatives))
        return scored


class ToyPolicyBackend:
    """Serves trained toy policies by model name; other names go to ``fallback``."""

    def __init__(self, policies, fallback=None):
        self.policies = dict(policies)
        self.fallback = fallback

    def _policy(self, handle):
        policy = self.policies.get(handle.name)
        if policy is None and self.fallback is None:
            raise GatewayConfigError(f"no toy policy is served under the name {handle.name}")
        return policy

    def _alternatives(self, policy, logprobs, top_k):
        if not top_k:
            return ()
        order = np.argsort(-logprobs, kind="stable")[:top_k]
        return tuple((policy.vocab[i], float(logprobs[i])) for i in order)

    def complete(self, handle, prompt, params, index):
        policy = self._policy(handle)
        if policy is None:
            return self.fallback.complete(handle, prompt, params, index)
        rng = stream_generator(params.seed or 0, f"toy:{handle.name}:{prompt.text}:{index}")
        tokens = policy.generate(prompt.text, params.max_tokens, params.temperature, rng)
        token_logprobs = None
        if params.logprobs:
            entries, prev = [], policy.BOS
            for token in tokens:
                logprobs = policy.next_token_logprobs(prompt.text, prev)
                entries.append(TokenLogprob(
                    token,
                    float(logprobs[policy.token_id(token)]),
                    self._alternatives(policy, logprobs, params.top_logprobs),
                ))
                prev = token
            token_logprobs = tuple(entries)
        return Completion(
            text=" ".join(tokens),
            token_logprobs=token_logprobs,
            usage={"prompt_tokens": len(prompt.text.split()), "completion_tokens": len(tokens)},
        )

    def score_tokens(self, handle, prompt, continuation, top_logprobs=0):
        policy = self._policy(handle)
        if policy is None:
            return self.fallback.score_tokens(handle, prompt, continuation, top_logprobs)
        scored, prev = [], policy.BOS
        for token in policy.tokenize(continuation):
            logprobs = policy.next_token_logprobs(prompt.text, prev)
            scored.append(TokenLogprob(
                token,
                float(logprobs[policy.token_id(token)]),
                self._alternatives(policy, logprobs, top_logprobs),
            ))
            prev = token
        return scored
