from dataclasses import asdict, dataclass, field, replace

from django.core.exceptions import ValidationError
from django.core.validators import URLValidator
from django.db import models

from .exceptions import GatewayConfigError

_validate_url = URLValidator(schemes=("http", "https"))


class ModelRole(models.TextChoices):
    POLICY = 'Policy', 'Policy'
    REFERENCE = 'Reference', 'Reference'
    JUDGE = 'Judge', 'Judge'
    TEACHER = 'Teacher', 'Teacher'


@dataclass(frozen=True)
class ModelHandle:
    name: str
    endpoint_url: str
    api_key_env: str = ""
    role: ModelRole = ModelRole.POLICY

    def __post_init__(self):
        if not self.name:
            raise GatewayConfigError("model handle needs a name")
        try:
            _validate_url(self.endpoint_url)
        except ValidationError:
            raise GatewayConfigError(
                f"endpoint for {self.name} must be an absolute http(s) URL, got {self.endpoint_url!r}"
            ) from None
        object.__setattr__(self, "role", ModelRole(self.role))

    def renamed(self, name):
        return replace(self, name=name)


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.8
    top_p: float = 0.95
    n: int = 1
    max_tokens: int = 512
    logprobs: bool = False
    top_logprobs: int = 0
    seed: int | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise GatewayConfigError(f"temperature must be >= 0, got {self.temperature}")
        if not 0 < self.top_p <= 1:
            raise GatewayConfigError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.n < 1:
            raise GatewayConfigError(f"n must be >= 1, got {self.n}")
        if self.max_tokens < 1:
            raise GatewayConfigError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.temperature == 0 and self.n != 1:
            raise GatewayConfigError("greedy decoding (temperature 0) draws exactly one sample")
        if not 0 <= self.top_logprobs <= 20:
            raise GatewayConfigError(f"top_logprobs must be in [0, 20], got {self.top_logprobs}")

    @classmethod
    def greedy(cls, max_tokens=512, logprobs=False, top_logprobs=0):
        return cls(temperature=0.0, top_p=1.0, n=1, max_tokens=max_tokens, logprobs=logprobs, top_logprobs=top_logprobs)

    @property
    def is_greedy(self):
        return self.temperature == 0

    def cache_fields(self):
        """Everything that shapes one sample; ``n`` is not part of it."""
        fields = asdict(self)
        del fields["n"]
        return fields


@dataclass(frozen=True)
class TokenLogprob:
    token: str
    logprob: float
    top_alternatives: tuple = ()

    def rank_of(self, token):
        """1-based rank of ``token`` among the alternatives, or None when absent."""
        ordered = sorted(self.top_alternatives, key=lambda alt: -alt[1])
        for position, (candidate, _) in enumerate(ordered, start=1):
            if candidate == token:
                return position
        return None

    def to_list(self):
        return [self.token, self.logprob, [[t, lp] for t, lp in self.top_alternatives]]

    @classmethod
    def from_list(cls, data):
        token, logprob, alternatives = data
        return cls(token, float(logprob), tuple((t, float(lp)) for t, lp in alternatives))


def sequence_logprob(tokens):
    return float(sum(token.logprob for token in tokens))


@dataclass(frozen=True)
class Completion:
    text: str
    token_logprobs: tuple = None
    usage: dict = field(default_factory=dict)
    cache_key: str = ""

    def to_dict(self):
        return {
            "text": self.text,
            "token_logprobs": None if self.token_logprobs is None else [t.to_list() for t in self.token_logprobs],
            "usage": dict(self.usage),
            "cache_key": self.cache_key,
        }

    @classmethod
    def from_dict(cls, data):
        token_logprobs = data.get("token_logprobs")
        return cls(
            text=data["text"],
            token_logprobs=None if token_logprobs is None else tuple(TokenLogprob.from_list(t) for t in token_logprobs),
            usage=dict(data.get("usage") or {}),
            cache_key=data.get("cache_key", ""),
        )
