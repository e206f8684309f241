"""Token distribution shift between a base model and its tuned version.

The tuned model decodes greedily; at every position the base model scores the
same prefix and we look up where the tuned token sits among the base model's
top-k alternatives. Rank 1 is unshifted, ranks up to ``marginal_max`` are
marginal, anything lower is shifted. A token missing from the top-k counts
as rank k + 1.
"""

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from django.conf import settings
from django.db import models

from chronopref.artifacts import iter_jsonl, write_jsonl_atomic
from chronopref.exceptions import DataError
from llm_gateway.exceptions import CapabilityError
from llm_gateway.types import SamplingParams

logger = logging.getLogger(__name__)

TOP_SHIFTED = 200


class ShiftDomainError(DataError):
    pass


class ShiftClass(models.TextChoices):
    UNSHIFTED = 'Unshifted', 'Unshifted'
    MARGINAL = 'Marginal', 'Marginal'
    SHIFTED = 'Shifted', 'Shifted'


def classify_position(base_rank, marginal_max=3):
    if base_rank < 1:
        raise ShiftDomainError(f"base rank must be >= 1, got {base_rank}")
    if marginal_max < 1:
        raise ShiftDomainError(f"marginal_max must be >= 1, got {marginal_max}")
    if base_rank == 1:
        return ShiftClass.UNSHIFTED
    if base_rank <= marginal_max:
        return ShiftClass.MARGINAL
    return ShiftClass.SHIFTED


@dataclass(frozen=True)
class PositionRecord:
    prompt_id: str
    position: int
    tuned_token: str
    base_rank_of_tuned_token: int
    classification: ShiftClass

    def to_dict(self):
        return {
            "prompt_id": self.prompt_id,
            "position": self.position,
            "tuned_token": self.tuned_token,
            "base_rank_of_tuned_token": self.base_rank_of_tuned_token,
            "classification": str(self.classification),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            prompt_id=data.get("prompt_id", ""),
            position=int(data["position"]),
            tuned_token=data["tuned_token"],
            base_rank_of_tuned_token=int(data["base_rank_of_tuned_token"]),
            classification=ShiftClass(data["classification"]),
        )


@dataclass(frozen=True)
class ShiftReport:
    base: str
    tuned: str
    ratios: tuple
    top_shifted_tokens: tuple
    n_positions: int = 0
    marginal_max: int = 3
    token_labels: dict = field(default_factory=dict)

    @property
    def model_pair(self):
        return (self.base, self.tuned)

    def to_dict(self):
        return {
            "base": self.base,
            "tuned": self.tuned,
            "ratios": {str(c): r for c, r in zip(ShiftClass, self.ratios)},
            "top_shifted_tokens": [[token, count] for token, count in self.top_shifted_tokens],
            "n_positions": self.n_positions,
            "marginal_max": self.marginal_max,
            "token_labels": dict(sorted(self.token_labels.items())),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            base=data["base"],
            tuned=data["tuned"],
            ratios=tuple(data["ratios"][str(c)] for c in ShiftClass),
            top_shifted_tokens=tuple((token, count) for token, count in data["top_shifted_tokens"]),
            n_positions=data["n_positions"],
            marginal_max=data["marginal_max"],
            token_labels=dict(data.get("token_labels", {})),
        )


def base_rank(scored, tuned_token, top_k):
    rank = scored.rank_of(tuned_token)
    return top_k + 1 if rank is None or rank > top_k else rank


def analyze_prompt(gateway, base, tuned, prompt, marginal_max=3, top_k=5, max_tokens=256):
    greedy = SamplingParams.greedy(max_tokens=max_tokens)
    completion = gateway.complete(tuned, prompt, greedy)[0]
    scored = gateway.score_tokens(base, prompt, completion.text, top_logprobs=top_k)
    if scored and not any(s.top_alternatives for s in scored):
        raise CapabilityError(f"{base.name} returned no top-{top_k} alternatives")
    records = []
    for position, s in enumerate(scored):
        rank = base_rank(s, s.token, top_k)
        records.append(PositionRecord(prompt.instance_id, position, s.token, rank, classify_position(rank, marginal_max)))
    return records


def summarize(base_name, tuned_name, records, marginal_max=3, wordlists=None):
    """Ratios in percent and the most frequently shifted tokens.

    Tokens are counted with surrounding whitespace stripped; ties in the
    top list are broken lexicographically.
    """
    records = list(records)
    if not records:
        raise DataError(f"no token positions to summarize for {tuned_name}")
    counts = Counter(r.classification for r in records)
    total = len(records)
    ratios = tuple(100.0 * counts[c] / total for c in ShiftClass)

    shifted = Counter(r.tuned_token.strip() for r in records if r.classification == ShiftClass.SHIFTED)
    shifted.pop("", None)
    top = tuple(sorted(shifted.items(), key=lambda item: (-item[1], item[0]))[:TOP_SHIFTED])

    labels = {}
    for label, words in (wordlists or {}).items():
        for token, _ in top:
            if token.lower() in words:
                labels.setdefault(token, label)
    return ShiftReport(
        base=base_name,
        tuned=tuned_name,
        ratios=ratios,
        top_shifted_tokens=top,
        n_positions=total,
        marginal_max=marginal_max,
        token_labels=labels,
    )


def analyze(base, tuned, prompts, gateway, marginal_max=3, top_k=5, max_tokens=256, wordlists=None):
    """Shift report of ``tuned`` against ``base`` over ``prompts``, with its position records."""
    if top_k < marginal_max:
        raise ShiftDomainError(f"top_k ({top_k}) must cover marginal_max ({marginal_max})")
    per_prompt = gateway.map(
        lambda prompt: analyze_prompt(gateway, base, tuned, prompt, marginal_max, top_k, max_tokens), list(prompts)
    )
    records = [record for batch in per_prompt for record in batch]
    report = summarize(base.name, tuned.name, records, marginal_max, wordlists)
    logger.info(
        "%s vs %s: %.1f%% unshifted, %.1f%% marginal, %.1f%% shifted over %d positions",
        base.name, tuned.name, *report.ratios, report.n_positions,
    )
    return report, records


def load_wordlists(directory=None):
    """``{label: set of lower-cased words}`` from ``<directory>/<label>.txt``, one token per line."""
    directory = Path(directory or settings.CHRONOPREF["wordlist_dir"])
    wordlists = {}
    for path in sorted(directory.glob("*.txt")):
        words = {line.strip().lower() for line in path.read_text(encoding="utf-8").splitlines()}
        wordlists[path.stem] = {w for w in words if w and not w.startswith("#")}
    return wordlists


def save_records(records, path):
    return write_jsonl_atomic(path, [r.to_dict() for r in records])


def load_records(path):
    return [PositionRecord.from_dict(record) for _, record in iter_jsonl(path)]


def render_json(report):
    return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"


def render_markdown(report):
    unshifted, marginal, shifted = report.ratios
    lines = [
        f"## {report.tuned} vs {report.base}",
        "",
        "| Unshifted | Marginal | Shifted | Positions |",
        "|---|---|---|---|",
        f"| {unshifted:.1f}% | {marginal:.1f}% | {shifted:.1f}% | {report.n_positions} |",
        "",
        f"Marginal covers base ranks 2 to {report.marginal_max}.",
        "",
        "| Token | Shifts | Label |",
        "|---|---|---|",
    ]
    lines += [f"| {token} | {count} | {report.token_labels.get(token, '')} |" for token, count in report.top_shifted_tokens]
    return "\n".join(lines) + "\n"