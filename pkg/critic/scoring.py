import logging
import math
import re
from dataclasses import dataclass, replace

from django.db import models

from chronopref.artifacts import iter_jsonl, write_jsonl_atomic
from chronopref.exceptions import DataError
from prompting.renderer import RenderError, format_question, render_judge_prompt
from prompting.templates import PromptKind

logger = logging.getLogger(__name__)

MIN_SCORE, MAX_SCORE = 0.0, 5.0

_MARKER = re.compile(r"(?i)score\s*:\s*\**\s*(-?\d+(?:\.\d+)?)?")


class ScoringFailed(DataError):
    pass


class SelectionStrategy(models.TextChoices):
    HIERARCHICAL = 'Hierarchical', 'Hierarchical temporal rubric'
    LLM_JUDGE_BASELINE = 'LlmJudgeBaseline', 'Generic self-rewarding judge'
    RANDOM = 'Random', 'Random pick'


def parse_score(judge_text):
    """Number after the final ``Score:`` marker, clamped to [0, 5]."""
    markers = list(_MARKER.finditer(judge_text or ""))
    if not markers or markers[-1].group(1) is None:
        return None
    value = float(markers[-1].group(1))
    clamped = min(max(value, MIN_SCORE), MAX_SCORE)
    if clamped != value:
        logger.warning("judge score %s outside [0, 5], clamped to %s", value, clamped)
    return clamped


@dataclass(frozen=True)
class ScoredResponse:
    instance_id: str
    candidate_index: int
    raw_scores: tuple
    mean_score: float
    judge_prompt_kind: PromptKind

    @classmethod
    def from_scores(cls, instance_id, candidate_index, raw_scores, kind):
        raw_scores = tuple(float(s) for s in raw_scores)
        if not raw_scores:
            raise ScoringFailed(f"{instance_id}#{candidate_index}: no scores to average")
        if any(not MIN_SCORE <= s <= MAX_SCORE for s in raw_scores):
            raise DataError(f"{instance_id}#{candidate_index}: raw scores must lie in [0, 5]")
        return cls(instance_id, candidate_index, raw_scores, math.fsum(raw_scores) / len(raw_scores), PromptKind(kind))

    def to_dict(self):
        return {
            "instance_id": self.instance_id,
            "candidate_index": self.candidate_index,
            "raw_scores": list(self.raw_scores),
            "mean_score": self.mean_score,
            "judge_prompt_kind": str(self.judge_prompt_kind),
        }

    @classmethod
    def from_dict(cls, data):
        return cls.from_scores(data["instance_id"], data["candidate_index"], data["raw_scores"], data["judge_prompt_kind"])


def score_candidate(gateway, judge, question, candidate_text, kind, k_samples, params,
                    instance_id="", candidate_index=0, gold=None, include_gold=False):
    """Average ``k_samples`` judge verdicts for one candidate.

    Each unparseable verdict is re-drawn once at a fresh sample index; verdicts
    still unparseable after that are dropped.
    """
    if k_samples < 1:
        raise DataError("k_samples must be at least 1")
    prompt = render_judge_prompt(
        kind, question, candidate_text, gold=gold, include_gold=include_gold, instance_id=instance_id
    )
    verdicts = gateway.complete(judge, prompt, replace(params, n=k_samples))
    scores = []
    retry_index = k_samples
    for verdict in verdicts:
        score = parse_score(verdict.text)
        if score is None:
            retried = gateway.complete(judge, prompt, replace(params, n=1), first_index=retry_index)[0]
            retry_index += 1
            score = parse_score(retried.text)
            if score is None:
                logger.warning("%s#%d: dropped an unparseable judge verdict", instance_id, candidate_index)
                continue
        scores.append(score)
    if not scores:
        raise ScoringFailed(f"{instance_id}#{candidate_index}: every judge verdict was unparseable")
    return ScoredResponse.from_scores(instance_id, candidate_index, scores, kind)


def judge_kind(strategy, is_correct):
    if SelectionStrategy(strategy) == SelectionStrategy.LLM_JUDGE_BASELINE:
        return PromptKind.JUDGE_GENERIC
    return PromptKind.JUDGE_CHOSEN if is_correct else PromptKind.JUDGE_REJECTED


def score_candidate_sets(gateway, judge, candidate_sets, instances, strategy, k_samples, params, include_gold=False):
    """Score every candidate of every partitioned set.

    Returns ``(scores, failed)`` where ``failed`` lists the (instance_id, index)
    pairs excluded from selection. The random strategy needs no scores.
    """
    if SelectionStrategy(strategy) == SelectionStrategy.RANDOM:
        return [], []
    jobs = []
    for candidate_set in candidate_sets:
        if not candidate_set.is_partitioned:
            raise DataError(f"{candidate_set.instance_id}: candidates must be aligned before judging")
        instance = instances[candidate_set.instance_id]
        for index, text in candidate_set.candidates:
            jobs.append((instance, index, text, judge_kind(strategy, index in candidate_set.correct_idx)))

    def run(job):
        instance, index, text, kind = job
        try:
            return score_candidate(
                gateway, judge, format_question(instance), text, kind, k_samples, params,
                instance_id=instance.instance_id, candidate_index=index,
                gold=instance.gold, include_gold=include_gold,
            )
        except (ScoringFailed, RenderError) as exc:
            logger.warning("%s", exc)
            return (instance.instance_id, index)

    results = gateway.map(run, jobs)
    scores = [r for r in results if isinstance(r, ScoredResponse)]
    failed = [r for r in results if not isinstance(r, ScoredResponse)]
    logger.info("scored %d candidates, %d excluded", len(scores), len(failed))
    return scores, failed


def save_scores(scores, path):
    ordered = sorted(scores, key=lambda s: (s.instance_id, s.candidate_index))
    return write_jsonl_atomic(path, [s.to_dict() for s in ordered])


def load_scores(path):
    return [ScoredResponse.from_dict(record) for _, record in iter_jsonl(path)]
