import logging
from dataclasses import dataclass

from chronopref.artifacts import iter_jsonl, write_jsonl_atomic
from chronopref.exceptions import DataError
from chronopref.seeding import stream_random
from sampler.extraction import align

from .scoring import SelectionStrategy

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PreferencePair:
    instance_id: str
    prompt_text: str
    chosen_text: str
    rejected_text: str
    chosen_score: float
    rejected_score: float
    strategy: SelectionStrategy
    chosen_index: int | None = None
    rejected_index: int | None = None

    def to_dict(self):
        return {
            "instance_id": self.instance_id,
            "prompt": self.prompt_text,
            "chosen": self.chosen_text,
            "rejected": self.rejected_text,
            "chosen_score": self.chosen_score,
            "rejected_score": self.rejected_score,
            "strategy": str(self.strategy),
            "chosen_index": self.chosen_index,
            "rejected_index": self.rejected_index,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            instance_id=data["instance_id"],
            prompt_text=data["prompt"],
            chosen_text=data["chosen"],
            rejected_text=data["rejected"],
            chosen_score=data.get("chosen_score"),
            rejected_score=data.get("rejected_score"),
            strategy=SelectionStrategy(data["strategy"]),
            chosen_index=data.get("chosen_index"),
            rejected_index=data.get("rejected_index"),
        )


def _top(indices, means):
    """Highest mean; ties go to the lowest candidate index."""
    return min(indices, key=lambda index: (-means[index], index))


def select_pair(candidate_set, scores, strategy, seed):
    if not candidate_set.is_partitioned:
        raise DataError(f"{candidate_set.instance_id}: candidates must be aligned before pairing")
    strategy = SelectionStrategy(strategy)
    positives = sorted(candidate_set.correct_idx)
    negatives = sorted(candidate_set.wrong_idx)
    if not positives or not negatives:
        return None

    if strategy == SelectionStrategy.RANDOM:
        rng = stream_random(seed, f"pair:{candidate_set.instance_id}")
        chosen, rejected = rng.choice(positives), rng.choice(negatives)
        chosen_score = rejected_score = None
    else:
        means = {s.candidate_index: s.mean_score for s in scores if s.instance_id == candidate_set.instance_id}
        positives = [i for i in positives if i in means]
        negatives = [i for i in negatives if i in means]
        if not positives or not negatives:
            return None
        chosen, rejected = _top(positives, means), _top(negatives, means)
        chosen_score, rejected_score = means[chosen], means[rejected]

    return PreferencePair(
        instance_id=candidate_set.instance_id,
        prompt_text=candidate_set.prompt,
        chosen_text=candidate_set.text(chosen),
        rejected_text=candidate_set.text(rejected),
        chosen_score=chosen_score,
        rejected_score=rejected_score,
        strategy=strategy,
        chosen_index=chosen,
        rejected_index=rejected,
    )


def select_pairs(candidate_sets, scores, strategy, seed):
    by_instance = {}
    for score in scores:
        by_instance.setdefault(score.instance_id, []).append(score)
    pairs = []
    for candidate_set in sorted(candidate_sets, key=lambda s: s.instance_id):
        pair = select_pair(candidate_set, by_instance.get(candidate_set.instance_id, []), strategy, seed)
        if pair is not None:
            pairs.append(pair)
    logger.info("%d pairs from %d instances (%s)", len(pairs), len(candidate_sets), strategy)
    return pairs


def verify_pairs(pairs, instances):
    """Re-check every pair against gold: chosen must align, rejected must not."""
    for pair in pairs:
        instance = instances[pair.instance_id]
        if not align(pair.chosen_text, instance) or align(pair.rejected_text, instance):
            raise DataError(f"{pair.instance_id}: pair does not respect the gold partition")


def save_pairs(pairs, path):
    return write_jsonl_atomic(path, [p.to_dict() for p in sorted(pairs, key=lambda p: p.instance_id)])


def load_pairs(path):
    pairs = []
    for line_no, record in iter_jsonl(path):
        try:
            pairs.append(PreferencePair.from_dict(record))
        except (KeyError, ValueError) as exc:
            raise DataError(f"{path}:{line_no}: bad preference pair ({exc})") from exc
    return pairs
