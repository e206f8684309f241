import logging
from dataclasses import dataclass, field

from chronopref.artifacts import read_json, write_json_atomic
from chronopref.exceptions import DataError
from chronopref.seeding import stream_random

logger = logging.getLogger(__name__)

EVAL_SIZE = 100
TRAIN_CAP = 5000

# Math-instruction volumes used when studying how SFT data size affects the base model.
MATH_INSTRUCTION_VOLUMES = (0, 50_000, 100_000, 150_000, 180_000)


@dataclass(frozen=True)
class SplitManifest:
    task_id: str
    eval_ids: tuple = ()
    train_ids: tuple = ()
    seed: int = 0

    def to_dict(self):
        return {
            "task_id": self.task_id,
            "eval_ids": list(self.eval_ids),
            "train_ids": list(self.train_ids),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            task_id=data["task_id"],
            eval_ids=tuple(data["eval_ids"]),
            train_ids=tuple(data["train_ids"]),
            seed=int(data["seed"]),
        )


@dataclass
class SplitSet:
    seed: int
    manifests: list = field(default_factory=list)

    def by_task(self):
        return {manifest.task_id: manifest for manifest in self.manifests}

    def train_total(self):
        return sum(len(manifest.train_ids) for manifest in self.manifests)

    def eval_total(self):
        return sum(len(manifest.eval_ids) for manifest in self.manifests)

    def to_dict(self):
        return {"seed": self.seed, "splits": [manifest.to_dict() for manifest in self.manifests]}

    @classmethod
    def from_dict(cls, data):
        return cls(seed=int(data["seed"]), manifests=[SplitManifest.from_dict(item) for item in data["splits"]])


def make_splits(corpus, seed, eval_size=EVAL_SIZE, train_cap=TRAIN_CAP):
    """Per task: one seeded shuffle, the first ``eval_size`` ids held out for
    evaluation, the remainder capped at ``train_cap`` by uniform sampling."""
    if not corpus.tasks:
        raise DataError("cannot split an empty corpus")

    manifests = []
    for task_id in sorted(corpus.tasks):
        ids = sorted(instance.instance_id for instance in corpus.instances[task_id])
        if not ids:
            logger.warning("Task %s has no instances; its split is empty", task_id)
            manifests.append(SplitManifest(task_id=task_id, seed=seed))
            continue

        rng = stream_random(seed, f"split:{task_id}")
        rng.shuffle(ids)
        if len(ids) < eval_size:
            logger.warning(
                "Task %s has only %d instances; all go to evaluation and none to training", task_id, len(ids)
            )
            manifests.append(SplitManifest(task_id=task_id, eval_ids=tuple(ids), seed=seed))
            continue

        eval_ids, rest = ids[:eval_size], ids[eval_size:]
        train_ids = rest if len(rest) <= train_cap else rng.sample(rest, train_cap)
        manifests.append(SplitManifest(task_id=task_id, eval_ids=tuple(eval_ids), train_ids=tuple(train_ids), seed=seed))

    return SplitSet(seed=seed, manifests=manifests)


def sample_volume(pool, k, seed):
    """Uniform sample of ``k`` items from ``pool`` without replacement."""
    pool = sorted(pool)
    if k < 0 or k > len(pool):
        raise DataError(f"cannot sample {k} items from a pool of {len(pool)}")
    return stream_random(seed, f"volume:{k}").sample(pool, k)


def volume_ladder(pool, seed, volumes=MATH_INSTRUCTION_VOLUMES):
    """Nested subsets of ``pool``, one per requested volume.

    The largest rung is drawn with ``sample_volume``; every smaller rung is a
    prefix of it, so each rung contains all the rungs below it.
    """
    volumes = sorted(set(volumes))
    if not volumes:
        return {}
    top = sample_volume(pool, volumes[-1], seed)
    return {k: top[:k] for k in volumes}


def save_splits(split_set, path):
    return write_json_atomic(path, split_set.to_dict())


def load_splits(path):
    return SplitSet.from_dict(read_json(path))
