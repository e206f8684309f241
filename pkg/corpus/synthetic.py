"""Synthetic temporal corpora for offline runs and tests.

Every question is a clock-arithmetic item with four options; only the wording
prefix differs per task, which is all the pipeline needs.
"""

from pathlib import Path

from chronopref.artifacts import write_jsonl_atomic
from chronopref.seeding import stream_random

from .loader import Corpus, Instance, Option
from .taxonomy import TASKS, TASKS_BY_ID

LABELS = ("A", "B", "C", "D")


def _clock(minutes):
    minutes %= 24 * 60
    hour, minute = divmod(minutes, 60)
    suffix = "AM" if hour < 12 else "PM"
    return f"{(hour % 12) or 12}:{minute:02d} {suffix}"


def synthetic_instance(task, index, rng):
    start = rng.randrange(24 * 60)
    delta = rng.randrange(15, 14 * 60)
    answer = _clock(start + delta)
    distractors = set()
    while len(distractors) < 3:
        wrong = _clock(start + delta + rng.choice((-1, 1)) * rng.randrange(5, 180))
        if wrong != answer:
            distractors.add(wrong)
    texts = [answer] + sorted(distractors)
    rng.shuffle(texts)
    gold = LABELS[texts.index(answer)]
    hours, minutes = divmod(delta, 60)
    question = f"[{task.name}] What is {_clock(start)} + {hours}:{minutes:02d}?"
    return Instance(
        instance_id=f"{task.task_id}-{index:05d}",
        task_id=task.task_id,
        question=question,
        options=tuple(Option(label=label, text=text) for label, text in zip(LABELS, texts)),
        gold=gold,
    )


def build_synthetic_corpus(pool_sizes, seed=0):
    """``pool_sizes`` maps task_id to instance count; unknown ids raise KeyError."""
    corpus = Corpus()
    for task_id, size in pool_sizes.items():
        task = TASKS_BY_ID[task_id]
        corpus.register(task)
        rng = stream_random(seed, f"synthetic:{task_id}")
        for index in range(size):
            corpus.add(synthetic_instance(task, index, rng))
    return corpus


def uniform_pool_sizes(size, tasks=TASKS):
    return {task.task_id: size for task in tasks}


def write_corpus(corpus, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for task_id in sorted(corpus.tasks):
        write_jsonl_atomic(directory / f"{task_id}.jsonl", [i.to_dict() for i in corpus.instances[task_id]])
    return directory
