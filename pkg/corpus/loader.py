import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from chronopref.artifacts import iter_jsonl
from chronopref.exceptions import DataError

from .taxonomy import AnswerFormat, TASKS_BY_ID

logger = logging.getLogger(__name__)

_WHITESPACE = re.compile(r"\s+")


class CorpusLoadError(DataError):
    pass


def normalize_text(value):
    """Canonical comparison form for free-text answers."""
    return _WHITESPACE.sub(" ", (value or "").strip().lower())


@dataclass(frozen=True)
class Option:
    label: str
    text: str


@dataclass(frozen=True)
class Instance:
    instance_id: str
    task_id: str
    question: str
    options: tuple = ()
    gold: str = ""

    @property
    def option_labels(self):
        return tuple(option.label for option in self.options)

    def to_dict(self):
        return {
            "instance_id": self.instance_id,
            "task_id": self.task_id,
            "question": self.question,
            "options": [{"label": o.label, "text": o.text} for o in self.options],
            "gold": self.gold,
        }

    @classmethod
    def from_dict(cls, data, task):
        """Build and validate an instance against its task's answer format."""
        missing = [key for key in ("instance_id", "task_id", "question", "gold") if key not in data]
        if missing:
            raise ValueError(f"missing field(s): {', '.join(missing)}")

        options = tuple(Option(label=str(o["label"]), text=str(o["text"])) for o in data.get("options") or [])
        labels = [option.label for option in options]
        if len(set(labels)) != len(labels):
            raise ValueError("option labels must be unique within an instance")

        gold = str(data["gold"])
        if task.answer_format == AnswerFormat.MULTIPLE_CHOICE:
            if gold not in labels:
                raise ValueError(f"gold {gold!r} is not one of the option labels {labels}")
        else:
            gold = normalize_text(gold)

        return cls(
            instance_id=str(data["instance_id"]),
            task_id=str(data["task_id"]),
            question=str(data["question"]),
            options=options,
            gold=gold,
        )


@dataclass
class Corpus:
    """Registry of the tasks present in a corpus directory and their instances."""

    tasks: dict = field(default_factory=dict)
    instances: dict = field(default_factory=dict)

    def register(self, task):
        self.tasks.setdefault(task.task_id, task)
        self.instances.setdefault(task.task_id, [])

    def add(self, instance):
        self.instances[instance.task_id].append(instance)

    def counts(self):
        return {task_id: len(self.instances[task_id]) for task_id in sorted(self.tasks)}

    def all_instances(self):
        for task_id in sorted(self.instances):
            yield from self.instances[task_id]

    def index(self):
        return {instance.instance_id: instance for instance in self.all_instances()}

    def __len__(self):
        return sum(len(items) for items in self.instances.values())


def _records(file_path):
    try:
        yield from iter_jsonl(file_path)
    except DataError as exc:
        raise CorpusLoadError(str(exc)) from exc


def load_corpus(path):
    """Load every *.jsonl file under ``path`` into a Corpus.

    A file named ``<task_id>.jsonl`` registers that task even when empty.
    """
    path = Path(path)
    if not path.is_dir():
        raise CorpusLoadError(f"corpus directory not found: {path}")

    corpus = Corpus()
    seen_ids = {}
    for file_path in sorted(path.glob("*.jsonl")):
        stem_task = TASKS_BY_ID.get(file_path.stem)
        if stem_task is not None:
            corpus.register(stem_task)

        for line_no, record in _records(file_path):
            task = TASKS_BY_ID.get(record.get("task_id"))
            if task is None:
                raise CorpusLoadError(f"{file_path}:{line_no}: unknown task_id {record.get('task_id')!r}")
            try:
                instance = Instance.from_dict(record, task)
            except (KeyError, TypeError, ValueError) as exc:
                raise CorpusLoadError(f"{file_path}:{line_no}: {exc}") from exc
            if instance.instance_id in seen_ids:
                raise CorpusLoadError(
                    f"{file_path}:{line_no}: duplicate instance_id {instance.instance_id!r} "
                    f"(first seen in {seen_ids[instance.instance_id]})"
                )
            seen_ids[instance.instance_id] = f"{file_path.name}:{line_no}"
            corpus.register(task)
            corpus.add(instance)

    for task_id, count in corpus.counts().items():
        logger.info("Loaded %d instances for %s", count, task_id)
    return corpus
