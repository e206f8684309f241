"""Prompt template files and exemplars.

A template file is a small header followed by role sections::

    ---
    template_id: few_shot
    kind: FewShot
    ---
    [[system]]
    ...
    [[user]]
    ... {{ question }} ...

Section bodies use the Django template language, so placeholders are
``{{ name }}`` markers and exemplar blocks are ``{% for %}`` loops.
"""

import re
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

from django.conf import settings
from django.db import models

from chronopref.artifacts import iter_jsonl
from chronopref.exceptions import DataError

_SECTION = re.compile(r"^\[\[(system|user|assistant)\]\][ \t]*$", re.MULTILINE)


class PromptKind(models.TextChoices):
    FEW_SHOT = 'FewShot', 'Few-shot'
    COT = 'CoT', 'Chain of thought'
    MATH_COT = 'MathCoT', 'Math chain of thought'
    JUDGE_CHOSEN = 'JudgeChosen', 'Chosen reward judge'
    JUDGE_REJECTED = 'JudgeRejected', 'Rejected reward judge'
    JUDGE_GENERIC = 'JudgeGeneric', 'Generic self-rewarding judge'


EVAL_KINDS = (PromptKind.FEW_SHOT, PromptKind.COT, PromptKind.MATH_COT)
JUDGE_KINDS = (PromptKind.JUDGE_CHOSEN, PromptKind.JUDGE_REJECTED, PromptKind.JUDGE_GENERIC)

# Template a kind resolves to; other templates of the same kind are reached through get().
KIND_TEMPLATE_IDS = {
    PromptKind.FEW_SHOT: "few_shot",
    PromptKind.COT: "cot",
    PromptKind.MATH_COT: "math_cot",
    PromptKind.JUDGE_CHOSEN: "judge_chosen",
    PromptKind.JUDGE_REJECTED: "judge_rejected",
    PromptKind.JUDGE_GENERIC: "judge_generic",
}


class Role(models.TextChoices):
    SYSTEM = 'system', 'System'
    USER = 'user', 'User'
    ASSISTANT = 'assistant', 'Assistant'


class TemplateFormatError(DataError):
    pass


@dataclass(frozen=True)
class Exemplar:
    question: str
    answer: str
    rationale: str | None = None

    @classmethod
    def from_dict(cls, data):
        return cls(question=data["question"], answer=data["answer"], rationale=data.get("rationale"))


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    kind: PromptKind
    sections: tuple
    exemplars: tuple = field(default=())

    @property
    def body(self):
        return "".join(f"[[{role}]]\n{text}" for role, text in self.sections)

    def with_exemplars(self, exemplars):
        return replace(self, exemplars=tuple(exemplars))


def parse_template(text, source="<string>"):
    if not text.startswith("---"):
        raise TemplateFormatError(f"{source}: missing '---' header")
    try:
        _, header, body = text.split("---\n", 2)
    except ValueError:
        raise TemplateFormatError(f"{source}: unterminated header") from None

    meta = {}
    for line in header.splitlines():
        if line.strip():
            key, _, value = line.partition(":")
            meta[key.strip()] = value.strip()
    try:
        kind = PromptKind(meta["kind"])
        template_id = meta["template_id"]
    except (KeyError, ValueError) as exc:
        raise TemplateFormatError(f"{source}: header needs template_id and a valid kind ({exc})") from None

    markers = list(_SECTION.finditer(body))
    if not markers:
        sections = ((Role.USER, body),)
    else:
        sections = tuple(
            (Role(match.group(1)), body[match.end() + 1: markers[i + 1].start() if i + 1 < len(markers) else len(body)])
            for i, match in enumerate(markers)
        )
    return PromptTemplate(template_id=template_id, kind=kind, sections=sections)


def load_template(path):
    path = Path(path)
    return parse_template(path.read_text(encoding="utf-8"), source=str(path))


class TemplateLibrary:
    """Templates in a directory, addressed by template_id."""

    def __init__(self, directory=None):
        self.directory = Path(directory or settings.CHRONOPREF["template_dir"])
        self._templates = None

    def _load(self):
        if self._templates is None:
            self._templates = {}
            for path in sorted(self.directory.glob("*.txt")):
                template = load_template(path)
                self._templates[template.template_id] = template
        return self._templates

    def get(self, template_id):
        try:
            return self._load()[template_id]
        except KeyError:
            raise TemplateFormatError(
                f"no template {template_id!r} in {self.directory} (have: {', '.join(sorted(self._load()))})"
            ) from None

    def for_kind(self, kind):
        template = self.get(KIND_TEMPLATE_IDS[PromptKind(kind)])
        if template.kind != kind:
            raise TemplateFormatError(f"template {template.template_id!r} is {template.kind}, expected {kind}")
        return template


@lru_cache(maxsize=None)
def default_library():
    return TemplateLibrary()


def load_exemplars(path):
    return [Exemplar.from_dict(record) for _, record in iter_jsonl(path)]
