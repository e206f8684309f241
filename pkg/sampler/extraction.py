"""Final-answer extraction and gold alignment.

Multiple choice: the last ``answer is (X)`` / ``Answer: X`` statement wins;
a parenthesized label restated later in that same sentence overrides it.
Without an anchored statement, the last standalone option label counts.
Free text: the remainder of the last ``answer is`` sentence, or the last
non-empty line, normalized.
"""

import re

from corpus.loader import normalize_text
from corpus.taxonomy import AnswerFormat, TASKS_BY_ID

_ANCHORED = re.compile(
    r"(?i:answer(?:\s+is|\s*:))\s*:?\s*(?i:(?:option|choice)\s+)?"
    r"(?:\(\s*([A-Za-z])\s*\)|([A-Z])(?![A-Za-z0-9]))"
)
_STANDALONE = re.compile(
    r"\(\s*([A-Za-z])\s*\)"
    r"|(?i:option|choice)\s+([A-Za-z])(?![A-Za-z0-9])"
    r"|(?<![A-Za-z0-9'(])([A-Z])(?=\s*(?:[,;:!?]|\.(?![A-Za-z])|$))"
)
_PARENTHESIZED = re.compile(r"\(\s*([A-Za-z])\s*\)")
_SENTENCE_END = re.compile(r"[.!?](?=\s|$)|\n")
_FREE_ANCHORED = re.compile(r"(?i:answer\s+is)\s*:?\s*([^\n]*?)\s*(?:[.!?](?=\s|$)|\n|$)")
_EDGE_PUNCTUATION = " \t.!?;:,\"'`"


def _label(match):
    return next(group for group in match.groups() if group).upper()


def _last_label(matches, labels):
    found = None
    for match in matches:
        label = _label(match)
        if label in labels:
            found = (label, match)
    return found


def _extract_choice(text, labels):
    anchored = _last_label(_ANCHORED.finditer(text), labels)
    if anchored is not None:
        label, match = anchored
        tail = text[match.end():]
        end = _SENTENCE_END.search(tail)
        restated = _last_label(_PARENTHESIZED.finditer(tail[:end.start()] if end else tail), labels)
        return restated[0] if restated else label

    fallback = _last_label(_STANDALONE.finditer(text), labels)
    return fallback[0] if fallback else None


def _clean(value):
    value = normalize_text(value.strip(_EDGE_PUNCTUATION))
    return value or None


def _extract_free_text(text):
    matches = [m.group(1) for m in _FREE_ANCHORED.finditer(text)]
    for candidate in reversed(matches):
        cleaned = _clean(candidate)
        if cleaned:
            return cleaned
    lines = [line for line in text.splitlines() if line.strip()]
    return _clean(lines[-1]) if lines else None


def extract_answer(text, task, option_labels=()):
    """Option label or normalized free-text answer; None when nothing is extractable."""
    if not text or not text.strip():
        return None
    if task.answer_format == AnswerFormat.FREE_TEXT:
        return _extract_free_text(text)
    return _extract_choice(text, {label.upper() for label in option_labels})


def task_for(instance):
    return TASKS_BY_ID[instance.task_id]


def align(candidate_text, instance, task=None):
    task = task or task_for(instance)
    extracted = extract_answer(candidate_text, task, instance.option_labels)
    if extracted is None:
        return False
    if task.answer_format == AnswerFormat.FREE_TEXT:
        return extracted == _clean(instance.gold)
    return extracted == instance.gold.strip().upper()
