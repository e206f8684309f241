import logging
from dataclasses import dataclass, replace

from chronopref.artifacts import iter_jsonl, write_jsonl_atomic
from chronopref.exceptions import DataError
from prompting.renderer import render_eval_prompt

from .extraction import align, extract_answer, task_for

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CandidateSet:
    instance_id: str
    prompt: str
    candidates: tuple
    correct_idx: frozenset = None
    wrong_idx: frozenset = None
    extraction: tuple = ()

    @property
    def indices(self):
        return [index for index, _ in self.candidates]

    @property
    def is_partitioned(self):
        return self.correct_idx is not None

    def text(self, index):
        return dict(self.candidates)[index]

    def to_dict(self):
        return {
            "instance_id": self.instance_id,
            "prompt": self.prompt,
            "candidates": [{"index": index, "text": text} for index, text in self.candidates],
            "correct_idx": sorted(self.correct_idx or ()),
            "wrong_idx": sorted(self.wrong_idx or ()),
            "extraction": [{"index": index, "answer": answer} for index, answer in self.extraction],
        }

    @classmethod
    def from_dict(cls, data):
        partitioned = bool(data.get("correct_idx") or data.get("wrong_idx"))
        return cls(
            instance_id=data["instance_id"],
            prompt=data.get("prompt", ""),
            candidates=tuple((int(c["index"]), c["text"]) for c in data["candidates"]),
            correct_idx=frozenset(data["correct_idx"]) if partitioned else None,
            wrong_idx=frozenset(data["wrong_idx"]) if partitioned else None,
            extraction=tuple((int(e["index"]), e["answer"]) for e in data.get("extraction") or ()),
        )


def generate_candidates(gateway, policy, instance, template, params):
    """Sample ``params.n`` responses for one instance; the partition is left empty."""
    prompt = render_eval_prompt(template, instance, shots=len(template.exemplars), allow_zero_shot=True)
    completions = gateway.complete(policy, prompt, params)
    return CandidateSet(
        instance_id=instance.instance_id,
        prompt=prompt.text,
        candidates=tuple((index, completion.text) for index, completion in enumerate(completions)),
    )


def generate_all(gateway, policy, instances, templates, params):
    """Candidate sets for every instance, ordered by instance_id.

    ``templates`` maps task_id to the template used for that task's prompts.
    Nothing is returned, and so nothing is written, unless every instance succeeds.
    """
    instances = sorted(instances, key=lambda i: i.instance_id)
    sets = gateway.map(
        lambda instance: generate_candidates(gateway, policy, instance, templates[instance.task_id], params),
        instances,
    )
    logger.info("generated %d candidate sets of %d samples", len(sets), params.n)
    return sets


def partition(candidate_set, instance, task=None):
    """Split candidates into R+ (aligned with gold) and its complement R-."""
    task = task or task_for(instance)
    correct, wrong, extraction = set(), set(), []
    for index, text in candidate_set.candidates:
        extraction.append((index, extract_answer(text, task, instance.option_labels)))
        (correct if align(text, instance, task) else wrong).add(index)
    return replace(
        candidate_set,
        correct_idx=frozenset(correct),
        wrong_idx=frozenset(wrong),
        extraction=tuple(extraction),
    )


def save_candidate_sets(sets, path):
    return write_jsonl_atomic(path, [s.to_dict() for s in sorted(sets, key=lambda s: s.instance_id)])


def load_candidate_sets(path):
    sets = []
    for line_no, record in iter_jsonl(path):
        try:
            sets.append(CandidateSet.from_dict(record))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{line_no}: bad candidate set ({exc})") from exc
    return sets
