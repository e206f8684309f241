import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from chronopref.artifacts import iter_jsonl, write_jsonl_atomic
from chronopref.exceptions import DataError, TransportError
from corpus.taxonomy import TASKS_BY_ID
from llm_gateway.exceptions import ReplayMissError
from llm_gateway.types import SamplingParams
from prompting.renderer import exemplars_from_instances, render_eval_prompt
from prompting.templates import load_exemplars
from sampler.extraction import align, extract_answer, task_for

logger = logging.getLogger(__name__)

DEFAULT_SHOTS = 5
FAILURE_TOLERANCE = 0.05


class EvaluationAborted(DataError):
    pass


@dataclass(frozen=True)
class GradedRow:
    instance_id: str
    task_id: str
    response: str
    extracted: str
    gold: str
    correct: bool

    def to_dict(self):
        return {
            "instance_id": self.instance_id,
            "task_id": self.task_id,
            "response": self.response,
            "extracted": self.extracted,
            "gold": self.gold,
            "correct": self.correct,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            instance_id=data["instance_id"],
            task_id=data["task_id"],
            response=data["response"],
            extracted=data.get("extracted"),
            gold=data["gold"],
            correct=bool(data["correct"]),
        )


@dataclass(frozen=True)
class TaskScore:
    n_total: int
    n_correct: int
    accuracy: float

    @classmethod
    def of(cls, n_total, n_correct):
        return cls(n_total, n_correct, n_correct / n_total)


def group_key(task):
    return f"{task.category}:{task.domain_group}"


def _mean(values):
    values = list(values)
    return math.fsum(values) / len(values) if values else None


@dataclass(frozen=True)
class EvalReport:
    """Per-task accuracies plus grouped views.

    ``overall_avg`` is the macro average over tasks; ``column_avg`` averages
    the displayed (category, domain) columns.
    ``exemplar_shortfall`` maps each task that was prompted with fewer than
    ``shots`` exemplars to the number it actually got.
    """

    model_name: str
    per_task: dict = field(default_factory=dict)
    per_group: dict = field(default_factory=dict)
    math_time_avg: float | None = None
    pure_time_avg: float | None = None
    overall_avg: float | None = None
    column_avg: float | None = None
    shots: int | None = None
    exemplar_shortfall: dict = field(default_factory=dict)

    @classmethod
    def from_task_scores(cls, model_name, per_task):
        per_task = {task_id: per_task[task_id] for task_id in sorted(per_task)}
        unknown = [t for t in per_task if t not in TASKS_BY_ID]
        if unknown:
            raise DataError(f"report for {model_name} names unknown tasks: {', '.join(unknown)}")

        groups = {}
        for task_id, score in per_task.items():
            groups.setdefault(group_key(TASKS_BY_ID[task_id]), []).append(score.accuracy)
        per_group = {key: _mean(groups[key]) for key in sorted(groups)}

        def category_avg(math_time):
            return _mean(s.accuracy for t, s in per_task.items() if TASKS_BY_ID[t].is_math_time == math_time)

        return cls(
            model_name=model_name,
            per_task=per_task,
            per_group=per_group,
            math_time_avg=category_avg(True),
            pure_time_avg=category_avg(False),
            overall_avg=_mean(s.accuracy for s in per_task.values()),
            column_avg=_mean(per_group.values()),
        )

    def to_dict(self):
        return {
            "model_name": self.model_name,
            "per_task": {
                task_id: {"n_total": s.n_total, "n_correct": s.n_correct, "accuracy": s.accuracy}
                for task_id, s in self.per_task.items()
            },
            "per_group": dict(self.per_group),
            "math_time_avg": self.math_time_avg,
            "pure_time_avg": self.pure_time_avg,
            "overall_avg": self.overall_avg,
            "column_avg": self.column_avg,
            "shots": self.shots,
            "exemplar_shortfall": dict(self.exemplar_shortfall),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            model_name=data["model_name"],
            per_task={t: TaskScore(s["n_total"], s["n_correct"], s["accuracy"]) for t, s in data["per_task"].items()},
            per_group=dict(data["per_group"]),
            math_time_avg=data["math_time_avg"],
            pure_time_avg=data["pure_time_avg"],
            overall_avg=data["overall_avg"],
            column_avg=data["column_avg"],
            shots=data.get("shots"),
            exemplar_shortfall=dict(data.get("exemplar_shortfall") or {}),
        )


def aggregate(model_name, rows):
    """Fold graded rows into a report; row order does not matter."""
    counts = {}
    for row in rows:
        total, correct = counts.get(row.task_id, (0, 0))
        counts[row.task_id] = (total + 1, correct + int(row.correct))
    return EvalReport.from_task_scores(model_name, {t: TaskScore.of(*c) for t, c in counts.items()})


def regrade(rows, instances):
    """Grade persisted responses again against gold."""
    return [
        GradedRow(
            row.instance_id, row.task_id, row.response,
            extract_answer(row.response, task_for(instances[row.instance_id]), instances[row.instance_id].option_labels),
            row.gold, align(row.response, instances[row.instance_id]),
        )
        for row in rows
    ]


def task_exemplars(task_id, manifest, instances, shots, exemplar_dir=None):
    """A frozen exemplar file when the task has one, else its first ``shots`` training instances."""
    if exemplar_dir:
        path = Path(exemplar_dir) / f"{task_id}.jsonl"
        if path.exists():
            return load_exemplars(path)[:shots]
    train = [instances[i] for i in manifest.train_ids[:shots]] if manifest else []
    return exemplars_from_instances(train)


def task_templates(library, template_id, split_set, instances, shots=DEFAULT_SHOTS, exemplar_dir=None, task_ids=None):
    """Template with exemplars attached, per task.

    ``math_cot`` falls back to ``cot`` for pure-time tasks.
    """
    manifests = split_set.by_task()
    templates = {}
    for task_id in sorted(task_ids or manifests):
        task = TASKS_BY_ID[task_id]
        chosen = "cot" if template_id == "math_cot" and not task.is_math_time else template_id
        exemplars = task_exemplars(task_id, manifests.get(task_id), instances, shots, exemplar_dir)
        if len(exemplars) < shots:
            logger.warning("Task %s has %d of %d exemplars", task_id, len(exemplars), shots)
        templates[task_id] = library.get(chosen).with_exemplars(exemplars)
    return templates


def exemplar_shortfall(templates, task_ids, shots):
    return {t: len(templates[t].exemplars) for t in sorted(task_ids) if len(templates[t].exemplars) < shots}


def _grade(gateway, model, instance, template, params):
    task = task_for(instance)
    prompt = render_eval_prompt(template, instance, shots=len(template.exemplars), allow_zero_shot=True)
    try:
        response = gateway.complete(model, prompt, params)[0].text
    except (TransportError, ReplayMissError) as exc:
        logger.warning("%s: %s", instance.instance_id, exc)
        return GradedRow(instance.instance_id, instance.task_id, "", None, instance.gold, False), exc
    row = GradedRow(
        instance_id=instance.instance_id,
        task_id=instance.task_id,
        response=response,
        extracted=extract_answer(response, task, instance.option_labels),
        gold=instance.gold,
        correct=align(response, instance, task),
    )
    return row, None


def grade_instances(gateway, model, instances, templates, params=None, tolerance=FAILURE_TOLERANCE):
    """One greedy answer per instance, graded against gold.

    Failed calls count as incorrect rows; more than ``tolerance`` of them
    aborts the evaluation.
    """
    params = params or SamplingParams.greedy()
    if not params.is_greedy:
        logger.warning("Evaluating %s at temperature %s; results are sampled, not greedy", model.name, params.temperature)
    instances = sorted(instances, key=lambda i: i.instance_id)
    results = gateway.map(lambda i: _grade(gateway, model, i, templates[i.task_id], params), instances)
    failures = [error for _, error in results if error is not None]
    if instances and len(failures) > tolerance * len(instances):
        raise EvaluationAborted(
            f"{len(failures)} of {len(instances)} instances failed for {model.name} "
            f"(tolerance {tolerance:.0%}); first error: {failures[0]}"
        )
    return [row for row, _ in results]


def evaluate(
    gateway, model, split_set, instances, templates, params=None, tolerance=FAILURE_TOLERANCE, rows_path=None, shots=None,
):
    """Evaluate ``model`` on every eval split; rows are written before aggregation.

    With ``shots`` set, the report records it along with every task whose
    template carried fewer exemplars.
    """
    eval_instances = [instances[i] for m in split_set.manifests for i in m.eval_ids]
    if not eval_instances:
        raise DataError("the eval splits are empty")
    rows = grade_instances(gateway, model, eval_instances, templates, params, tolerance)
    if rows_path is not None:
        save_rows(rows, rows_path)
    report = aggregate(model.name, rows)
    if shots is not None:
        report = replace(report, shots=shots, exemplar_shortfall=exemplar_shortfall(templates, report.per_task, shots))
        if report.exemplar_shortfall:
            logger.warning(
                "%s: %d task(s) evaluated with fewer than %d exemplars", model.name, len(report.exemplar_shortfall), shots,
            )
    logger.info("%s: macro average %.4f over %d tasks", model.name, report.overall_avg, len(report.per_task))
    return report


def save_rows(rows, path):
    return write_jsonl_atomic(path, [r.to_dict() for r in sorted(rows, key=lambda r: r.instance_id)])


def load_rows(path):
    rows = []
    for line_no, record in iter_jsonl(path):
        try:
            rows.append(GradedRow.from_dict(record))
        except KeyError as exc:
            raise DataError(f"{path}:{line_no}: graded row is missing {exc}") from exc
    return rows