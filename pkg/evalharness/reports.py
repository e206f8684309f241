"""Report rendering and model comparison.

The Markdown layout follows the usual results table: math-time domain
columns (marked with a dagger) first, then pure-time columns, then the
column average and the macro average over tasks.
"""

import csv
import io
import json
from dataclasses import dataclass

from django.db import models

from chronopref.exceptions import DataError
from corpus.taxonomy import REPORT_COLUMNS, TASKS_BY_ID, Category

from .evaluation import EvalReport, TaskScore

CSV_FIELDS = ("model_name", "task_id", "n_total", "n_correct", "accuracy")


class ReportFormat(models.TextChoices):
    MARKDOWN = 'markdown', 'Markdown'
    CSV = 'csv', 'CSV'
    JSON = 'json', 'JSON'


def column_key(category, group):
    return f"{category}:{group}"


def column_title(category, group):
    title = group.label
    return f"{title}†" if category == Category.MATH_TIME else title


def percent(value):
    return "-" if value is None else f"{100 * value:.1f}"


def _markdown(report):
    titles = [column_title(c, g) for c, g in REPORT_COLUMNS]
    lines = [
        "| Model | " + " | ".join(titles) + " | Average | Macro |",
        "|---" * (len(titles) + 3) + "|",
        "| " + " | ".join(
            [report.model_name]
            + [percent(report.per_group.get(column_key(c, g))) for c, g in REPORT_COLUMNS]
            + [percent(report.column_avg), percent(report.overall_avg)]
        ) + " |",
        "",
        f"Math-time average: {percent(report.math_time_avg)}. Pure-time average: {percent(report.pure_time_avg)}.",
        "",
        "| Task | Category | Domain | Correct | Total | Accuracy |",
        "|---|---|---|---|---|---|",
    ]
    for task_id, score in report.per_task.items():
        task = TASKS_BY_ID[task_id]
        lines.append(
            f"| {task.name} | {task.category.label} | {task.domain_group.label} "
            f"| {score.n_correct} | {score.n_total} | {percent(score.accuracy)} |"
        )
    if report.exemplar_shortfall:
        short = ", ".join(f"{TASKS_BY_ID[t].name} ({n})" for t, n in report.exemplar_shortfall.items())
        lines += ["", f"Prompted with fewer than {report.shots} exemplars: {short}."]
    return "\n".join(lines) + "\n"


def _csv(report):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for task_id, score in report.per_task.items():
        writer.writerow([report.model_name, task_id, score.n_total, score.n_correct, repr(score.accuracy)])
    return buffer.getvalue()


def render_report(report, fmt=ReportFormat.MARKDOWN):
    if not report.per_task:
        raise DataError(f"report for {report.model_name} has no tasks; refusing to render")
    fmt = ReportFormat(fmt)
    if fmt == ReportFormat.JSON:
        return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
    if fmt == ReportFormat.CSV:
        return _csv(report)
    return _markdown(report)


def parse_report(text, fmt):
    """Inverse of ``render_report`` for the lossless formats."""
    fmt = ReportFormat(fmt)
    if fmt == ReportFormat.JSON:
        return EvalReport.from_dict(json.loads(text))
    if fmt == ReportFormat.CSV:
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise DataError("CSV report has no rows")
        names = {row["model_name"] for row in rows}
        if len(names) != 1:
            raise DataError(f"CSV report mixes models: {', '.join(sorted(names))}")
        per_task = {
            row["task_id"]: TaskScore(int(row["n_total"]), int(row["n_correct"]), float(row["accuracy"]))
            for row in rows
        }
        return EvalReport.from_task_scores(names.pop(), per_task)
    raise DataError(f"{fmt} reports cannot be parsed back")


@dataclass(frozen=True)
class Comparison:
    models: tuple
    tasks: tuple
    accuracies: dict
    best: dict
    second: dict
    wins: tuple

    def wins_of(self, i, j):
        return self.wins[i][j]


def compare(reports):
    """Best and second-best flags per task plus a pairwise tasks-won matrix.

    ``wins[i][j]`` counts tasks where report ``i`` is strictly more accurate
    than report ``j``.
    """
    reports = list(reports)
    if not reports:
        raise DataError("nothing to compare")
    tasks = tuple(reports[0].per_task)
    for report in reports[1:]:
        if tuple(report.per_task) != tasks:
            raise DataError(f"{report.model_name} and {reports[0].model_name} cover different task registries")

    accuracies = {t: tuple(r.per_task[t].accuracy for r in reports) for t in tasks}
    best, second = {}, {}
    for task_id, values in accuracies.items():
        levels = sorted(set(values), reverse=True)
        best[task_id] = tuple(i for i, v in enumerate(values) if v == levels[0])
        second[task_id] = tuple(i for i, v in enumerate(values) if len(levels) > 1 and v == levels[1])

    size = len(reports)
    wins = tuple(
        tuple(sum(accuracies[t][i] > accuracies[t][j] for t in tasks) for j in range(size))
        for i in range(size)
    )
    return Comparison(
        models=tuple(r.model_name for r in reports),
        tasks=tasks,
        accuracies=accuracies,
        best=best,
        second=second,
        wins=wins,
    )


def render_comparison(comparison):
    """Markdown table; best per task in bold, second best underlined."""
    lines = [
        "| Task | " + " | ".join(comparison.models) + " |",
        "|---" * (len(comparison.models) + 1) + "|",
    ]
    for task_id in comparison.tasks:
        cells = []
        for i, value in enumerate(comparison.accuracies[task_id]):
            cell = percent(value)
            if i in comparison.best[task_id]:
                cell = f"**{cell}**"
            elif i in comparison.second[task_id]:
                cell = f"<u>{cell}</u>"
            cells.append(cell)
        lines.append(f"| {TASKS_BY_ID[task_id].name} | " + " | ".join(cells) + " |")
    lines += [
        "",
        "Tasks won (row vs column):",
        "",
        "| | " + " | ".join(comparison.models) + " |",
        "|---" * (len(comparison.models) + 1) + "|",
    ]
    for name, row in zip(comparison.models, comparison.wins):
        lines.append(f"| {name} | " + " | ".join(str(n) for n in row) + " |")
    return "\n".join(lines) + "\n"
