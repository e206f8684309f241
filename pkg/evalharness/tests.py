import itertools
import json
import random
import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from chronopref.exceptions import DataError
from corpus.splits import make_splits
from corpus.synthetic import build_synthetic_corpus, uniform_pool_sizes
from corpus.taxonomy import TASKS, TASKS_BY_ID
from llm_gateway.backends import MockBackend
from llm_gateway.exceptions import GatewayTransportError
from llm_gateway.gateway import Gateway, GatewayMode
from llm_gateway.types import ModelHandle, SamplingParams
from prompting.templates import default_library

from .evaluation import (
    EvalReport,
    EvaluationAborted,
    TaskScore,
    aggregate,
    evaluate,
    grade_instances,
    load_rows,
    regrade,
    task_templates,
)
from .reports import ReportFormat, compare, parse_report, render_comparison, render_report

MODEL = ModelHandle("mathllama-7b", "http://localhost:8000/v1")
GREEDY = SamplingParams.greedy(max_tokens=64)


class FlakyBackend:
    """Mock answers, except that listed instances always fail in transport."""

    def __init__(self, inner, failing):
        self.inner = inner
        self.failing = set(failing)

    def complete(self, handle, prompt, params, index):
        if prompt.instance_id in self.failing:
            raise GatewayTransportError("connection reset")
        return self.inner.complete(handle, prompt, params, index)


def setup_task(task_id="relation", pool=105):
    corpus = build_synthetic_corpus({task_id: pool})
    splits = make_splits(corpus, seed=0)
    instances = corpus.index()
    templates = task_templates(default_library(), "few_shot", splits, instances)
    return corpus, splits, instances, templates


def report_of(name, accuracies):
    return EvalReport.from_task_scores(name, {t: TaskScore.of(100, round(a * 100)) for t, a in accuracies.items()})


class EvaluateTests(SimpleTestCase):
    def test_72_of_100_echoed(self):
        corpus, splits, instances, templates = setup_task()
        eval_ids = sorted(splits.by_task()["relation"].eval_ids)
        backend = MockBackend.from_instances(corpus.all_instances(), echo_ids=eval_ids[:72])
        report = evaluate(Gateway(backend), MODEL, splits, instances, templates, GREEDY)
        self.assertEqual(report.per_task["relation"], TaskScore(100, 72, 0.72))

    def test_echoing_every_instance_scores_one(self):
        corpus, splits, instances, templates = setup_task("story")
        backend = MockBackend.from_instances(corpus.all_instances(), echo_ids=list(instances))
        report = evaluate(Gateway(backend), MODEL, splits, instances, templates, GREEDY)
        self.assertEqual(report.per_task["story"].accuracy, 1.0)

    def test_exemplar_shortfall_is_recorded_in_the_report(self):
        corpus = build_synthetic_corpus({"relation": 100, "story": 105})
        splits = make_splits(corpus, seed=0)
        instances = corpus.index()
        with self.assertLogs("evalharness.evaluation", level="WARNING"):
            templates = task_templates(default_library(), "few_shot", splits, instances, shots=5)
        backend = MockBackend.from_instances(corpus.all_instances())
        with self.assertLogs("evalharness.evaluation", level="WARNING") as logs:
            report = evaluate(Gateway(backend), MODEL, splits, instances, templates, GREEDY, shots=5)
        self.assertIn("fewer than 5 exemplars", "\n".join(logs.output))
        self.assertEqual((report.shots, report.exemplar_shortfall), (5, {"relation": 0}))
        self.assertEqual(parse_report(render_report(report, ReportFormat.JSON), ReportFormat.JSON), report)
        self.assertIn(f"fewer than 5 exemplars: {TASKS_BY_ID['relation'].name} (0).", render_report(report))

    def test_full_exemplar_supply_records_no_shortfall(self):
        corpus, splits, instances, templates = setup_task("story")
        backend = MockBackend.from_instances(corpus.all_instances())
        report = evaluate(Gateway(backend), MODEL, splits, instances, templates, GREEDY, shots=5)
        self.assertEqual((report.shots, report.exemplar_shortfall), (5, {}))
        self.assertNotIn("exemplars:", render_report(report))

    def test_full_registry_on_the_mock(self):
        corpus = build_synthetic_corpus(uniform_pool_sizes(105))
        splits = make_splits(corpus, seed=0)
        instances = corpus.index()
        templates = task_templates(default_library(), "few_shot", splits, instances)
        backend = MockBackend.from_instances(corpus.all_instances(), accuracy=0.6)
        with tempfile.TemporaryDirectory() as tmp:
            rows_path = Path(tmp) / "graded.jsonl"
            report = evaluate(Gateway(backend), MODEL, splits, instances, templates, GREEDY, rows_path=rows_path)
            rows = load_rows(rows_path)
        self.assertEqual(len(rows), 3800)
        self.assertEqual(len(report.per_task), 38)
        self.assertEqual(regrade(rows, instances), rows)
        self.assertEqual(aggregate(MODEL.name, reversed(rows)), report)
        math_tasks = [t for t in report.per_task if TASKS_BY_ID[t].is_math_time]
        self.assertEqual(len(math_tasks), 19)
        self.assertAlmostEqual(
            report.math_time_avg, sum(report.per_task[t].accuracy for t in math_tasks) / 19, delta=1e-12
        )
        header = render_report(report).splitlines()[0]
        self.assertEqual(header.count("|"), 17)
        self.assertEqual(header.count("†"), 4)
        self.assertTrue(header.endswith("| Average | Macro |"))

    def test_replay_gives_identical_reports(self):
        corpus, splits, instances, templates = setup_task()
        backend = MockBackend.from_instances(corpus.all_instances())
        with tempfile.TemporaryDirectory() as tmp:
            recorded = evaluate(Gateway(backend, GatewayMode.RECORD, tmp), MODEL, splits, instances, templates, GREEDY)
            replayed = evaluate(Gateway(None, GatewayMode.REPLAY, tmp), MODEL, splits, instances, templates, GREEDY)
        self.assertEqual(render_report(recorded, "json"), render_report(replayed, "json"))

    def test_failures_count_as_incorrect_within_tolerance(self):
        corpus, splits, instances, templates = setup_task()
        eval_ids = sorted(splits.by_task()["relation"].eval_ids)
        backend = FlakyBackend(MockBackend.from_instances(corpus.all_instances(), echo_ids=eval_ids), eval_ids[:5])
        gateway = Gateway(backend, max_retries=1)
        eval_instances = [instances[i] for i in eval_ids]
        with self.assertLogs("evalharness.evaluation", level="WARNING"):
            rows = grade_instances(gateway, MODEL, eval_instances, templates, GREEDY)
        self.assertEqual(sum(not r.correct for r in rows), 5)
        self.assertEqual({r.response for r in rows if not r.correct}, {""})

    def test_too_many_failures_abort(self):
        corpus, splits, instances, templates = setup_task()
        eval_ids = sorted(splits.by_task()["relation"].eval_ids)
        backend = FlakyBackend(MockBackend.from_instances(corpus.all_instances()), eval_ids[:6])
        with self.assertLogs("evalharness.evaluation", level="WARNING"):
            with self.assertRaisesMessage(EvaluationAborted, "6 of 100"):
                evaluate(Gateway(backend, max_retries=1), MODEL, splits, instances, templates, GREEDY)


class TemplateSelectionTests(SimpleTestCase):
    def test_math_cot_falls_back_to_cot_for_pure_time(self):
        corpus = build_synthetic_corpus({"relation": 105, "arithmetic_date_computation": 105})
        splits = make_splits(corpus, seed=0)
        templates = task_templates(default_library(), "math_cot", splits, corpus.index())
        self.assertEqual(templates["relation"].template_id, "cot")
        self.assertEqual(templates["arithmetic_date_computation"].template_id, "math_cot")
        self.assertEqual(len(templates["relation"].exemplars), 5)

    def test_exemplar_file_takes_precedence(self):
        corpus = build_synthetic_corpus({"relation": 105})
        splits = make_splits(corpus, seed=0)
        with tempfile.TemporaryDirectory() as tmp:
            rows = [{"question": f"Q{i}?", "answer": "The answer is (A)."} for i in range(5)]
            (Path(tmp) / "relation.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))
            templates = task_templates(default_library(), "few_shot", splits, corpus.index(), exemplar_dir=tmp)
        self.assertEqual([e.question for e in templates["relation"].exemplars], [f"Q{i}?" for i in range(5)])

    def test_short_exemplar_supply_warns(self):
        corpus = build_synthetic_corpus({"relation": 100})
        splits = make_splits(corpus, seed=0)
        with self.assertLogs("evalharness.evaluation", level="WARNING"):
            templates = task_templates(default_library(), "few_shot", splits, corpus.index())
        self.assertEqual(templates["relation"].exemplars, ())


class RenderReportTests(SimpleTestCase):
    def setUp(self):
        rng = random.Random(3)
        self.report = report_of("mathllama-7b", {t.task_id: rng.randint(0, 100) / 100 for t in TASKS})

    def test_json_and_csv_are_lossless(self):
        for fmt in (ReportFormat.JSON, ReportFormat.CSV):
            self.assertEqual(parse_report(render_report(self.report, fmt), fmt), self.report)

    def test_markdown_layout(self):
        lines = render_report(self.report, ReportFormat.MARKDOWN).splitlines()
        self.assertTrue(lines[0].startswith("| Model | Amb.† | Arith.† | Dur.† | Freq.† | Amb. | Dur. |"))
        self.assertEqual(len(lines[2].strip("|").split("|")), 16)

    def test_averages(self):
        self.assertEqual(len([t for t in self.report.per_task if TASKS_BY_ID[t].is_math_time]), 19)
        expected = sum(s.accuracy for s in self.report.per_task.values()) / 38
        self.assertAlmostEqual(self.report.overall_avg, expected, delta=1e-12)
        self.assertAlmostEqual(
            self.report.column_avg, sum(self.report.per_group.values()) / 13, delta=1e-12
        )

    def test_empty_report_is_refused(self):
        with self.assertRaises(DataError):
            render_report(EvalReport("empty"))


class CompareTests(SimpleTestCase):
    def test_self_comparison_is_all_ties(self):
        report = report_of("a", {"relation": 0.5, "story": 0.7})
        comparison = compare([report, report])
        self.assertEqual(comparison.wins, ((0, 0), (0, 0)))
        self.assertEqual(comparison.best["relation"], (0, 1))
        self.assertEqual(comparison.second["relation"], ())

    def test_one_differing_task(self):
        first = report_of("a", {"relation": 0.5, "story": 0.7})
        second = report_of("b", {"relation": 0.5, "story": 0.6})
        comparison = compare([first, second])
        self.assertEqual((comparison.wins_of(0, 1), comparison.wins_of(1, 0)), (1, 0))
        self.assertEqual(comparison.best["story"], (0,))
        self.assertEqual(comparison.second["story"], (1,))
        self.assertIn("**70.0**", render_comparison(comparison))
        self.assertIn("<u>60.0</u>", render_comparison(comparison))

    def test_three_way_matrix_matches_recount(self):
        rng = random.Random(8)
        task_ids = [t.task_id for t in TASKS]
        reports = [report_of(name, {t: rng.randint(0, 10) / 10 for t in task_ids}) for name in "abc"]
        comparison = compare(reports)
        for i, j in itertools.product(range(3), repeat=2):
            expected = sum(reports[i].per_task[t].accuracy > reports[j].per_task[t].accuracy for t in task_ids)
            self.assertEqual(comparison.wins[i][j], expected)

    def test_mismatched_registries(self):
        with self.assertRaises(DataError):
            compare([report_of("a", {"relation": 0.5}), report_of("b", {"story": 0.5})])
