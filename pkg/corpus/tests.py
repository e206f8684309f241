import json
import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from chronopref.exceptions import DataError

from .loader import CorpusLoadError, Instance, load_corpus, normalize_text
from .splits import MATH_INSTRUCTION_VOLUMES, SplitSet, make_splits, sample_volume, volume_ladder
from .synthetic import build_synthetic_corpus, uniform_pool_sizes, write_corpus
from .taxonomy import AnswerFormat, Category, REPORT_COLUMNS, TASKS, TaskSpec, DomainGroup


class TaxonomyTests(SimpleTestCase):
    def test_registry_has_38_tasks_split_evenly(self):
        self.assertEqual(len(TASKS), 38)
        self.assertEqual(len({task.task_id for task in TASKS}), 38)
        self.assertEqual(sum(task.category == Category.MATH_TIME for task in TASKS), 19)
        self.assertEqual(sum(task.category == Category.PURE_TIME for task in TASKS), 19)

    def test_every_task_lands_in_a_report_column(self):
        cells = {(task.category, task.domain_group) for task in TASKS}
        self.assertEqual(cells, set(REPORT_COLUMNS))
        self.assertEqual(len(REPORT_COLUMNS), 13)


class LoadCorpusTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)

    def test_loads_all_38_task_files(self):
        write_corpus(build_synthetic_corpus(uniform_pool_sizes(3)), self.root)
        corpus = load_corpus(self.root)
        self.assertEqual(len(corpus.tasks), 38)
        self.assertEqual(set(corpus.counts().values()), {3})

    def test_empty_directory_gives_empty_registry(self):
        corpus = load_corpus(self.root)
        self.assertEqual(corpus.tasks, {})
        self.assertEqual(len(corpus), 0)

    def test_bad_line_names_file_and_line(self):
        good = build_synthetic_corpus({"relation": 1}).instances["relation"][0].to_dict()
        (self.root / "relation.jsonl").write_text(json.dumps(good) + "\n{not json\n", encoding="utf-8")
        with self.assertRaisesMessage(CorpusLoadError, "relation.jsonl:2"):
            load_corpus(self.root)

    def test_unknown_task_is_rejected(self):
        record = {"instance_id": "x", "task_id": "sundial_reading", "question": "q", "options": [], "gold": "a"}
        (self.root / "extra.jsonl").write_text(json.dumps(record) + "\n", encoding="utf-8")
        with self.assertRaisesMessage(CorpusLoadError, "unknown task_id"):
            load_corpus(self.root)

    def test_gold_must_be_an_option_label(self):
        record = {
            "instance_id": "x", "task_id": "relation", "question": "q",
            "options": [{"label": "A", "text": "before"}, {"label": "B", "text": "after"}], "gold": "C",
        }
        (self.root / "relation.jsonl").write_text(json.dumps(record) + "\n", encoding="utf-8")
        with self.assertRaises(CorpusLoadError):
            load_corpus(self.root)

    def test_empty_task_file_registers_the_task(self):
        (self.root / "story.jsonl").write_text("", encoding="utf-8")
        corpus = load_corpus(self.root)
        self.assertEqual(corpus.counts(), {"story": 0})

    def test_free_text_gold_is_normalized(self):
        task = TaskSpec("custom", "Custom", Category.PURE_TIME, DomainGroup.STORY, AnswerFormat.FREE_TEXT)
        instance = Instance.from_dict(
            {"instance_id": "i", "task_id": "custom", "question": "q", "gold": "  Next   TUESDAY "}, task
        )
        self.assertEqual(instance.gold, "next tuesday")
        self.assertEqual(normalize_text("\tA  b\n"), "a b")


class SplitTests(SimpleTestCase):
    def test_split_budgets(self):
        corpus = build_synthetic_corpus({"relation": 6000, "story": 4300, "nli": 80})
        splits = make_splits(corpus, seed=7).by_task()
        self.assertEqual(len(splits["relation"].train_ids), 5000)
        self.assertEqual(len(splits["story"].train_ids), 4200)
        self.assertEqual(len(splits["nli"].train_ids), 0)
        self.assertEqual([len(splits[t].eval_ids) for t in ("relation", "story", "nli")], [100, 100, 80])

    def test_partition_and_cap_properties(self):
        corpus = build_synthetic_corpus({"relation": 250, "story": 130, "nli": 101, "order_facts": 0})
        for manifest in make_splits(corpus, seed=3, train_cap=120).manifests:
            ids = {i.instance_id for i in corpus.instances[manifest.task_id]}
            self.assertFalse(set(manifest.eval_ids) & set(manifest.train_ids))
            self.assertLessEqual(set(manifest.eval_ids) | set(manifest.train_ids), ids)
            self.assertEqual(len(manifest.train_ids), min(120, max(len(ids) - 100, 0)))

    def test_same_seed_gives_identical_manifests(self):
        corpus = build_synthetic_corpus({"relation": 300, "story": 150})
        first = json.dumps(make_splits(corpus, seed=11).to_dict(), sort_keys=True)
        second = json.dumps(make_splits(corpus, seed=11).to_dict(), sort_keys=True)
        self.assertEqual(first, second)
        self.assertNotEqual(first, json.dumps(make_splits(corpus, seed=12).to_dict(), sort_keys=True))

    def test_round_trip_through_dict(self):
        split_set = make_splits(build_synthetic_corpus({"relation": 120}), seed=1)
        self.assertEqual(SplitSet.from_dict(split_set.to_dict()).manifests, split_set.manifests)

    def test_empty_task_warns_and_yields_empty_manifest(self):
        corpus = build_synthetic_corpus({"relation": 0})
        with self.assertLogs("corpus.splits", level="WARNING"):
            manifest = make_splits(corpus, seed=0).manifests[0]
        self.assertEqual((manifest.eval_ids, manifest.train_ids), ((), ()))

    def test_empty_corpus_is_rejected(self):
        with self.assertRaises(DataError):
            make_splits(build_synthetic_corpus({}), seed=0)

    def test_capped_training_budget_sums_to_35655(self):
        pure = [task.task_id for task in TASKS if task.category == Category.PURE_TIME]
        sizes = {task_id: 5100 for task_id in pure[:7]}
        sizes[pure[7]] = 755
        splits = make_splits(build_synthetic_corpus(sizes), seed=0)
        self.assertEqual(splits.train_total(), 35_655)


class SampleVolumeTests(SimpleTestCase):
    def test_zero_and_full_pool(self):
        pool = [f"m{i}" for i in range(40)]
        self.assertEqual(sample_volume(pool, 0, seed=1), [])
        self.assertEqual(sorted(sample_volume(pool, 40, seed=1)), sorted(pool))

    def test_50k_of_180k_is_unique_and_seeded(self):
        pool = [f"m{i}" for i in range(180_000)]
        subset = sample_volume(pool, 50_000, seed=4)
        self.assertEqual(len(set(subset)), 50_000)
        self.assertEqual(subset, sample_volume(pool, 50_000, seed=4))

    def test_oversized_request_fails(self):
        with self.assertRaises(DataError):
            sample_volume(["a", "b"], 3, seed=0)


class VolumeLadderTests(SimpleTestCase):
    def test_every_math_instruction_rung_is_sampled(self):
        pool = [f"m{i}" for i in range(180_000)]
        ladder = volume_ladder(pool, seed=2)
        self.assertEqual(sorted(ladder), list(MATH_INSTRUCTION_VOLUMES))
        for k in MATH_INSTRUCTION_VOLUMES:
            with self.subTest(volume=k):
                self.assertEqual(len(ladder[k]), k)
                self.assertEqual(len(set(ladder[k])), k)
        self.assertEqual(sorted(ladder[180_000]), sorted(pool))

    def test_rungs_are_nested_and_seeded(self):
        pool = [f"m{i}" for i in range(500)]
        ladder = volume_ladder(pool, seed=9, volumes=(100, 0, 300))
        self.assertEqual(list(ladder), [0, 100, 300])
        self.assertTrue(set(ladder[100]) <= set(ladder[300]))
        self.assertEqual(ladder, volume_ladder(pool, seed=9, volumes=(0, 100, 300)))

    def test_rung_larger_than_pool_fails(self):
        with self.assertRaises(DataError):
            volume_ladder([f"m{i}" for i in range(10)], seed=0)
