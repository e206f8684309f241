import io
import json
import os
import tempfile
from pathlib import Path
from unittest import mock

from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase

from chronopref.exceptions import ConfigError, DataError
from corpus.synthetic import build_synthetic_corpus, write_corpus
from critic.selection import load_pairs
from dpo.export import load_sft
from evalharness.evaluation import EvalReport

from .config import config_hash, resolve_config
from .models import ManifestStatus, RunManifest, Stage
from .stages import lineage, path_sha256, run_stage

POOLS = {"relation": 105, "story": 105, "arithmetic_year_shift": 105}


def tree(root):
    root = Path(root)
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class ResolveConfigTests(SimpleTestCase):
    def test_empty_config_is_the_defaults(self):
        self.assertEqual(resolve_config(env={}), settings.CHRONOPREF)

    def test_defaults_carry_the_sampling_and_training_constants(self):
        config = resolve_config(env={})
        self.assertEqual(
            (config["n_candidates"], config["temperature"], config["top_p"], config["judge_samples"], config["shots"]),
            (5, 0.8, 0.95, 3, 5),
        )
        self.assertEqual(
            (config["eval_temperature"], config["beta"], config["batch_size"], config["warmup_ratio"], config["epochs"]),
            (0.0, 0.1, 32, 0.1, 9),
        )

    def test_flag_beats_env_beats_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "config.json"
            path.write_text(json.dumps({"beta": 0.1, "shots": 3}))
            self.assertEqual(resolve_config(path, {}, {"beta": "0.2"})["beta"], 0.2)
            config = resolve_config(path, {"CHRONOPREF_BETA": "0.3", "CHRONOPREF_SHOTS": "4"}, {"beta": "0.2"})
        self.assertEqual(config["beta"], 0.2)
        self.assertEqual(config["shots"], 4)

    def test_unknown_key_lists_valid_keys(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "config.json"
            path.write_text(json.dumps({"betta": 0.2}))
            with self.assertRaises(ConfigError) as ctx:
                resolve_config(path, {})
        message = str(ctx.exception)
        self.assertIn("betta", message)
        for key in ("beta", "seed", "warmup_ratio"):
            self.assertIn(key, message)

    def test_invalid_values(self):
        for flags in ({"beta": "0"}, {"top_p": "1.5"}, {"rounds": "0"}, {"policy_model": "m@round-1"}):
            with self.subTest(flags=flags), self.assertRaises(ConfigError):
                resolve_config(env={}, flags=flags)

    def test_replay_needs_cache_dir(self):
        with self.assertRaises(ConfigError):
            resolve_config(env={}, flags={"gateway_mode": "replay", "cache_dir": ""})

    def test_judge_endpoint_defaults_to_policy_endpoint(self):
        config = resolve_config(env={}, flags={"judge_model": "critic-7b"})
        self.assertEqual(config["judge_endpoint"], config["policy_endpoint"])

    def test_runtime_keys_do_not_change_the_hash(self):
        config = resolve_config(env={})
        self.assertEqual(config_hash(config), config_hash({**config, "max_in_flight": 1, "workdir": "/elsewhere"}))
        self.assertNotEqual(config_hash(config), config_hash({**config, "beta": 0.2}))


class RunStageTests(TestCase):
    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.root = Path(tmp.name)
        self.config = resolve_config(env={}, flags={"workdir": str(self.root)})
        self.source = self.root / "source.txt"
        self.source.write_text("week\n")

    def copy_stage(self, suffix=""):
        def produce(staging):
            (staging / "copy.txt").write_text(self.source.read_text() + suffix)
        return run_stage(Stage.INGEST, self.config, self.root, [self.source], ["copy.txt"], produce)

    def test_rerun_is_up_to_date(self):
        first = self.copy_stage()
        second = self.copy_stage()
        self.assertFalse(first.skipped)
        self.assertTrue(second.skipped)
        self.assertEqual(second.status, "up-to-date")
        self.assertEqual(second.manifest, first.manifest)
        self.assertEqual(RunManifest.objects.count(), 1)

    def test_changed_input_reruns_and_supersedes(self):
        first = self.copy_stage()
        self.source.write_text("month\n")
        second = self.copy_stage()
        self.assertFalse(second.skipped)
        first.manifest.refresh_from_db()
        self.assertEqual(first.manifest.status, ManifestStatus.SUPERSEDED)
        active = RunManifest.objects.filter(status=ManifestStatus.ACTIVE)
        self.assertEqual([m.run_id for m in active], [second.manifest.run_id])

    def test_partial_outputs_are_never_promoted(self):
        def produce(staging):
            (staging / "a.txt").write_text("a")

        with self.assertRaises(DataError):
            run_stage(Stage.INGEST, self.config, self.root, [self.source], ["a.txt", "b.txt"], produce)
        self.assertFalse((self.root / "a.txt").exists())
        self.assertEqual(list(self.root.glob(".staging-*")), [])
        self.assertEqual(RunManifest.objects.count(), 0)

    def test_failing_stage_leaves_nothing(self):
        def produce(staging):
            (staging / "copy.txt").write_text("half")
            raise DataError("judge verdicts exhausted")

        with self.assertRaises(DataError):
            run_stage(Stage.INGEST, self.config, self.root, [self.source], ["copy.txt"], produce)
        self.assertFalse((self.root / "copy.txt").exists())
        self.assertEqual(list(self.root.glob(".staging-*")), [])

    def test_missing_input(self):
        with self.assertRaises(DataError):
            run_stage(Stage.INGEST, self.config, self.root, [self.root / "absent.jsonl"], ["x"], lambda staging: None)


class PipelineCommandTests(TestCase):
    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.root = Path(tmp.name)
        write_corpus(build_synthetic_corpus(POOLS, seed=0), self.root / "corpus")

    def call(self, name, *args, workdir="run", **overrides):
        options = {
            "corpus_dir": str(self.root / "corpus"),
            "workdir": str(self.root / workdir),
            "cache_dir": str(self.root / "cache"),
            "generate_limit": "3",
            **overrides,
        }
        out = io.StringIO()
        call_command(name, *args, stdout=out, **options)
        return out.getvalue()

    def test_base_pipeline_writes_seven_connected_manifests(self):
        self.call("run_pipeline")
        manifests = list(RunManifest.objects.all())
        self.assertEqual(
            [m.stage for m in manifests],
            [Stage.INGEST, Stage.GENERATE, Stage.ALIGN, Stage.JUDGE, Stage.PAIR, Stage.EVAL, Stage.REPORT],
        )
        ingest = manifests[0]
        for manifest in manifests[1:]:
            self.assertIn(ingest, lineage(manifest))
            for path, digest in manifest.outputs.items():
                self.assertEqual(path_sha256(path), digest)
        report = (self.root / "run" / "report.md").read_text()
        self.assertEqual(report.splitlines()[0].count("|"), 17)

    def test_every_output_has_exactly_one_active_manifest(self):
        self.call("run_pipeline")
        self.call("run_pipeline", beta="0.2")
        owners = {}
        for manifest in RunManifest.objects.filter(status=ManifestStatus.ACTIVE):
            for path in manifest.outputs:
                owners.setdefault(path, []).append(manifest.run_id)
        self.assertTrue(owners)
        self.assertTrue(all(len(runs) == 1 for runs in owners.values()))

    def test_rerun_reports_up_to_date(self):
        self.call("run_pipeline")
        out = self.call("run_pipeline")
        self.assertEqual(out.count("up-to-date"), 7)
        self.assertEqual(RunManifest.objects.count(), 7)

    def test_tampered_input_is_stale(self):
        self.call("ingest")
        with open(self.root / "run" / "instances.jsonl", "a", encoding="utf-8") as handle:
            handle.write("\n")
        with self.assertRaises(CommandError) as ctx:
            self.call("generate")
        self.assertEqual(ctx.exception.returncode, 4)
        self.assertIn("does not match", str(ctx.exception))

    def test_missing_api_key_fails_at_startup(self):
        self.call("ingest")
        with mock.patch.dict(os.environ, {}, clear=False):
            os.environ.pop("CHRONOPREF_TEST_KEY", None)
            with self.assertRaises(CommandError) as ctx:
                self.call("generate", gateway_mode="live", policy_api_key_env="CHRONOPREF_TEST_KEY")
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn("CHRONOPREF_TEST_KEY", str(ctx.exception))
        self.assertFalse((self.root / "run" / "candidates.jsonl").exists())

    def test_replay_runs_are_byte_identical(self):
        self.call("run_pipeline", workdir="recorded", gateway_mode="record", record_backend="mock")
        self.call("run_pipeline", workdir="replay-a", gateway_mode="replay")
        self.call("run_pipeline", workdir="replay-b", gateway_mode="replay")
        recorded = tree(self.root / "recorded")
        self.assertIn("pairs.jsonl", recorded)
        self.assertIn("report.md", recorded)
        self.assertEqual(tree(self.root / "replay-a"), recorded)
        self.assertEqual(tree(self.root / "replay-b"), recorded)

    def test_replay_without_cache_entries_is_a_data_error(self):
        self.call("ingest", workdir="empty-cache")
        with self.assertRaises(CommandError) as ctx:
            self.call("generate", workdir="empty-cache", gateway_mode="replay", cache_dir=str(self.root / "nothing"))
        self.assertEqual(ctx.exception.returncode, 5)

    def test_exports_follow_pairs(self):
        self.call("run_pipeline")
        pairs = load_pairs(self.root / "run" / "pairs.jsonl")
        self.assertTrue(pairs)
        self.call("export_pairs")
        self.call("export_sft")
        lines = (self.root / "run" / "dpo_pairs.jsonl").read_text().splitlines()
        self.assertEqual(len(lines), len(pairs))
        self.assertEqual(set(json.loads(lines[0])), {"prompt", "chosen", "rejected"})
        sft = load_sft(self.root / "run" / "sft.jsonl")
        self.assertEqual([r.response for r in sft], [p.chosen_text for p in pairs])

    def test_train_toy_writes_snapshot_and_curve(self):
        self.call("run_pipeline")
        self.call("train_toy")
        self.assertTrue((self.root / "run" / "policy.json").exists())
        curve = (self.root / "run" / "loss_curve.csv").read_text().splitlines()
        self.assertEqual(curve[0], "epoch,mean_loss,mean_margin")
        self.assertEqual(len(curve), 10)
        train = RunManifest.objects.get(stage=Stage.TRAIN)
        self.assertIn(RunManifest.objects.get(stage=Stage.PAIR), train.parents.all())

    def test_compare_two_models(self):
        self.call("ingest")
        self.call("eval", workdir="run")
        self.call("ingest", workdir="other")
        self.call("eval", workdir="other", eval_model="llama2-7b")
        self.call(
            "compare", str(self.root / "run" / "eval_report.json"), str(self.root / "other" / "eval_report.json"),
            workdir="comparison",
        )
        text = (self.root / "comparison" / "comparison.md").read_text()
        self.assertIn("mathllama-7b", text)
        self.assertIn("llama2-7b", text)

    def test_report_formats(self):
        self.call("ingest")
        self.call("eval")
        self.call("report", report_format="json")
        report = EvalReport.from_dict(json.loads((self.root / "run" / "report.json").read_text()))
        self.assertEqual(set(report.per_task), set(POOLS))
        self.assertTrue(all(score.n_total == 100 for score in report.per_task.values()))

    def test_shift_over_a_prompts_file(self):
        prompts = self.root / "prompts.jsonl"
        prompts.write_text("".join(
            json.dumps({"prompt_id": f"p{i}", "prompt": f"How many hours pass between {i} am and noon?"}) + "\n"
            for i in range(4)
        ))
        self.call("ingest")
        self.call("shift", prompts_file=str(prompts))
        report = json.loads((self.root / "run" / "shift_report.json").read_text())
        self.assertAlmostEqual(sum(report["ratios"].values()), 100.0, delta=1e-9)
        self.assertEqual(report["base"], "llama2-7b")
        self.assertEqual(report["tuned"], "mathllama-7b")

    def test_three_rounds_are_lineage_linked(self):
        self.call("iterate", rounds="3")
        workdir = self.root / "run"
        summary = json.loads((workdir / "iterate.json").read_text())
        self.assertEqual(
            [r["generated_by"] for r in summary["rounds"]],
            ["mathllama-7b", "mathllama-7b@round-1", "mathllama-7b@round-2"],
        )
        for k in (1, 2, 3):
            self.assertTrue((workdir / f"round-{k}" / "pairs.jsonl").exists())
            self.assertTrue((workdir / f"round-{k}" / "policy.json").exists())
        trains = list(RunManifest.objects.filter(stage=Stage.TRAIN))
        generates = list(RunManifest.objects.filter(stage=Stage.GENERATE))
        self.assertEqual(len(trains), 3)
        for previous_train, generate in zip(trains, generates[1:]):
            self.assertIn(previous_train, generate.parents.all())
        final = RunManifest.objects.get(stage=Stage.ITERATE)
        self.assertEqual(set(final.parents.all()), set(RunManifest.objects.filter(stage__in=[Stage.PAIR, Stage.TRAIN])))

    def test_one_round_matches_the_base_pipeline(self):
        self.call("run_pipeline", workdir="base")
        self.call("iterate", workdir="iterated", rounds="1")
        base = tree(self.root / "base")
        round_one = tree(self.root / "iterated" / "round-1")
        self.assertEqual({name: round_one[name] for name in base}, base)

    def test_toy_policy_rounds(self):
        self.call("iterate", rounds="2", iterate_policy_source="toy", generate_limit="1")
        candidates = self.root / "run" / "round-2" / "candidates.jsonl"
        self.assertTrue(candidates.exists())
        self.assertTrue((self.root / "run" / "round-2" / "policy.json").exists())

    def test_zero_rounds_is_a_config_error(self):
        with self.assertRaises(CommandError) as ctx:
            self.call("iterate", rounds="0")
        self.assertEqual(ctx.exception.returncode, 2)

    def test_make_mock_corpus(self):
        out = self.call("make_mock_corpus", corpus_dir=str(self.root / "mock"), pool_size=3)
        self.assertIn("114 instances over 38 tasks", out)
        self.assertEqual(len(list((self.root / "mock").glob("*.jsonl"))), 38)
