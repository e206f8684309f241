"""Stage bodies and the artifacts they exchange.

Every stage reads and writes fixed file names inside one working directory,
so a stage can be re-run on its own from the command line. Iterative rounds
use ``<workdir>/round-<k>/`` with the same layout.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path

from chronopref.artifacts import iter_jsonl, read_json, write_json_atomic, write_jsonl_atomic, write_text_atomic
from chronopref.exceptions import ConfigError, DataError
from corpus.loader import Instance, load_corpus
from corpus.splits import load_splits, make_splits, save_splits
from corpus.taxonomy import TASKS_BY_ID, tasks_in
from critic.scoring import load_scores, save_scores, score_candidate_sets
from critic.selection import load_pairs, save_pairs, select_pairs, verify_pairs
from dpo.export import export_sft, save_sft
from dpo.iteration import PolicySource, RoundResult, initial_policy, iterate, round_model_name
from dpo.toy_policy import ToyPolicy
from dpo.training import DpoConfig, train_toy, write_loss_curve
from evalharness.evaluation import EvalReport, evaluate, task_templates
from evalharness.reports import ReportFormat, compare, parse_report, render_comparison, render_report
from llm_gateway.backends import ToyPolicyBackend
from llm_gateway.gateway import Gateway
from llm_gateway.types import ModelHandle, ModelRole, SamplingParams
from prompting.renderer import RenderedPrompt, render_eval_prompt
from prompting.templates import TemplateLibrary
from sampler.candidates import generate_all, load_candidate_sets, partition, save_candidate_sets
from tokenshift.analysis import analyze, load_wordlists, render_json, render_markdown, save_records

from .models import Stage
from .stages import path_sha256, run_stage

logger = logging.getLogger(__name__)

INSTANCES = "instances.jsonl"
SPLITS = "splits.json"
CANDIDATES = "candidates.jsonl"
ALIGNED = "candidates_aligned.jsonl"
SCORES = "scores.jsonl"
JUDGE_FAILURES = "judge_failures.jsonl"
PAIRS = "pairs.jsonl"
GRADED = "graded.jsonl"
EVAL_REPORT = "eval_report.json"
POLICY = "policy.json"
LOSS_CURVE = "loss_curve.csv"
DPO_PAIRS = "dpo_pairs.jsonl"
SFT = "sft.jsonl"
SHIFT_POSITIONS = "shift_positions.jsonl"
SHIFT_REPORT = "shift_report.json"
SHIFT_MARKDOWN = "shift_report.md"
COMPARISON = "comparison.md"
ITERATION = "iterate.json"

REPORT_FILES = {
    ReportFormat.MARKDOWN: "report.md",
    ReportFormat.CSV: "report.csv",
    ReportFormat.JSON: "report.json",
}

BASE_STAGES = ("ingest", "generate", "align", "judge", "pair", "eval", "report")


def load_instances(path):
    instances = {}
    for line_no, record in iter_jsonl(path):
        task = TASKS_BY_ID.get(record.get("task_id"))
        if task is None:
            raise DataError(f"{path}:{line_no}: unknown task {record.get('task_id')!r}")
        try:
            instance = Instance.from_dict(record, task)
        except ValueError as exc:
            raise DataError(f"{path}:{line_no}: {exc}") from exc
        instances[instance.instance_id] = instance
    return instances


def load_prompts(path):
    """``{"prompt_id", "prompt"}`` JSONL records as raw user prompts."""
    prompts = []
    for line_no, record in iter_jsonl(path):
        if "prompt" not in record:
            raise DataError(f"{path}:{line_no}: prompt record has no 'prompt' field")
        prompts.append(RenderedPrompt.raw(record["prompt"], str(record.get("prompt_id", line_no))))
    return prompts


@dataclass(frozen=True)
class RoundContext:
    """Which policy generates, and what it was trained from."""

    index: int = 1
    policy_model: str = ""
    previous_snapshot: Path = None
    fresh_instances: bool = False
    rounds: int = 1


class PipelineRun:
    def __init__(self, config, workdir=None, round_context=None):
        self.config = config
        self.workdir = Path(workdir or config["workdir"])
        self.round = round_context or RoundContext(policy_model=config["policy_model"])
        self._instances = None
        self._gateway = None

    def path(self, name):
        return self.workdir / name

    # --- MODELS AND GATEWAY ---

    @property
    def serves_toy_policy(self):
        return (
            self.round.previous_snapshot is not None
            and self.config["iterate_policy_source"] == PolicySource.TOY
        )

    def handle(self, name, role=ModelRole.POLICY, endpoint=None, api_key_env=None):
        return ModelHandle(
            name,
            endpoint or self.config["policy_endpoint"],
            self.config["policy_api_key_env"] if api_key_env is None else api_key_env,
            role,
        )

    def policy_handle(self):
        return self.handle(self.round.policy_model)

    def judge_handle(self):
        if self.config["judge_model"]:
            return self.handle(
                self.config["judge_model"], ModelRole.JUDGE,
                self.config["judge_endpoint"], self.config["judge_api_key_env"] or self.config["policy_api_key_env"],
            )
        # A toy policy cannot write verdicts; the base policy judges in its place.
        name = self.config["policy_model"] if self.serves_toy_policy else self.round.policy_model
        return self.handle(name, ModelRole.JUDGE)

    def eval_handle(self):
        return self.handle(self.config["eval_model"] or self.round.policy_model)

    def gateway(self, handles):
        if self._gateway is None:
            answer_key = {i.instance_id: (i.gold, i.option_labels) for i in self.instances().values()}
            gateway = Gateway.from_config(self.config, answer_key=answer_key)
            if self.serves_toy_policy:
                policy = ToyPolicy.load(self.round.previous_snapshot)
                gateway = gateway.with_backend(ToyPolicyBackend({self.round.policy_model: policy}, fallback=gateway.backend))
            self._gateway = gateway
        self._gateway.require_credentials(handles)
        return self._gateway

    # --- SHARED INPUTS ---

    def instances(self):
        if self._instances is None:
            self._instances = load_instances(self.path(INSTANCES))
        return self._instances

    def splits(self):
        return load_splits(self.path(SPLITS))

    def templates(self, split_set, task_ids=None):
        library = TemplateLibrary(self.config["template_dir"])
        return task_templates(
            library, self.config["eval_template"], split_set, self.instances(),
            shots=self.config["shots"], exemplar_dir=self.config["exemplar_dir"] or None, task_ids=task_ids,
        )

    def sampling_params(self, n=1):
        return SamplingParams(
            temperature=self.config["temperature"],
            top_p=self.config["top_p"],
            n=n,
            max_tokens=self.config["max_tokens"],
            seed=self.config["seed"],
        )

    def eval_params(self):
        if self.config["eval_temperature"] == 0:
            return SamplingParams.greedy(max_tokens=self.config["max_tokens"])
        return SamplingParams(
            temperature=self.config["eval_temperature"],
            top_p=self.config["top_p"],
            max_tokens=self.config["max_tokens"],
            seed=self.config["seed"],
        )

    def snapshot_inputs(self):
        return [self.round.previous_snapshot] if self.round.previous_snapshot else []

    def _stage(self, stage, inputs, outputs, produce):
        return run_stage(stage, self.config, self.workdir, inputs, outputs, produce)

    # --- STAGES ---

    def ingest(self):
        corpus_dir = self.config["corpus_dir"]
        if not corpus_dir:
            raise ConfigError("corpus_dir is not set")

        def produce(staging):
            corpus = load_corpus(corpus_dir)
            split_set = make_splits(corpus, self.config["seed"])
            write_jsonl_atomic(staging / INSTANCES, [i.to_dict() for i in sorted(corpus.all_instances(), key=lambda i: i.instance_id)])
            save_splits(split_set, staging / SPLITS)
            logger.info("ingested %d instances over %d tasks", len(corpus), len(corpus.tasks))

        result = self._stage(Stage.INGEST, [corpus_dir], [INSTANCES, SPLITS], produce)
        self._instances = None
        return result

    def generation_ids(self, split_set):
        """Training ids of the optimization category, capped per task.

        With fresh instances each round takes the next slice of every task's
        training ids instead of the same leading slice.
        """
        wanted = {task.task_id for task in tasks_in(self.config["optimize_category"])}
        limit = self.config["generate_limit"]
        ids = []
        for manifest in split_set.manifests:
            if manifest.task_id not in wanted:
                continue
            train = list(manifest.train_ids)
            if self.round.fresh_instances:
                size = limit or math.ceil(len(train) / self.round.rounds)
                start = (self.round.index - 1) * size
                train = train[start:start + size]
            elif limit:
                train = train[:limit]
            ids.extend(train)
        return sorted(ids)

    def generate(self):
        def produce(staging):
            split_set = self.splits()
            instances = self.instances()
            ids = self.generation_ids(split_set)
            if not ids:
                raise DataError(f"no {self.config['optimize_category']} training instances to generate for")
            selected = [instances[i] for i in ids]
            templates = self.templates(split_set, task_ids={i.task_id for i in selected})
            policy = self.policy_handle()
            gateway = self.gateway([policy])
            sets = generate_all(gateway, policy, selected, templates, self.sampling_params(self.config["n_candidates"]))
            save_candidate_sets(sets, staging / CANDIDATES)

        inputs = [self.path(INSTANCES), self.path(SPLITS)] + self.snapshot_inputs()
        return self._stage(Stage.GENERATE, inputs, [CANDIDATES], produce)

    def align(self):
        def produce(staging):
            instances = self.instances()
            sets = [partition(s, instances[s.instance_id]) for s in load_candidate_sets(self.path(CANDIDATES))]
            save_candidate_sets(sets, staging / ALIGNED)
            correct = sum(len(s.correct_idx) for s in sets)
            total = sum(len(s.candidates) for s in sets)
            logger.info("%d of %d candidates align with gold", correct, total)

        return self._stage(Stage.ALIGN, [self.path(CANDIDATES), self.path(INSTANCES)], [ALIGNED], produce)

    def judge(self):
        def produce(staging):
            judge = self.judge_handle()
            scores, failed = score_candidate_sets(
                self.gateway([judge]), judge, load_candidate_sets(self.path(ALIGNED)), self.instances(),
                self.config["strategy"], self.config["judge_samples"], self.sampling_params(),
                include_gold=self.config["judge_include_gold"],
            )
            save_scores(scores, staging / SCORES)
            write_jsonl_atomic(
                staging / JUDGE_FAILURES,
                [{"instance_id": instance_id, "candidate_index": index} for instance_id, index in sorted(failed)],
            )

        return self._stage(Stage.JUDGE, [self.path(ALIGNED), self.path(INSTANCES)], [SCORES, JUDGE_FAILURES], produce)

    def pair(self):
        def produce(staging):
            pairs = select_pairs(
                load_candidate_sets(self.path(ALIGNED)), load_scores(self.path(SCORES)),
                self.config["strategy"], self.config["seed"],
            )
            verify_pairs(pairs, self.instances())
            save_pairs(pairs, staging / PAIRS)

        inputs = [self.path(ALIGNED), self.path(SCORES), self.path(INSTANCES)]
        return self._stage(Stage.PAIR, inputs, [PAIRS], produce)

    def eval(self):
        def produce(staging):
            split_set = self.splits()
            model = self.eval_handle()
            report = evaluate(
                self.gateway([model]), model, split_set, self.instances(), self.templates(split_set),
                params=self.eval_params(), tolerance=self.config["eval_failure_tolerance"],
                rows_path=staging / GRADED,
                shots=self.config["shots"],
            )
            write_text_atomic(staging / EVAL_REPORT, render_report(report, ReportFormat.JSON))

        return self._stage(Stage.EVAL, [self.path(INSTANCES), self.path(SPLITS)], [GRADED, EVAL_REPORT], produce)

    def report_name(self):
        return REPORT_FILES[ReportFormat(self.config["report_format"])]

    def report(self):
        name = self.report_name()

        def produce(staging):
            report = EvalReport.from_dict(read_json(self.path(EVAL_REPORT)))
            write_text_atomic(staging / name, render_report(report, self.config["report_format"]))

        return self._stage(Stage.REPORT, [self.path(EVAL_REPORT)], [name], produce)

    def train_toy(self):
        def produce(staging):
            pairs = load_pairs(self.path(PAIRS))
            cfg = DpoConfig.toy(
                beta=self.config["beta"],
                learning_rate=self.config["learning_rate"],
                batch_size=self.config["batch_size"],
                epochs=self.config["epochs"],
                warmup_ratio=self.config["warmup_ratio"],
                scheduler=self.config["scheduler"],
                seed=self.config["seed"],
            )
            result = train_toy(initial_policy(pairs, self.round.previous_snapshot), pairs, cfg)
            result.policy.save(staging / POLICY)
            write_loss_curve(result.curve, staging / LOSS_CURVE)

        inputs = [self.path(PAIRS)] + self.snapshot_inputs()
        return self._stage(Stage.TRAIN, inputs, [POLICY, LOSS_CURVE], produce)

    def export_pairs(self):
        def produce(staging):
            pairs = load_pairs(self.path(PAIRS))
            if not pairs:
                raise DataError("no preference pairs to export")
            write_jsonl_atomic(
                staging / DPO_PAIRS,
                [{"prompt": p.prompt_text, "chosen": p.chosen_text, "rejected": p.rejected_text} for p in pairs],
            )

        return self._stage(Stage.EXPORT, [self.path(PAIRS)], [DPO_PAIRS], produce)

    def export_sft(self):
        def produce(staging):
            save_sft(export_sft(load_pairs(self.path(PAIRS))), staging / SFT)

        return self._stage(Stage.EXPORT, [self.path(PAIRS)], [SFT], produce)

    def shift_prompts(self):
        if self.config["prompts_file"]:
            return load_prompts(self.config["prompts_file"])
        split_set = self.splits()
        templates = self.templates(split_set)
        instances = self.instances()
        return [
            render_eval_prompt(templates[m.task_id], instances[i], shots=len(templates[m.task_id].exemplars), allow_zero_shot=True)
            for m in split_set.manifests for i in m.eval_ids
        ]

    def shift(self):
        if not self.config["base_model"]:
            raise ConfigError("shift needs base_model")

        def produce(staging):
            base = self.handle(self.config["base_model"], ModelRole.REFERENCE)
            tuned = self.handle(self.config["tuned_model"] or self.round.policy_model)
            report, records = analyze(
                base, tuned, self.shift_prompts(), self.gateway([base, tuned]),
                marginal_max=self.config["marginal_max"],
                top_k=self.config["shift_top_logprobs"],
                max_tokens=self.config["shift_max_tokens"],
                wordlists=load_wordlists(self.config["wordlist_dir"]),
            )
            save_records(records, staging / SHIFT_POSITIONS)
            write_text_atomic(staging / SHIFT_REPORT, render_json(report))
            write_text_atomic(staging / SHIFT_MARKDOWN, render_markdown(report))

        if self.config["prompts_file"]:
            inputs = [self.config["prompts_file"], self.path(INSTANCES)]
        else:
            inputs = [self.path(INSTANCES), self.path(SPLITS)]
        return self._stage(Stage.SHIFT, inputs, [SHIFT_POSITIONS, SHIFT_REPORT, SHIFT_MARKDOWN], produce)

    def compare(self, report_paths):
        report_paths = [Path(p) for p in report_paths]
        if len(report_paths) < 2:
            raise ConfigError("compare needs at least two reports")

        def produce(staging):
            reports = []
            for path in report_paths:
                fmt = ReportFormat.CSV if path.suffix == ".csv" else ReportFormat.JSON
                reports.append(parse_report(path.read_text(encoding="utf-8"), fmt))
            write_text_atomic(staging / COMPARISON, render_comparison(compare(reports)))

        return self._stage(Stage.REPORT, report_paths, [COMPARISON], produce)

    def run_base(self):
        """The seven base stages in order; returns their results."""
        return [getattr(self, name)() for name in BASE_STAGES]


def run_iterations(config):
    """``rounds`` base pipelines, each followed by toy training, plus a lineage record."""
    workdir = Path(config["workdir"])
    rounds = config["rounds"]
    all_results = []

    def run_round(plan, previous):
        context = RoundContext(
            index=plan.index,
            policy_model=plan.policy_model,
            previous_snapshot=plan.previous_snapshot,
            fresh_instances=plan.fresh_instances,
            rounds=rounds,
        )
        run = PipelineRun(config, plan.workdir, context)
        results = run.run_base()
        results.append(run.train_toy())
        all_results.extend(results)
        return RoundResult(
            plan=plan,
            pairs_path=run.path(PAIRS),
            snapshot_path=run.path(POLICY),
            manifest_ids=tuple(r.manifest.run_id for r in results),
        )

    round_results = iterate(run_round, rounds, workdir, config["policy_model"], config["iterate_fresh_instances"])

    def produce(staging):
        write_json_atomic(staging / ITERATION, {
            "policy_model": config["policy_model"],
            "policy_source": config["iterate_policy_source"],
            "rounds": [
                {
                    "index": r.plan.index,
                    "generated_by": round_model_name(config["policy_model"], r.plan.index),
                    "pairs": r.pairs_path.relative_to(workdir).as_posix(),
                    "pairs_sha256": path_sha256(r.pairs_path),
                    "policy": r.snapshot_path.relative_to(workdir).as_posix(),
                    "policy_sha256": path_sha256(r.snapshot_path),
                }
                for r in round_results
            ],
        })

    inputs = [path for r in round_results for path in (r.pairs_path, r.snapshot_path)]
    summary = run_stage(Stage.ITERATE, config, workdir, inputs, [ITERATION], produce)
    return round_results, all_results + [summary]
