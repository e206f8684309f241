import csv
import math
import random
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from chronopref.exceptions import ConfigError, DataError
from critic.scoring import SelectionStrategy
from critic.selection import PreferencePair

from .export import export_sft, load_sft, save_sft
from .iteration import RoundResult, initial_policy, iterate, round_model_name
from .objective import NumericDomainError, PairLogProbs, batch_loss, dpo_grads, dpo_loss
from .synthetic import separable_pairs
from .toy_policy import OutOfVocabularyError, ToyPolicy, log_softmax
from .training import (
    DpoConfig,
    Scheduler,
    learning_rate_at,
    logit_gradients,
    preference_accuracy,
    reference_logprobs,
    train_toy,
    write_loss_curve,
)

BETAS = (0.01, 0.1, 1.0)


def with_margin(d):
    return PairLogProbs(lp_theta_pos=-5.0, lp_theta_neg=-5.0 - d, lp_ref_pos=-5.0, lp_ref_neg=-5.0)


def random_pair(rng):
    return PairLogProbs(*(rng.uniform(-5.0, -0.01) for _ in range(4)))


class DpoLossTests(SimpleTestCase):
    def test_equal_policy_and_reference_gives_ln2(self):
        for beta in BETAS:
            pair = PairLogProbs(-3.2, -7.1, -3.2, -7.1)
            self.assertAlmostEqual(dpo_loss(pair, beta), math.log(2), delta=1e-12)

    def test_worked_scalar(self):
        pair = PairLogProbs(-5.0, -6.0, -5.2, -5.5)
        self.assertAlmostEqual(pair.margin, 0.7, delta=1e-12)
        self.assertAlmostEqual(dpo_loss(pair, 0.1), math.log1p(math.exp(-0.07)), delta=1e-9)
        self.assertAlmostEqual(dpo_loss(pair, 0.1), 0.658760, delta=1e-6)

    def test_loss_decreases_towards_zero_with_margin(self):
        losses = [dpo_loss(with_margin(d), 1.0) for d in (-4, -1, 0, 1, 4, 4.99)]
        self.assertEqual(losses, sorted(losses, reverse=True))
        self.assertTrue(all(loss >= 0 for loss in losses))
        self.assertLess(dpo_loss(PairLogProbs(-0.01, -1e6, -1.0, -1.0), 1.0), 1e-12)

    def test_convexity_check(self):
        for d in (0.0, 0.3, 1.5, 4.0):
            total = dpo_loss(with_margin(d), 0.5) + dpo_loss(with_margin(-d), 0.5)
            if d == 0:
                self.assertAlmostEqual(total, 2 * math.log(2), delta=1e-12)
            else:
                self.assertGreater(total, 2 * math.log(2))

    def test_reference_shift_leaves_loss_unchanged(self):
        pair = PairLogProbs(-2.0, -3.0, -2.5, -2.75)
        shifted = PairLogProbs(-2.0, -3.0, -3.5, -3.75)
        self.assertAlmostEqual(dpo_loss(pair, 0.1), dpo_loss(shifted, 0.1), delta=1e-15)

    def test_domain_errors(self):
        with self.assertRaises(NumericDomainError):
            PairLogProbs(float("nan"), -1.0, -1.0, -1.0)
        with self.assertRaises(NumericDomainError):
            PairLogProbs(-1.0, float("-inf"), -1.0, -1.0)
        with self.assertRaises(NumericDomainError):
            PairLogProbs(0.5, -1.0, -1.0, -1.0)
        with self.assertRaises(NumericDomainError):
            dpo_loss(with_margin(0.0), 0.0)
        with self.assertRaises(NumericDomainError):
            dpo_grads(with_margin(0.0), 0.0)


class DpoGradTests(SimpleTestCase):
    def test_zero_margin(self):
        grads = dpo_grads(with_margin(0.0), 0.1)
        self.assertAlmostEqual(grads.lp_theta_pos, -0.05, delta=1e-15)
        self.assertAlmostEqual(grads.lp_theta_neg, 0.05, delta=1e-15)

    def test_matches_central_differences(self):
        rng = random.Random(0)
        h = 1e-6
        for _ in range(1000):
            pair = random_pair(rng)
            for beta in BETAS:
                grads = dpo_grads(pair, beta)
                self.assertEqual(grads.lp_theta_pos, -grads.lp_theta_neg)
                self.assertEqual((grads.lp_ref_pos, grads.lp_ref_neg), (0.0, 0.0))
                for field in ("lp_theta_pos", "lp_theta_neg"):
                    values = {f: getattr(pair, f) for f in ("lp_theta_pos", "lp_theta_neg", "lp_ref_pos", "lp_ref_neg")}
                    up = dict(values, **{field: values[field] + h})
                    down = dict(values, **{field: values[field] - h})
                    numeric = (dpo_loss(PairLogProbs(**up), beta) - dpo_loss(PairLogProbs(**down), beta)) / (2 * h)
                    analytic = getattr(grads, field)
                    self.assertLessEqual(abs(analytic - numeric), 1e-6 * abs(analytic))


class BatchLossTests(SimpleTestCase):
    def test_identical_pairs(self):
        pair = PairLogProbs(-1.0, -2.0, -1.5, -1.5)
        mean, margins = batch_loss([pair] * 4, 0.1)
        self.assertAlmostEqual(mean, dpo_loss(pair, 0.1), delta=1e-15)
        self.assertEqual(margins, [0.1 * pair.margin] * 4)

    def test_zero_margins(self):
        self.assertAlmostEqual(batch_loss([with_margin(0.0)] * 2, 0.1)[0], math.log(2), delta=1e-15)

    def test_matches_brute_force_mean(self):
        rng = random.Random(5)
        batch = [random_pair(rng) for _ in range(32)]
        expected = sum(dpo_loss(p, 0.1) for p in batch) / 32
        self.assertAlmostEqual(batch_loss(batch, 0.1)[0], expected, delta=1e-12)

    def test_empty_batch(self):
        with self.assertRaises(NumericDomainError):
            batch_loss([], 0.1)


class ToyPolicyTests(SimpleTestCase):
    def setUp(self):
        self.pairs = separable_pairs(5)
        self.policy = ToyPolicy.from_pairs(self.pairs)

    def test_rows_are_distributions(self):
        trained = train_toy(self.policy, self.pairs, DpoConfig.toy(batch_size=2)).policy
        self.assertTrue(trained.rows)
        for row in trained.rows.values():
            self.assertAlmostEqual(float(np.exp(log_softmax(row)).sum()), 1.0, delta=1e-9)

    def test_uniform_sequence_logprob(self):
        pair = self.pairs[0]
        tokens = len(pair.chosen_text.split()) + 1
        expected = -tokens * math.log(len(self.policy.vocab))
        self.assertAlmostEqual(self.policy.sequence_logprob(pair.prompt_text, pair.chosen_text), expected, delta=1e-9)

    def test_snapshot_round_trip(self):
        trained = train_toy(self.policy, self.pairs, DpoConfig.toy(epochs=2)).policy
        with tempfile.TemporaryDirectory() as tmp:
            path = trained.save(Path(tmp) / "policy.json")
            loaded = ToyPolicy.load(path)
        self.assertEqual(loaded.to_dict(), trained.to_dict())
        self.assertEqual(loaded.config_hash, DpoConfig.toy(epochs=2).config_hash())

    def test_extended_keeps_existing_logits(self):
        trained = train_toy(self.policy, self.pairs, DpoConfig.toy(epochs=2)).policy
        wider = trained.extended(["zebra"])
        self.assertIn("zebra", wider.vocab)
        self.assertEqual(wider.vocab[-1], ToyPolicy.EOS)
        for key, row in trained.rows.items():
            for token in trained.vocab:
                self.assertEqual(wider.rows[key][wider.token_id(token)], row[trained.token_id(token)])
            self.assertEqual(wider.rows[key][wider.token_id("zebra")], 0.0)

    def test_unknown_token_is_named(self):
        with self.assertRaisesMessage(OutOfVocabularyError, "'zebra'"):
            self.policy.check_text("The answer is zebra")


class TrainToyTests(SimpleTestCase):
    def test_separable_pairs_train_to_preference(self):
        pairs = separable_pairs(50)
        policy = ToyPolicy.from_pairs(pairs)
        result = train_toy(policy, pairs, DpoConfig.toy())
        losses = result.losses
        self.assertEqual(len(losses), 9)
        self.assertAlmostEqual(losses[0], math.log(2), delta=1e-12)
        for earlier, later in zip(losses, losses[1:]):
            self.assertLess(later, earlier)
        self.assertGreaterEqual(preference_accuracy(result.policy, pairs), 0.95)
        self.assertEqual(preference_accuracy(result.reference, pairs), 0.0)
        self.assertEqual(train_toy(policy, pairs, DpoConfig.toy()).losses, losses)

    def test_zero_epochs_is_identity(self):
        pairs = separable_pairs(10)
        policy = ToyPolicy.from_pairs(pairs)
        result = train_toy(policy, pairs, DpoConfig.toy(epochs=0))
        self.assertEqual(result.curve, [])
        self.assertEqual(result.policy.to_dict()["rows"], policy.to_dict()["rows"])
        self.assertEqual(result.policy.vocab, policy.vocab)

    def test_beta_scales_gradients_without_changing_signs(self):
        pairs = separable_pairs(32)
        policy = ToyPolicy.from_pairs(pairs)
        refs = reference_logprobs(policy, pairs)
        small = logit_gradients(policy, refs, pairs, 0.1)
        large = logit_gradients(policy, refs, pairs, 0.2)
        self.assertEqual(small.keys(), large.keys())
        for key in small:
            np.testing.assert_array_equal(np.sign(small[key]), np.sign(large[key]))
        self.assertNotEqual(
            train_toy(policy, pairs, DpoConfig.toy(beta=0.1)).losses,
            train_toy(policy, pairs, DpoConfig.toy(beta=0.2)).losses,
        )

    def test_out_of_vocabulary_pair(self):
        pairs = separable_pairs(3)
        policy = ToyPolicy.from_pairs(pairs[:1])
        odd = PreferencePair("odd", "q", "unseen words here", "The answer", None, None, SelectionStrategy.RANDOM)
        with self.assertRaisesMessage(OutOfVocabularyError, "'unseen'"):
            train_toy(policy, [odd], DpoConfig.toy())

    def test_identical_responses_are_rejected(self):
        pair = separable_pairs(1)[0]
        same = PreferencePair("same", pair.prompt_text, pair.chosen_text, pair.chosen_text, 5.0, 5.0, SelectionStrategy.HIERARCHICAL)
        with self.assertRaises(DataError):
            train_toy(ToyPolicy.from_pairs([pair]), [same], DpoConfig.toy())

    def test_loss_curve_csv(self):
        pairs = separable_pairs(8)
        result = train_toy(ToyPolicy.from_pairs(pairs), pairs, DpoConfig.toy(epochs=3))
        with tempfile.TemporaryDirectory() as tmp:
            path = write_loss_curve(result.curve, Path(tmp) / "loss_curve.csv")
            with open(path, newline="") as handle:
                rows = list(csv.reader(handle))
        self.assertEqual(rows[0], ["epoch", "mean_loss", "mean_margin"])
        self.assertEqual([int(r[0]) for r in rows[1:]], [1, 2, 3])
        self.assertEqual([float(r[1]) for r in rows[1:]], result.losses)


class DpoConfigTests(SimpleTestCase):
    def test_defaults(self):
        cfg = DpoConfig()
        self.assertEqual(
            (cfg.beta, cfg.learning_rate, cfg.batch_size, cfg.epochs, cfg.warmup_ratio, cfg.scheduler),
            (0.1, 5e-7, 32, 9, 0.1, Scheduler.LINEAR),
        )
        self.assertEqual(DpoConfig.toy().learning_rate, 50.0)

    def test_validation(self):
        for bad in ({"beta": 0}, {"batch_size": 0}, {"epochs": -1}, {"warmup_ratio": 1.0}):
            with self.assertRaises(ConfigError):
                DpoConfig(**bad)
        with self.assertRaises(ValueError):
            DpoConfig(scheduler="Exponential")

    def test_linear_warmup_then_decay(self):
        cfg = DpoConfig(learning_rate=1.0, warmup_ratio=0.1)
        rates = [learning_rate_at(step, 20, cfg) for step in range(20)]
        self.assertEqual(rates[:2], [0.5, 1.0])
        self.assertEqual(rates[2], 1.0)
        self.assertEqual(rates[2:], sorted(rates[2:], reverse=True))
        self.assertGreater(rates[-1], 0.0)

    def test_cosine_decay(self):
        cfg = DpoConfig(learning_rate=1.0, warmup_ratio=0.0, scheduler=Scheduler.COSINE)
        self.assertEqual(learning_rate_at(0, 10, cfg), 1.0)
        self.assertAlmostEqual(learning_rate_at(5, 10, cfg), 0.5, delta=1e-12)


class ExportSftTests(SimpleTestCase):
    def test_one_record_per_pair_round_trip(self):
        pairs = separable_pairs(10)
        records = export_sft(pairs)
        self.assertEqual(len(records), 10)
        self.assertEqual(records[0].response, pairs[0].chosen_text)
        with tempfile.TemporaryDirectory() as tmp:
            path = save_sft(records, Path(tmp) / "sft.jsonl")
            self.assertEqual(load_sft(path), records)

    def test_empty_and_degenerate_pairs(self):
        with self.assertRaises(DataError):
            export_sft([])
        pair = separable_pairs(1)[0]
        same = PreferencePair("same", "q", pair.chosen_text, pair.chosen_text, 1.0, 1.0, SelectionStrategy.HIERARCHICAL)
        with self.assertRaises(DataError):
            export_sft([same])


class IterateTests(SimpleTestCase):
    def test_round_names(self):
        self.assertEqual(round_model_name("mathllama-7b", 1), "mathllama-7b")
        self.assertEqual(round_model_name("mathllama-7b", 3), "mathllama-7b@round-2")

    def test_rounds_must_be_positive(self):
        with self.assertRaises(ConfigError):
            iterate(lambda plan, previous: None, 0, "/tmp/work", "m")

    def test_three_rounds_link_to_previous_snapshots(self):
        def run_round(plan, previous):
            return RoundResult(plan, plan.workdir / "pairs.jsonl", plan.workdir / "policy.json")

        results = iterate(run_round, 3, "/tmp/work", "m")
        self.assertEqual([r.plan.workdir for r in results], [Path("/tmp/work") / f"round-{k}" for k in (1, 2, 3)])
        self.assertIsNone(results[0].plan.previous_snapshot)
        self.assertEqual(results[2].plan.previous_snapshot, results[1].snapshot_path)
        self.assertEqual(results[1].plan.policy_model, "m@round-1")

    def test_failed_round_halts(self):
        seen = []

        def run_round(plan, previous):
            seen.append(plan.index)
            if plan.index == 2:
                raise DataError("no pairs")
            return RoundResult(plan, plan.workdir / "pairs.jsonl", plan.workdir / "policy.json")

        with self.assertLogs("dpo.iteration", level="ERROR"):
            with self.assertRaises(DataError):
                iterate(run_round, 3, "/tmp/work", "m")
        self.assertEqual(seen, [1, 2])

    def test_initial_policy_continues_previous_snapshot(self):
        pairs = separable_pairs(4)
        trained = train_toy(ToyPolicy.from_pairs(pairs), pairs, DpoConfig.toy(epochs=2)).policy
        with tempfile.TemporaryDirectory() as tmp:
            path = trained.save(Path(tmp) / "policy.json")
            follow_up = initial_policy(separable_pairs(6), path)
        self.assertEqual(follow_up.rows.keys(), trained.rows.keys())
        self.assertTrue(set(trained.vocab) <= set(follow_up.vocab))
