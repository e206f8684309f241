import itertools
import random
import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from chronopref.artifacts import read_jsonl
from corpus.synthetic import build_synthetic_corpus
from llm_gateway.backends import MockBackend
from llm_gateway.gateway import Gateway
from llm_gateway.types import Completion, ModelHandle, ModelRole, SamplingParams
from prompting.templates import PromptKind
from sampler.candidates import CandidateSet, partition

from .scoring import (
    ScoredResponse,
    ScoringFailed,
    SelectionStrategy,
    parse_score,
    score_candidate,
    score_candidate_sets,
)
from .selection import PreferencePair, load_pairs, save_pairs, select_pair, select_pairs, verify_pairs

JUDGE = ModelHandle("mathllama-7b", "http://localhost:8000/v1", role=ModelRole.JUDGE)
JUDGE_PARAMS = SamplingParams(temperature=0.8, top_p=0.95)


class ScriptedBackend:
    """Returns ``texts[index]`` for sample ``index`` whatever the prompt."""

    def __init__(self, texts):
        self.texts = texts

    def complete(self, handle, prompt, params, index):
        return Completion(text=self.texts[index])


def aligned_set(instance_id, correct, wrong):
    size = len(correct) + len(wrong)
    return CandidateSet(
        instance_id=instance_id,
        prompt=f"prompt for {instance_id}",
        candidates=tuple((i, f"response {i}") for i in range(size)),
        correct_idx=frozenset(correct),
        wrong_idx=frozenset(wrong),
    )


def scored(instance_id, means):
    return [ScoredResponse.from_scores(instance_id, i, [m], PromptKind.JUDGE_CHOSEN) for i, m in means.items()]


class ParseScoreTests(SimpleTestCase):
    def test_direct_parse(self):
        self.assertEqual(parse_score("The response meets criteria 1-4. Score: 4"), 4.0)

    def test_out_of_range_clamps_with_warning(self):
        with self.assertLogs("critic.scoring", level="WARNING"):
            self.assertEqual(parse_score("Score: 7"), 5.0)

    def test_no_marker(self):
        self.assertIsNone(parse_score("no numeric verdict"))

    def test_final_marker_wins(self):
        self.assertEqual(parse_score("Score: 2 at first.\nOn reflection, Score: 3"), 3.0)
        self.assertIsNone(parse_score("Score: 2 then Score: pending"))


class ScoreCandidateTests(SimpleTestCase):
    def score(self, texts, k):
        gateway = Gateway(ScriptedBackend(texts))
        return score_candidate(gateway, JUDGE, "When?", "The answer is (A).", PromptKind.JUDGE_CHOSEN, k, JUDGE_PARAMS)

    def test_mean_of_three(self):
        result = self.score(["Score: 4", "Score: 5", "Score: 3"], 3)
        self.assertEqual(result.raw_scores, (4.0, 5.0, 3.0))
        self.assertEqual(result.mean_score, 4.0)

    def test_single_sample(self):
        self.assertEqual(self.score(["Score: 5"], 1).mean_score, 5.0)

    def test_unparseable_verdict_is_redrawn_once(self):
        result = self.score(["Score: 4", "unsure", "Score: 2", "Score: 5"], 3)
        self.assertEqual(result.raw_scores, (4.0, 5.0, 2.0))

    def test_all_unparseable_fails(self):
        with self.assertLogs("critic.scoring", level="WARNING"):
            with self.assertRaises(ScoringFailed):
                self.score(["a", "b", "c", "d", "e", "f"], 3)

    def test_mean_is_permutation_invariant_and_bounded(self):
        rng = random.Random(2)
        for _ in range(500):
            raw = [rng.choice([0, 1, 2, 3, 4, 5, 0.5, 4.5]) for _ in range(rng.randint(1, 7))]
            shuffled = raw[:]
            rng.shuffle(shuffled)
            first = ScoredResponse.from_scores("i", 0, raw, PromptKind.JUDGE_CHOSEN).mean_score
            second = ScoredResponse.from_scores("i", 0, shuffled, PromptKind.JUDGE_CHOSEN).mean_score
            self.assertEqual(first, second)
            self.assertTrue(0.0 <= first <= 5.0)


class ScoreCandidateSetsTests(SimpleTestCase):
    def setUp(self):
        corpus = build_synthetic_corpus({"relation": 3})
        self.instances = corpus.index()
        texts = ("The answer is (A).", "The answer is (B).", "The answer is (C).", "The answer is (D).")
        self.sets = [
            partition(CandidateSet(i.instance_id, "p", tuple(enumerate(texts))), i) for i in self.instances.values()
        ]
        self.gateway = Gateway(MockBackend(unparseable_rate=0.0))

    def test_hierarchical_uses_chosen_and_rejected_rubrics(self):
        scores, failed = score_candidate_sets(
            self.gateway, JUDGE, self.sets, self.instances, SelectionStrategy.HIERARCHICAL, 3, JUDGE_PARAMS
        )
        self.assertEqual(failed, [])
        self.assertEqual(len(scores), 12)
        for s in scores:
            candidate_set = next(c for c in self.sets if c.instance_id == s.instance_id)
            expected = PromptKind.JUDGE_CHOSEN if s.candidate_index in candidate_set.correct_idx else PromptKind.JUDGE_REJECTED
            self.assertEqual(s.judge_prompt_kind, expected)

    def test_baseline_uses_generic_rubric(self):
        scores, _ = score_candidate_sets(
            self.gateway, JUDGE, self.sets, self.instances, SelectionStrategy.LLM_JUDGE_BASELINE, 3, JUDGE_PARAMS
        )
        self.assertEqual({s.judge_prompt_kind for s in scores}, {PromptKind.JUDGE_GENERIC})

    def test_random_strategy_skips_judging(self):
        self.assertEqual(
            score_candidate_sets(self.gateway, JUDGE, self.sets, self.instances, SelectionStrategy.RANDOM, 3, JUDGE_PARAMS),
            ([], []),
        )
        self.assertEqual(self.gateway.calls, 0)

    def test_empty_candidate_is_excluded(self):
        instance = next(iter(self.instances.values()))
        broken = partition(CandidateSet(instance.instance_id, "p", ((0, ""), (1, "The answer is (A)."))), instance)
        with self.assertLogs("critic.scoring", level="WARNING"):
            scores, failed = score_candidate_sets(
                self.gateway, JUDGE, [broken], self.instances, SelectionStrategy.HIERARCHICAL, 1, JUDGE_PARAMS
            )
        self.assertEqual(failed, [(instance.instance_id, 0)])
        self.assertEqual([s.candidate_index for s in scores], [1])


class SelectPairTests(SimpleTestCase):
    def test_ties_go_to_the_lowest_index(self):
        candidate_set = aligned_set("i", correct=[0, 2], wrong=[1, 3])
        pair = select_pair(candidate_set, scored("i", {0: 3.0, 2: 5.0, 1: 2.0, 3: 2.0}), SelectionStrategy.HIERARCHICAL, 0)
        self.assertEqual((pair.chosen_index, pair.rejected_index), (2, 1))
        self.assertEqual((pair.chosen_score, pair.rejected_score), (5.0, 2.0))
        self.assertEqual(pair.chosen_text, "response 2")

    def test_empty_side_gives_no_pair(self):
        candidate_set = aligned_set("i", correct=[0, 1, 2], wrong=[])
        self.assertIsNone(select_pair(candidate_set, scored("i", {0: 1.0, 1: 2.0, 2: 3.0}), SelectionStrategy.HIERARCHICAL, 0))

    def test_random_strategy_is_seeded(self):
        candidate_set = aligned_set("i", correct=[0, 3], wrong=[1, 2, 4])
        first = select_pair(candidate_set, [], SelectionStrategy.RANDOM, seed=9)
        self.assertEqual(first, select_pair(candidate_set, [], SelectionStrategy.RANDOM, seed=9))
        self.assertIn(first.chosen_index, (0, 3))
        self.assertIn(first.rejected_index, (1, 2, 4))
        self.assertIsNone(first.chosen_score)
        picks = {
            (p.chosen_index, p.rejected_index)
            for p in (select_pair(candidate_set, [], SelectionStrategy.RANDOM, seed=s) for s in range(200))
        }
        self.assertEqual(picks, set(itertools.product((0, 3), (1, 2, 4))))

    def test_matches_brute_force_argmax(self):
        rng = random.Random(1)
        sets, scores, expected = [], [], {}
        for n in range(1000):
            size = rng.randint(1, 6)
            correct = {i for i in range(size) if rng.random() < 0.5}
            candidate_set = aligned_set(f"i{n:04d}", correct, set(range(size)) - correct)
            means = {i: float(rng.randint(0, 5)) for i in range(size)}
            sets.append(candidate_set)
            scores.extend(scored(candidate_set.instance_id, means))
            if correct and len(correct) < size:
                def best(group):
                    return next(i for i in sorted(group) if all(means[i] > means[j] or (means[i] == means[j] and i <= j) for j in group))
                expected[candidate_set.instance_id] = (best(correct), best(set(range(size)) - correct))

        pairs = select_pairs(sets, scores, SelectionStrategy.HIERARCHICAL, seed=0)
        self.assertEqual(len(pairs), len(expected))
        self.assertEqual({p.instance_id: (p.chosen_index, p.rejected_index) for p in pairs}, expected)

    def test_scoring_failures_are_excluded(self):
        candidate_set = aligned_set("i", correct=[0, 1], wrong=[2])
        pair = select_pair(candidate_set, scored("i", {1: 1.0, 2: 4.0}), SelectionStrategy.HIERARCHICAL, 0)
        self.assertEqual(pair.chosen_index, 1)


class PairArtifactTests(SimpleTestCase):
    def test_jsonl_format_and_gold_check(self):
        corpus = build_synthetic_corpus({"relation": 1})
        instance = corpus.instances["relation"][0]
        wrong = next(label for label in instance.option_labels if label != instance.gold)
        pair = PreferencePair(
            instance.instance_id, "prompt", f"The answer is ({instance.gold}).", f"The answer is ({wrong}).",
            4.0, 2.0, SelectionStrategy.HIERARCHICAL, 0, 1,
        )
        verify_pairs([pair], corpus.index())
        with tempfile.TemporaryDirectory() as tmp:
            path = save_pairs([pair], Path(tmp) / "pairs.jsonl")
            row = read_jsonl(path)[0]
            for key in ("instance_id", "prompt", "chosen", "rejected", "chosen_score", "rejected_score", "strategy"):
                self.assertIn(key, row)
            self.assertEqual(load_pairs(path), [pair])
