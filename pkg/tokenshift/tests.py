import json
import random
import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from chronopref.exceptions import DataError
from llm_gateway.backends import MockBackend
from llm_gateway.exceptions import CapabilityError
from llm_gateway.gateway import Gateway, GatewayMode
from llm_gateway.types import Completion, ModelHandle, TokenLogprob
from prompting.renderer import RenderedPrompt

from .analysis import (
    PositionRecord,
    ShiftClass,
    ShiftDomainError,
    ShiftReport,
    analyze,
    classify_position,
    load_records,
    load_wordlists,
    render_json,
    render_markdown,
    save_records,
    summarize,
)

BASE = ModelHandle("llama2-7b", "http://localhost:8000/v1")
TUNED = ModelHandle("chronopref-7b", "http://localhost:8000/v1")
FILLER = (" a", " b", " c", " d", " e", " f")


class RankFixtureBackend:
    """Tuned model says ``tokens``; the base model puts token j at ``ranks[j]`` of its top-k."""

    def __init__(self, tokens, ranks, alternatives=True):
        self.tokens = tokens
        self.ranks = ranks
        self.alternatives = alternatives

    def complete(self, handle, prompt, params, index):
        return Completion(text="".join(self.tokens))

    def score_tokens(self, handle, prompt, continuation, top_logprobs=0):
        scored = []
        for token, rank in zip(self.tokens, self.ranks):
            alternatives = []
            others = iter(f for f in FILLER if f != token)
            for r in range(1, top_logprobs + 1):
                alternatives.append((token if r == rank else next(others), -0.5 * r))
            scored.append(TokenLogprob(token, -0.5 * rank, tuple(alternatives) if self.alternatives else ()))
        return scored


def records_with(tokens_and_ranks, marginal_max=3):
    return [
        PositionRecord("p", i, token, rank, classify_position(rank, marginal_max))
        for i, (token, rank) in enumerate(tokens_and_ranks)
    ]


class ClassifyPositionTests(SimpleTestCase):
    def test_boundaries(self):
        self.assertEqual(classify_position(1, 3), ShiftClass.UNSHIFTED)
        self.assertEqual(classify_position(2, 3), ShiftClass.MARGINAL)
        self.assertEqual(classify_position(3, 3), ShiftClass.MARGINAL)
        self.assertEqual(classify_position(4, 3), ShiftClass.SHIFTED)

    def test_rank_below_one(self):
        with self.assertRaises(ShiftDomainError):
            classify_position(0, 3)

    def test_monotone_in_rank(self):
        order = [ShiftClass.UNSHIFTED, ShiftClass.MARGINAL, ShiftClass.SHIFTED]
        for marginal_max in (1, 2, 3, 5):
            levels = [order.index(classify_position(rank, marginal_max)) for rank in range(1, 12)]
            self.assertEqual(levels, sorted(levels))


class AnalyzeTests(SimpleTestCase):
    def test_hand_enumerated_ranks(self):
        gateway = Gateway(RankFixtureBackend([" The", " week", " has", " days"], [1, 1, 2, 5]))
        report, records = analyze(BASE, TUNED, [RenderedPrompt.raw("How long is a week?", "q1")], gateway)
        self.assertEqual([r.base_rank_of_tuned_token for r in records], [1, 1, 2, 5])
        self.assertEqual(report.ratios, (50.0, 25.0, 25.0))
        self.assertEqual(report.top_shifted_tokens, (("days", 1),))

    def test_missing_from_top_k_ranks_k_plus_one(self):
        gateway = Gateway(RankFixtureBackend([" hour"], [9]))
        _, records = analyze(BASE, TUNED, [RenderedPrompt.raw("q", "q")], gateway, top_k=5)
        self.assertEqual(records[0].base_rank_of_tuned_token, 6)
        self.assertEqual(records[0].classification, ShiftClass.SHIFTED)

    def test_identical_models_are_unshifted(self):
        prompts = [RenderedPrompt.raw(f"Describe the schedule for day {i}.", f"q{i}") for i in range(5)]
        with tempfile.TemporaryDirectory() as tmp:
            gateway = Gateway(MockBackend(), GatewayMode.RECORD, tmp)
            report, _ = analyze(BASE, BASE, prompts, gateway)
            replayed, _ = analyze(BASE, BASE, prompts, Gateway(None, GatewayMode.REPLAY, tmp))
        self.assertEqual(report.ratios, (100.0, 0.0, 0.0))
        self.assertEqual(report.top_shifted_tokens, ())
        self.assertEqual(replayed, report)

    def test_mock_models_shift_and_sum_to_100(self):
        prompts = [RenderedPrompt.raw(f"What happens after noon on day {i}?", f"q{i}") for i in range(20)]
        report, records = analyze(BASE, TUNED, prompts, Gateway(MockBackend()))
        self.assertAlmostEqual(sum(report.ratios), 100.0, delta=1e-9)
        self.assertGreater(report.ratios[2], 0.0)
        shifted = sum(r.classification == ShiftClass.SHIFTED for r in records)
        self.assertLessEqual(sum(count for _, count in report.top_shifted_tokens), shifted)

    def test_no_alternatives_is_a_capability_error(self):
        gateway = Gateway(RankFixtureBackend([" week"], [1], alternatives=False))
        with self.assertRaises(CapabilityError):
            analyze(BASE, TUNED, [RenderedPrompt.raw("q", "q")], gateway)

    def test_top_k_must_cover_marginal_band(self):
        with self.assertRaises(ShiftDomainError):
            analyze(BASE, TUNED, [], Gateway(MockBackend()), marginal_max=5, top_k=3)


class SummarizeTests(SimpleTestCase):
    def test_ties_break_lexicographically(self):
        records = records_with([(" week", 6)] * 7 + [(" hour", 6)] * 7 + [(" day", 6)] * 2)
        report = summarize("base", "tuned", records)
        self.assertEqual(report.top_shifted_tokens, (("hour", 7), ("week", 7), ("day", 2)))

    def test_top_list_is_capped_and_sorted(self):
        rng = random.Random(4)
        records = records_with([(f" t{rng.randint(0, 400)}", rng.randint(1, 8)) for _ in range(3000)])
        report = summarize("base", "tuned", records)
        self.assertLessEqual(len(report.top_shifted_tokens), 200)
        keys = [(-count, token) for token, count in report.top_shifted_tokens]
        self.assertEqual(keys, sorted(keys))
        self.assertAlmostEqual(sum(report.ratios), 100.0, delta=1e-9)
        for ratio in report.ratios:
            self.assertTrue(0.0 <= ratio <= 100.0)

    def test_empty_records(self):
        with self.assertRaises(DataError):
            summarize("base", "tuned", [])

    def test_wordlist_labels(self):
        report = summarize("base", "tuned", records_with([(" hours", 5), (" add", 5), (" blue", 5)]), wordlists=load_wordlists())
        self.assertEqual(report.token_labels, {"hours": "time", "add": "math"})
        self.assertIn("| hours | 1 | time |", render_markdown(report))


class ShiftArtifactTests(SimpleTestCase):
    def test_report_and_records_round_trip(self):
        records = records_with([(" week", 1), (" hour", 4), (" day", 2)])
        report = summarize("base", "tuned", records)
        self.assertEqual(ShiftReport.from_dict(json.loads(render_json(report))), report)
        with tempfile.TemporaryDirectory() as tmp:
            path = save_records(records, Path(tmp) / "positions.jsonl")
            self.assertEqual(load_records(path), records)