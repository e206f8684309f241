import random
import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from chronopref.artifacts import read_jsonl
from corpus.loader import Instance, Option
from corpus.synthetic import build_synthetic_corpus
from corpus.taxonomy import AnswerFormat, Category, DomainGroup, TASKS_BY_ID, TaskSpec
from llm_gateway.backends import MockBackend
from llm_gateway.exceptions import ReplayMissError
from llm_gateway.gateway import Gateway, GatewayMode
from llm_gateway.types import ModelHandle, SamplingParams
from prompting.templates import default_library

from .candidates import (
    CandidateSet,
    generate_all,
    generate_candidates,
    load_candidate_sets,
    partition,
    save_candidate_sets,
)
from .extraction import align, extract_answer

FIXTURE = Path(__file__).resolve().parent / "fixtures" / "extraction_fixture.jsonl"
RELATION = TASKS_BY_ID["relation"]
FREE_TEXT = TaskSpec("free_text", "Free text", Category.PURE_TIME, DomainGroup.STORY, AnswerFormat.FREE_TEXT)
POLICY = ModelHandle("mathllama-7b", "http://localhost:8000/v1")


def mcq(gold="A", labels="ABCD", instance_id="relation-00000"):
    return Instance(instance_id, "relation", "Which came first?", tuple(Option(l, f"event {l}") for l in labels), gold)


def candidate_set(texts, instance_id="relation-00000"):
    return CandidateSet(instance_id=instance_id, prompt="p", candidates=tuple(enumerate(texts)))


class ExtractionFixtureTests(SimpleTestCase):
    def test_hand_labelled_fixture_agrees_everywhere(self):
        rows = read_jsonl(FIXTURE)
        self.assertEqual(len(rows), 50)
        for row in rows:
            task = FREE_TEXT if row["format"] == "FreeText" else RELATION
            instance = Instance(
                f"fixture-{row['id']}", task.task_id, "q",
                tuple(Option(label, label) for label in row["labels"]), row["gold"],
            )
            with self.subTest(row=row["id"]):
                self.assertEqual(extract_answer(row["text"], task, row["labels"]), row["expected"])
                self.assertEqual(align(row["text"], instance, task), row["aligned"])


class ExtractAnswerTests(SimpleTestCase):
    def test_anchored_answer(self):
        text = "Dividing 300 by 7 leaves a remainder of 6. The answer is (A)."
        self.assertEqual(extract_answer(text, RELATION, "ABCD"), "A")

    def test_empty_text(self):
        self.assertIsNone(extract_answer("", RELATION, "ABCD"))

    def test_lowercase_label_is_normalized(self):
        self.assertEqual(extract_answer("The answer is (b)", RELATION, "ABCD"), "B")

    def test_later_label_in_final_sentence_wins(self):
        self.assertEqual(extract_answer("The answer is (A), or rather (C).", RELATION, "ABCD"), "C")

    def test_never_returns_a_label_outside_the_options(self):
        rng = random.Random(5)
        for _ in range(500):
            text = " ".join(rng.choice(["(E)", "(a)", "Z.", "answer is (F)", "B", "the", "answer:", "(c)"]) for _ in range(6))
            self.assertIn(extract_answer(text, RELATION, "ABC"), {None, "A", "B", "C"})


class AlignTests(SimpleTestCase):
    def test_identity_and_mismatch(self):
        self.assertTrue(align("The answer is (A).", mcq("A")))
        self.assertFalse(align("The answer is (B).", mcq("A")))

    def test_no_answer_is_not_aligned(self):
        self.assertFalse(align("I am not sure.", mcq("A")))

    def test_whitespace_and_case_insensitive(self):
        self.assertTrue(align("  the ANSWER is ( a )  ", mcq("A")))

    def test_free_text_gold_with_trailing_punctuation(self):
        for gold, text in (("3 p.m.", "The answer is 3 p.m."), ("Jan.", "The answer is Jan."), ("noon!", "the answer is noon")):
            instance = Instance("free-00000", FREE_TEXT.task_id, "When?", (), gold)
            with self.subTest(gold=gold):
                self.assertTrue(align(text, instance, FREE_TEXT))
        self.assertFalse(align("The answer is 4 p.m.", Instance("free-00001", FREE_TEXT.task_id, "When?", (), "3 p.m."), FREE_TEXT))


class PartitionTests(SimpleTestCase):
    def test_mixed_candidates(self):
        texts = ["The answer is (A).", "The answer is (B).", "Answer: (A)", "no idea", "The answer is (D)."]
        result = partition(candidate_set(texts), mcq("A"))
        self.assertEqual(result.correct_idx, {0, 2})
        self.assertEqual(result.wrong_idx, {1, 3, 4})
        self.assertEqual(dict(result.extraction)[3], None)

    def test_all_and_none_aligned(self):
        self.assertEqual(partition(candidate_set(["(A)"] * 3), mcq("A")).wrong_idx, frozenset())
        self.assertEqual(partition(candidate_set(["(B)"] * 3), mcq("A")).correct_idx, frozenset())

    def test_partition_matches_brute_force_oracle(self):
        rng = random.Random(0)
        pieces = ["The answer is ({})".format(l) for l in "ABCDE"] + ["no answer", "(b)", "Answer: C", ""]
        for _ in range(10_000):
            texts = [rng.choice(pieces) for _ in range(rng.randint(1, 6))]
            instance = mcq(rng.choice("ABCD"))
            result = partition(candidate_set(texts), instance, RELATION)
            all_indices = set(range(len(texts)))
            self.assertEqual(result.correct_idx | result.wrong_idx, all_indices)
            self.assertFalse(result.correct_idx & result.wrong_idx)
            self.assertEqual(result.correct_idx, {i for i, t in enumerate(texts) if align(t, instance, RELATION)})


class GenerateCandidatesTests(SimpleTestCase):
    def setUp(self):
        self.corpus = build_synthetic_corpus({"relation": 4})
        self.instances = self.corpus.instances["relation"]
        self.template = default_library().get("cot")
        self.gateway = Gateway(MockBackend.from_instances(self.instances))

    def test_five_candidates_with_stable_indices(self):
        params = SamplingParams(temperature=0.8, top_p=0.95, n=5)
        result = generate_candidates(self.gateway, POLICY, self.instances[0], self.template, params)
        self.assertEqual(result.indices, [0, 1, 2, 3, 4])
        self.assertFalse(result.is_partitioned)
        self.assertIn(self.instances[0].question, result.prompt)

    def test_greedy_gives_singleton(self):
        result = generate_candidates(self.gateway, POLICY, self.instances[0], self.template, SamplingParams.greedy())
        self.assertEqual(len(result.candidates), 1)

    def test_replay_miss_leaves_nothing_behind(self):
        with tempfile.TemporaryDirectory() as tmp:
            gateway = Gateway(mode=GatewayMode.REPLAY, cache_dir=Path(tmp) / "cache")
            out = Path(tmp) / "candidates.jsonl"
            with self.assertRaises(ReplayMissError):
                save_candidate_sets(
                    generate_all(gateway, POLICY, self.instances, {"relation": self.template}, SamplingParams(n=5)),
                    out,
                )
            self.assertFalse(out.exists())

    def test_generate_all_round_trips_through_jsonl(self):
        sets = generate_all(self.gateway, POLICY, reversed(self.instances), {"relation": self.template}, SamplingParams(n=3))
        self.assertEqual([s.instance_id for s in sets], sorted(i.instance_id for i in self.instances))
        partitioned = [partition(s, i) for s, i in zip(sets, sorted(self.instances, key=lambda i: i.instance_id))]
        with tempfile.TemporaryDirectory() as tmp:
            path = save_candidate_sets(partitioned, Path(tmp) / "aligned.jsonl")
            self.assertEqual(load_candidate_sets(path), partitioned)
