import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from corpus.loader import Instance, Option
from corpus.taxonomy import TASKS_BY_ID

from .renderer import (
    JUDGE_CRITERIA,
    RenderError,
    RenderedPrompt,
    build_mathcot_request,
    exemplars_from_instances,
    render_eval_prompt,
    render_judge_prompt,
)
from .templates import Exemplar, PromptKind, Role, TemplateFormatError, TemplateLibrary, default_library, parse_template


def make_instance(question="What is 02:45 PM + 10:44?", task_id="arithmetic_hour_adjustment_12h", index=0):
    return Instance(
        instance_id=f"{task_id}-{index}",
        task_id=task_id,
        question=question,
        options=(
            Option("A", "2:39 AM"), Option("B", "3:41 AM"), Option("C", "1:29 AM"), Option("D", "11:20 PM"),
        ),
        gold="C",
    )


class TemplateParsingTests(SimpleTestCase):
    def test_bundled_templates_parse(self):
        library = default_library()
        self.assertEqual(library.get("few_shot").kind, PromptKind.FEW_SHOT)
        self.assertEqual(library.for_kind(PromptKind.JUDGE_REJECTED).template_id, "judge_rejected")
        self.assertEqual([role for role, _ in library.get("cot").sections], [Role.SYSTEM, Role.USER])

    def test_for_kind_matches_template_id_not_file_order(self):
        self.assertEqual(default_library().for_kind(PromptKind.MATH_COT).template_id, "math_cot")
        with tempfile.TemporaryDirectory() as tmp:
            directory = Path(tmp)
            (directory / "a_request.txt").write_text("---\ntemplate_id: math_cot_request\nkind: MathCoT\n---\nrequest\n", encoding="utf-8")
            library = TemplateLibrary(directory)
            with self.assertRaises(TemplateFormatError):
                library.for_kind(PromptKind.MATH_COT)
            (directory / "z_math.txt").write_text("---\ntemplate_id: math_cot\nkind: MathCoT\n---\n{{ question }}\n", encoding="utf-8")
            self.assertEqual(TemplateLibrary(directory).for_kind(PromptKind.MATH_COT).template_id, "math_cot")

    def test_header_is_required(self):
        with self.assertRaises(TemplateFormatError):
            parse_template("no header here")

    def test_unknown_template_id(self):
        with self.assertRaises(TemplateFormatError):
            default_library().get("haiku")


class EvalPromptTests(SimpleTestCase):
    def setUp(self):
        shots = [make_instance(f"Exemplar question {i}?", index=i + 1) for i in range(5)]
        self.template = default_library().get("few_shot").with_exemplars(exemplars_from_instances(shots))

    def test_five_exemplars_precede_the_target(self):
        prompt = render_eval_prompt(self.template, make_instance())
        text = prompt.text
        self.assertEqual(text.count("Question:"), 6)
        self.assertLess(text.index("Exemplar question 4?"), text.index("What is 02:45 PM"))
        self.assertIn("(A) 2:39 AM (B) 3:41 AM (C) 1:29 AM (D) 11:20 PM", text)
        self.assertTrue(text.rstrip().endswith("Answer:"))

    def test_role_layout_concatenates_to_text(self):
        prompt = render_eval_prompt(self.template, make_instance())
        self.assertEqual(prompt.text, "".join(content for _, content in prompt.role_layout))
        self.assertEqual(prompt.instance_id, "arithmetic_hour_adjustment_12h-0")
        self.assertEqual(RenderedPrompt.from_dict(prompt.to_dict()), prompt)

    def test_rendering_is_pure(self):
        self.assertEqual(
            render_eval_prompt(self.template, make_instance()),
            render_eval_prompt(self.template, make_instance()),
        )

    def test_zero_shot_needs_the_flag(self):
        template = default_library().get("few_shot")
        with self.assertRaises(RenderError):
            render_eval_prompt(template, make_instance())
        prompt = render_eval_prompt(template, make_instance(), allow_zero_shot=True)
        self.assertEqual(prompt.text.count("Question:"), 1)

    def test_braces_in_question_render_verbatim(self):
        question = "Is {{ gold }} or {weekday} later than {% now %}?"
        prompt = render_eval_prompt(self.template, make_instance(question=question))
        self.assertIn(question, prompt.text)

    def test_unfilled_placeholder_fails(self):
        broken = parse_template("---\ntemplate_id: broken\nkind: FewShot\n---\n{{ question }} {{ weekday }}\n")
        with self.assertRaisesMessage(RenderError, "weekday"):
            render_eval_prompt(broken, make_instance(), allow_zero_shot=True)

    def test_judge_template_is_not_an_eval_template(self):
        with self.assertRaises(RenderError):
            render_eval_prompt(default_library().get("judge_chosen"), make_instance(), allow_zero_shot=True)


class MathCotRequestTests(SimpleTestCase):
    def setUp(self):
        self.pool = [
            Exemplar(f"How many minutes are in {n} hours?", f"The answer is {60 * n}.", f"{n} x 60 = {60 * n}.")
            for n in range(1, 7)
        ]

    def test_math_time_instance_builds_request(self):
        task = TASKS_BY_ID["arithmetic_hour_adjustment_12h"]
        prompt = build_mathcot_request(self.pool, make_instance(), task)
        self.assertIn("by mimicking mathematical reasoning", prompt.text)
        self.assertEqual(prompt.text.count("Rationale:"), 6)
        self.assertNotIn("6 hours", prompt.text)

    def test_pure_time_instance_is_rejected(self):
        with self.assertRaisesMessage(RenderError, "math-time"):
            build_mathcot_request(self.pool, make_instance(task_id="relation"), TASKS_BY_ID["relation"])

    def test_pool_of_four_is_rejected(self):
        task = TASKS_BY_ID["arithmetic_hour_adjustment_12h"]
        with self.assertRaises(RenderError):
            build_mathcot_request(self.pool[:4], make_instance(), task)


class JudgePromptTests(SimpleTestCase):
    def test_chosen_prompt_lists_each_criterion_once(self):
        prompt = render_judge_prompt(PromptKind.JUDGE_CHOSEN, "q?", "It is 1:29 AM. The answer is (C).")
        for criterion in JUDGE_CRITERIA:
            self.assertEqual(prompt.text.count(criterion), 1, criterion)
        self.assertIn("Score: <k>", prompt.text)
        self.assertIn("chosen reward model", prompt.text)

    def test_rejected_prompt_uses_rejected_framing(self):
        prompt = render_judge_prompt(PromptKind.JUDGE_REJECTED, "q?", "The answer is (B).")
        self.assertIn("rejected reward model", prompt.text)
        for criterion in JUDGE_CRITERIA:
            self.assertEqual(prompt.text.count(criterion), 1, criterion)

    def test_gold_is_excluded_unless_requested(self):
        hidden = render_judge_prompt(PromptKind.JUDGE_CHOSEN, "q?", "r", gold="C")
        shown = render_judge_prompt(PromptKind.JUDGE_CHOSEN, "q?", "r", gold="C", include_gold=True)
        self.assertNotIn("Reference answer", hidden.text)
        self.assertIn("Reference answer: C", shown.text)

    def test_empty_response_is_rejected(self):
        with self.assertRaises(RenderError):
            render_judge_prompt(PromptKind.JUDGE_CHOSEN, "q?", "   ")
