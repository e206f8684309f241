import logging
from dataclasses import dataclass

from django.template import Context, Engine, TemplateSyntaxError

from chronopref.exceptions import DataError

from .templates import EVAL_KINDS, Exemplar, JUDGE_KINDS, PromptKind, Role, default_library

logger = logging.getLogger(__name__)

MATH_COT_SHOTS = 5

# The five aspects of the hierarchical temporal rubric; one point each.
JUDGE_CRITERIA = (
    "relevance and basic temporal reasoning",
    "understanding of temporal aspects",
    "application of internal temporal knowledge",
    "direct and well-organized addressing of the question",
    "insightfulness and advanced reasoning",
)

_MISSING = "\x00missing:%s\x00"
_engine = Engine(autoescape=False, string_if_invalid=_MISSING)


class RenderError(DataError):
    pass


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    template_id: str
    instance_id: str
    role_layout: tuple

    def __post_init__(self):
        if self.text != "".join(content for _, content in self.role_layout):
            raise RenderError("prompt text must equal the concatenated role layout")

    @classmethod
    def from_layout(cls, role_layout, template_id, instance_id=""):
        role_layout = tuple((Role(role), content) for role, content in role_layout)
        return cls(
            text="".join(content for _, content in role_layout),
            template_id=template_id,
            instance_id=instance_id,
            role_layout=role_layout,
        )

    @classmethod
    def raw(cls, text, prompt_id=""):
        return cls.from_layout(((Role.USER, text),), template_id="raw", instance_id=prompt_id)

    def messages(self):
        return [{"role": str(role), "content": content.strip()} for role, content in self.role_layout]

    def to_dict(self):
        return {
            "template_id": self.template_id,
            "instance_id": self.instance_id,
            "role_layout": [[str(role), content] for role, content in self.role_layout],
        }

    @classmethod
    def from_dict(cls, data):
        return cls.from_layout(data["role_layout"], data["template_id"], data.get("instance_id", ""))


def format_options(instance):
    return " ".join(f"({option.label}) {option.text}" for option in instance.options)


def format_question(instance):
    options = format_options(instance)
    return f"{instance.question}\n{options}" if options else instance.question


def final_answer_line(gold):
    return f"The answer is ({gold})."


def exemplars_from_instances(instances):
    """Frozen exemplars taken from gold-labelled instances."""
    return [Exemplar(question=format_question(i), answer=final_answer_line(i.gold)) for i in instances]


def _render(template, context, instance_id=""):
    layout = []
    for position, (role, source) in enumerate(template.sections):
        try:
            rendered = _engine.from_string(source).render(Context(context, autoescape=False))
        except TemplateSyntaxError as exc:
            raise RenderError(f"template {template.template_id}: {exc}") from exc
        if "\x00missing:" in rendered:
            name = rendered.split("\x00missing:", 1)[1].split("\x00", 1)[0] or "?"
            raise RenderError(f"template {template.template_id}: placeholder {name!r} has no value")
        rendered = rendered.rstrip("\n")
        if position < len(template.sections) - 1:
            rendered += "\n\n"
        layout.append((role, rendered))
    return RenderedPrompt.from_layout(layout, template.template_id, instance_id)


def _exemplar_context(exemplars):
    return [{"question": e.question, "answer": e.answer, "rationale": e.rationale} for e in exemplars]


def render_eval_prompt(template, instance, shots=5, allow_zero_shot=False):
    if template.kind not in EVAL_KINDS:
        raise RenderError(f"{template.template_id} is a {template.kind} template, not an evaluation template")
    count = len(template.exemplars)
    if count != shots and not (allow_zero_shot and count == 0):
        raise RenderError(f"{template.template_id} carries {count} exemplars; {shots} are required")

    return _render(
        template,
        {
            "question": instance.question,
            "options": format_options(instance),
            "exemplars": _exemplar_context(template.exemplars),
        },
        instance.instance_id,
    )


def build_mathcot_request(exemplar_pool, instance, task, template=None):
    """Prompt asking a teacher model for a Math-CoT rationale of a math-time instance."""
    if not task.is_math_time:
        raise RenderError(f"{task.task_id} is a pure-time task; Math-CoT applies to math-time tasks only")
    if len(exemplar_pool) < MATH_COT_SHOTS:
        raise RenderError(f"Math-CoT needs {MATH_COT_SHOTS} math exemplars, got {len(exemplar_pool)}")
    exemplars = list(exemplar_pool)[:MATH_COT_SHOTS]
    if any(not exemplar.rationale for exemplar in exemplars):
        raise RenderError("every Math-CoT exemplar needs a rationale")

    template = template or default_library().get("math_cot_request")
    return _render(
        template,
        {
            "question": instance.question,
            "options": format_options(instance),
            "exemplars": _exemplar_context(exemplars),
        },
        instance.instance_id,
    )


def render_judge_prompt(kind, question, response, template=None, gold=None, include_gold=False, instance_id=""):
    kind = PromptKind(kind)
    if kind not in JUDGE_KINDS:
        raise RenderError(f"{kind} is not a judge prompt kind")
    if not response or not response.strip():
        raise RenderError("cannot judge an empty response")

    template = template or default_library().for_kind(kind)
    return _render(
        template,
        {
            "criteria": JUDGE_CRITERIA,
            "question": question,
            "response": response,
            "gold": gold if include_gold else "",
        },
        instance_id,
    )
