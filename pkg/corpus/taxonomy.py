from dataclasses import dataclass

from django.db import models


class Category(models.TextChoices):
    MATH_TIME = 'MathTime', 'Math-time'
    PURE_TIME = 'PureTime', 'Pure-time'


class DomainGroup(models.TextChoices):
    AMBIGUITY_RESOLUTION = 'AmbiguityResolution', 'Amb.'
    ARITHMETIC = 'Arithmetic', 'Arith.'
    DURATION = 'Duration', 'Dur.'
    FREQUENCY = 'Frequency', 'Freq.'
    CAUSALITY = 'Causality', 'Caus.'
    NLI = 'NLI', 'NLI'
    ORDER = 'Order', 'Order'
    RELATION = 'Relation', 'Rel.'
    STORY = 'Story', 'Story'
    TYPICAL_TIME = 'TypicalTime', 'Typ.'


class AnswerFormat(models.TextChoices):
    MULTIPLE_CHOICE = 'MultipleChoice', 'Multiple choice'
    FREE_TEXT = 'FreeText', 'Free text'


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    name: str
    category: Category
    domain_group: DomainGroup
    answer_format: AnswerFormat = AnswerFormat.MULTIPLE_CHOICE

    @property
    def is_math_time(self):
        return self.category == Category.MATH_TIME

    def to_dict(self):
        return {
            'task_id': self.task_id,
            'name': self.name,
            'category': str(self.category),
            'domain_group': str(self.domain_group),
            'answer_format': str(self.answer_format),
        }


def _task(task_id, name, category, group):
    return TaskSpec(task_id=task_id, name=name, category=category, domain_group=group)


M, P = Category.MATH_TIME, Category.PURE_TIME
G = DomainGroup

TASKS = (
    # Math-time
    _task('ambiguity_calendar_shift', 'Ambiguity Resolution: Calendar Shift', M, G.AMBIGUITY_RESOLUTION),
    _task('ambiguity_long_term_shift', 'Ambiguity Resolution: Long-term Shift', M, G.AMBIGUITY_RESOLUTION),
    _task('ambiguity_mid_term_shift', 'Ambiguity Resolution: Mid-term Shift', M, G.AMBIGUITY_RESOLUTION),
    _task('ambiguity_short_term_shift', 'Ambiguity Resolution: Short-term Shift', M, G.AMBIGUITY_RESOLUTION),
    _task('arithmetic_application', 'Arithmetic: Application', M, G.ARITHMETIC),
    _task('arithmetic_date_computation', 'Arithmetic: Date Computation', M, G.ARITHMETIC),
    _task('arithmetic_hour_adjustment_12h', 'Arithmetic: Hour Adjustment (12h)', M, G.ARITHMETIC),
    _task('arithmetic_hour_adjustment_24h', 'Arithmetic: Hour Adjustment (24h)', M, G.ARITHMETIC),
    _task('arithmetic_month_shift', 'Arithmetic: Month Shift', M, G.ARITHMETIC),
    _task('arithmetic_week_identification', 'Arithmetic: Week Identification', M, G.ARITHMETIC),
    _task('arithmetic_year_shift', 'Arithmetic: Year Shift', M, G.ARITHMETIC),
    _task('arithmetic_time_computation', 'Arithmetic: Time Computation', M, G.ARITHMETIC),
    _task('arithmetic_time_zone_conversion', 'Arithmetic: Time Zone Conversion', M, G.ARITHMETIC),
    _task('duration_computation', 'Duration: Computation', M, G.DURATION),
    _task('duration_direct_comparison', 'Duration: Direct Comparison', M, G.DURATION),
    _task('duration_multi_step_comparison', 'Duration: Multi-step Comparison', M, G.DURATION),
    _task('frequency_application', 'Frequency: Application', M, G.FREQUENCY),
    _task('frequency_computation', 'Frequency: Computation', M, G.FREQUENCY),
    _task('frequency_comparison', 'Frequency: Comparison', M, G.FREQUENCY),
    # Pure-time
    _task('ambiguity_interpretation', 'Ambiguity Resolution: Interpretation', P, G.AMBIGUITY_RESOLUTION),
    _task('duration_commonsense', 'Duration: Commonsense', P, G.DURATION),
    _task('duration_reading_comprehension', 'Duration: Reading Comprehension', P, G.DURATION),
    _task('duration_analogy_inference', 'Duration: Analogy Inference', P, G.DURATION),
    _task('duration_facts', 'Duration: Facts', P, G.DURATION),
    _task('frequency_commonsense', 'Frequency: Commonsense', P, G.FREQUENCY),
    _task('frequency_reading_comprehension', 'Frequency: Reading Comprehension', P, G.FREQUENCY),
    _task('frequency_facts', 'Frequency: Facts', P, G.FREQUENCY),
    _task('causality_cause', 'Causality: Cause', P, G.CAUSALITY),
    _task('causality_effect', 'Causality: Effect', P, G.CAUSALITY),
    _task('nli', 'Temporal NLI', P, G.NLI),
    _task('order_commonsense', 'Order: Commonsense', P, G.ORDER),
    _task('order_facts', 'Order: Facts', P, G.ORDER),
    _task('relation', 'Relation', P, G.RELATION),
    _task('story', 'Storytelling', P, G.STORY),
    _task('typical_time_commonsense', 'Typical Time: Commonsense', P, G.TYPICAL_TIME),
    _task('typical_time_comparison', 'Typical Time: Comparison', P, G.TYPICAL_TIME),
    _task('typical_time_facts', 'Typical Time: Facts', P, G.TYPICAL_TIME),
    _task('typical_time_reading_comprehension', 'Typical Time: Reading Comprehension', P, G.TYPICAL_TIME),
)

TASKS_BY_ID = {task.task_id: task for task in TASKS}

# (category, domain) cells in results-table column order.
REPORT_COLUMNS = (
    (M, G.AMBIGUITY_RESOLUTION),
    (M, G.ARITHMETIC),
    (M, G.DURATION),
    (M, G.FREQUENCY),
    (P, G.AMBIGUITY_RESOLUTION),
    (P, G.DURATION),
    (P, G.FREQUENCY),
    (P, G.CAUSALITY),
    (P, G.NLI),
    (P, G.ORDER),
    (P, G.RELATION),
    (P, G.STORY),
    (P, G.TYPICAL_TIME),
)


def get_task(task_id):
    return TASKS_BY_ID.get(task_id)


def tasks_in(category):
    return [task for task in TASKS if task.category == category]
