from django import forms
from django.core.exceptions import ValidationError

from corpus.taxonomy import Category
from critic.scoring import SelectionStrategy
from dpo.iteration import PolicySource
from dpo.training import Scheduler
from evalharness.reports import ReportFormat
from llm_gateway.gateway import GatewayMode

TEMPLATE_CHOICES = [('few_shot', 'Few-shot'), ('cot', 'Chain of thought'), ('math_cot', 'Math chain of thought')]
RECORD_BACKENDS = [('openai', 'OpenAI-compatible endpoint'), ('mock', 'Mock model')]


def validate_probability(value):
    if not 0.0 <= value <= 1.0:
        raise ValidationError("Must be between 0 and 1.")


class PipelineConfigForm(forms.Form):
    """Validates and coerces a merged configuration.

    Values arrive as strings from the environment and the command line and as
    JSON types from config files; the fields turn both into typed values.
    """

    seed = forms.IntegerField(min_value=0)
    corpus_dir = forms.CharField(required=False)
    workdir = forms.CharField()
    template_dir = forms.CharField()
    exemplar_dir = forms.CharField(required=False)
    wordlist_dir = forms.CharField()
    prompts_file = forms.CharField(required=False)

    gateway_mode = forms.ChoiceField(choices=GatewayMode.choices)
    cache_dir = forms.CharField(required=False)
    max_in_flight = forms.IntegerField(min_value=1)
    request_timeout = forms.FloatField(min_value=0.1)
    max_retries = forms.IntegerField(min_value=1)
    backoff_base = forms.FloatField(min_value=0.0)
    mock_accuracy = forms.FloatField(validators=[validate_probability])
    record_backend = forms.ChoiceField(choices=RECORD_BACKENDS)

    policy_model = forms.CharField()
    policy_endpoint = forms.URLField(assume_scheme="http")
    policy_api_key_env = forms.CharField(required=False)
    judge_model = forms.CharField(required=False)
    judge_endpoint = forms.URLField(required=False, assume_scheme="http")
    judge_api_key_env = forms.CharField(required=False)
    base_model = forms.CharField(required=False)
    tuned_model = forms.CharField(required=False)

    n_candidates = forms.IntegerField(min_value=1)
    temperature = forms.FloatField(min_value=0.0)
    top_p = forms.FloatField()
    max_tokens = forms.IntegerField(min_value=1)
    optimize_category = forms.ChoiceField(choices=Category.choices)
    generate_limit = forms.IntegerField(required=False, min_value=1)

    judge_samples = forms.IntegerField(min_value=1)
    judge_include_gold = forms.BooleanField(required=False)
    strategy = forms.ChoiceField(choices=SelectionStrategy.choices)

    shots = forms.IntegerField(min_value=0)
    eval_temperature = forms.FloatField(min_value=0.0)
    eval_template = forms.ChoiceField(choices=TEMPLATE_CHOICES)
    eval_model = forms.CharField(required=False)
    eval_failure_tolerance = forms.FloatField(validators=[validate_probability])
    report_format = forms.ChoiceField(choices=ReportFormat.choices)

    beta = forms.FloatField()
    learning_rate = forms.FloatField()
    batch_size = forms.IntegerField(min_value=1)
    epochs = forms.IntegerField(min_value=0)
    warmup_ratio = forms.FloatField()
    scheduler = forms.ChoiceField(choices=Scheduler.choices)

    marginal_max = forms.IntegerField(min_value=1)
    shift_top_logprobs = forms.IntegerField(min_value=1, max_value=20)
    shift_max_tokens = forms.IntegerField(min_value=1)

    rounds = forms.IntegerField()
    iterate_policy_source = forms.ChoiceField(choices=PolicySource.choices)
    iterate_fresh_instances = forms.BooleanField(required=False)

    # --- CLEANING ---

    def clean_top_p(self):
        top_p = self.cleaned_data.get('top_p')
        if top_p is not None and not 0.0 < top_p <= 1.0:
            raise ValidationError("top_p must be in (0, 1].")
        return top_p

    def clean_beta(self):
        beta = self.cleaned_data.get('beta')
        if beta is not None and beta <= 0:
            raise ValidationError("beta must be greater than 0.")
        return beta

    def clean_learning_rate(self):
        rate = self.cleaned_data.get('learning_rate')
        if rate is not None and rate <= 0:
            raise ValidationError("learning_rate must be greater than 0.")
        return rate

    def clean_warmup_ratio(self):
        ratio = self.cleaned_data.get('warmup_ratio')
        if ratio is not None and not 0.0 <= ratio < 1.0:
            raise ValidationError("warmup_ratio must be in [0, 1).")
        return ratio

    def clean_rounds(self):
        rounds = self.cleaned_data.get('rounds')
        if rounds is not None and rounds < 1:
            raise ValidationError("rounds must be at least 1.")
        return rounds

    def clean_policy_model(self):
        name = (self.cleaned_data.get('policy_model') or '').strip()
        if '@' in name:
            raise ValidationError("'@' is reserved for round suffixes in model names.")
        return name

    def clean(self):
        cleaned = super().clean()
        mode = cleaned.get('gateway_mode')
        if mode in (GatewayMode.RECORD, GatewayMode.REPLAY) and not cleaned.get('cache_dir'):
            self.add_error('cache_dir', f"{mode} mode needs a cache directory.")
        if cleaned.get('judge_model') and not cleaned.get('judge_endpoint'):
            cleaned['judge_endpoint'] = cleaned.get('policy_endpoint')
        marginal_max, top_k = cleaned.get('marginal_max'), cleaned.get('shift_top_logprobs')
        if marginal_max and top_k and top_k < marginal_max:
            self.add_error('shift_top_logprobs', "Must be at least marginal_max.")
        return cleaned
