"""
Django settings for the chronopref project.

chronopref has no web surface: Django provides the settings layer, the ORM
that stores run manifests, the template engine behind prompt rendering and
the management-command CLI.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

import os
from pathlib import Path
from dotenv import load_dotenv

load_dotenv()

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Only used by Django internals (signing); no sessions or cookies are issued.
SECRET_KEY = os.getenv('SECRET_KEY', 'chronopref-offline-key')

DEBUG = os.getenv('DEBUG') == 'True'

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    "corpus",
    "prompting",
    "llm_gateway",
    "sampler",
    "critic",
    "dpo",
    "evalharness",
    "tokenshift",
    "cli",
]


# Database
# Run manifests live in SQLite unless a PostgreSQL database is configured
# with the same DB_* variables the deployment .env files use.

if os.getenv('DB_NAME'):
    DATABASES = {
        "default": {
            'ENGINE': 'django.db.backends.postgresql',
            'NAME': os.getenv('DB_NAME'),
            'USER': os.getenv('DB_USER'),
            'PASSWORD': os.getenv('DB_PASSWORD'),
            'HOST': os.getenv('DB_HOST'),
            'PORT': os.getenv('DB_PORT'),
        }
    }
else:
    DATABASES = {
        "default": {
            "ENGINE": "django.db.backends.sqlite3",
            "NAME": os.getenv('CHRONOPREF_DB_PATH', str(BASE_DIR / "chronopref.sqlite3")),
        }
    }


# Internationalization

LANGUAGE_CODE = "en-us"

TIME_ZONE = "UTC"

USE_I18N = False

USE_TZ = True


# Logging

LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "plain": {
            "format": "{levelname} {asctime} {name}: {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "plain",
        },
    },
    "loggers": {
        "django": {"handlers": ["console"], "level": "WARNING"},
        **{
            app: {"handlers": ["console"], "level": LOG_LEVEL, "propagate": False}
            for app in INSTALLED_APPS + ["chronopref"]
        },
    },
}


# Pipeline defaults. Values follow the published training and evaluation
# recipe: 5 candidates at T=0.8 / top-p 0.95, 3 judge samples, 5-shot greedy
# evaluation, DPO beta 0.1 / batch 32 / warmup 0.1 / 9 epochs.
# Resolution order: these defaults < JSON config file < CHRONOPREF_* env < flags.

CHRONOPREF = {
    "seed": 0,
    "corpus_dir": str(BASE_DIR / "data" / "corpus"),
    "workdir": str(BASE_DIR / "runs" / "default"),
    "template_dir": str(BASE_DIR / "prompting" / "prompt_templates"),
    "exemplar_dir": "",
    "wordlist_dir": str(BASE_DIR / "tokenshift" / "wordlists"),
    "prompts_file": "",

    "gateway_mode": "mock",
    "cache_dir": str(BASE_DIR / "cache"),
    "max_in_flight": 8,
    "request_timeout": 60.0,
    "max_retries": 3,
    "backoff_base": 1.0,
    "mock_accuracy": 0.6,
    "record_backend": "openai",

    "policy_model": "mathllama-7b",
    "policy_endpoint": "http://localhost:8000/v1",
    "policy_api_key_env": "OPENAI_API_KEY",
    "judge_model": "",
    "judge_endpoint": "",
    "judge_api_key_env": "",
    "base_model": "llama2-7b",
    "tuned_model": "",

    "n_candidates": 5,
    "temperature": 0.8,
    "top_p": 0.95,
    "max_tokens": 512,
    "optimize_category": "PureTime",
    "generate_limit": None,

    "judge_samples": 3,
    "judge_include_gold": False,
    "strategy": "Hierarchical",

    "shots": 5,
    "eval_temperature": 0.0,
    "eval_template": "few_shot",
    "eval_model": "",
    "eval_failure_tolerance": 0.05,
    "report_format": "markdown",

    "beta": 0.1,
    "learning_rate": 50.0,
    "batch_size": 32,
    "epochs": 9,
    "warmup_ratio": 0.1,
    "scheduler": "Linear",

    "marginal_max": 3,
    "shift_top_logprobs": 5,
    "shift_max_tokens": 256,

    "rounds": 1,
    "iterate_policy_source": "endpoint",
    "iterate_fresh_instances": False,
}


# Default primary key field type

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"
