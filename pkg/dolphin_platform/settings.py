"""
Django settings for the dolphin_platform project.

The project hosts one app, ``dialect_asr``, whose management commands make up
the ``dolphin`` command line. There is no web surface: no URLs, middleware or
templates are configured.

Every tunable default of the toolkit lives in ``DOLPHIN`` below. A
``KEY=value`` file named by the ``DOLPHIN_CONFIG`` environment variable
overrides it (see ``dialect_asr.conf``) and command-line flags override both.

For the full list of Django settings and their values, see
https://docs.djangoproject.com/en/5.0/ref/settings/
"""

import os
from pathlib import Path

from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Pick up DOLPHIN_CONFIG / DOLPHIN_LOG_LEVEL from a local .env when present.
load_dotenv(BASE_DIR / ".env")

SECRET_KEY = os.getenv("DJANGO_SECRET_KEY", "dolphin-platform-cli-only-no-sessions")

DEBUG = False

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    "dialect_asr",
]

# Nothing is persisted; manifests, shards and models are plain files.
DATABASES = {}


# Internationalization
# https://docs.djangoproject.com/en/5.0/topics/i18n/

LANGUAGE_CODE = "en-us"

TIME_ZONE = "UTC"

USE_I18N = False

USE_TZ = True


# Toolkit defaults. Keys are lower-cased Config field names.

DOLPHIN = {
    # datapipe
    "max_duration": 30.0,
    "shard_size": 1000,
    "n_readers": 4,
    "n_buckets": 1,
    "truncate_prob": 0.0,
    "truncate_fraction": 0.2,
    "short_threshold": 2.0,
    "short_fraction": 0.0,
    # sampler; 0.5 is a shipped choice, not a published value
    "alpha": 0.5,
    "size_unit": "utterances",
    # tokenizer
    "target_vocab_size": 18173,
    "reserved_dialect_count": 80,
    # hotword filtering and biasing
    "psc_threshold": -4.0,
    "soc_threshold": -4.0,
    "prompt_threshold": -2.0,
    "length_normalize": True,
    "bias_weight": 0.5,
    "n_distractors": 5,
    "prompt_min_match": 2,
    "prompt_bonus": 2.0,
    # decoding
    "beam": 10,
    # tokens expanded per frame, independent of the beam; 0 means all
    "token_beam": 32,
    "ctc_weight": 0.5,
    "blank_id": 0,
    "seed": 0,
}

# Path of an optional KEY=value override file.
DOLPHIN_CONFIG = os.getenv("DOLPHIN_CONFIG")


# Logging: diagnostics go to stderr, stdout is reserved for JSON lines.

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "plain": {
            "format": "%(levelname)s %(name)s: %(message)s",
        },
    },
    "handlers": {
        "stderr": {
            "class": "logging.StreamHandler",
            "formatter": "plain",
        },
    },
    "loggers": {
        "dialect_asr": {
            "handlers": ["stderr"],
            "level": os.getenv("DOLPHIN_LOG_LEVEL", "WARNING"),
            "propagate": False,
        },
    },
}

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"
