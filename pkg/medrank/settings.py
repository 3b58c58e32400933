"""
إعدادات مشروع ترتيب الأطباء
Django settings for the MedRank ranking engine.
"""

from pathlib import Path
import os
from dotenv import load_dotenv

load_dotenv()

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Only used by Django internals; the engine has no web surface.
SECRET_KEY = os.getenv('SECRET_KEY', 'django-insecure-medrank-offline-jobs-only')

DEBUG = os.getenv('DEBUG', 'False').lower() == 'true'

ALLOWED_HOSTS = []

# Application definition
INSTALLED_APPS = [
    'django.contrib.contenttypes',
    # التطبيقات المحلية
    'core.apps.CoreConfig',
    'profiles.apps.ProfilesConfig',
    'gateway.apps.GatewayConfig',
    'scoring.apps.ScoringConfig',
    'comparison.apps.ComparisonConfig',
    'explain.apps.ExplainConfig',
    'evaluation.apps.EvaluationConfig',
    'dataset_tools.apps.DatasetToolsConfig',
]

MIDDLEWARE = []

# Database - SQLite (job provenance only)
DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': os.getenv('MEDRANK_DB_PATH', BASE_DIR / 'db.sqlite3'),
        'OPTIONS': {
            'timeout': 20,
        }
    }
}

LANGUAGE_CODE = 'en'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# إعدادات السجلات
LOG_LEVEL = os.getenv('MEDRANK_LOG_LEVEL', 'INFO').upper()

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': LOG_LEVEL,
    },
    'loggers': {
        'urllib3': {
            'level': 'WARNING',
        },
    },
}

# Ranking engine settings
MEDRANK_SETTINGS = {
    'DEFAULT_REQUEST_TIMEOUT': 60,
    'MAX_RETRY_ATTEMPTS': 3,
    'RETRY_DELAY_SECONDS': [2, 5, 10],
    'MAX_IN_FLIGHT': 4,
    'TOP_LOGPROBS': 20,
    'LOGPROB_FLOOR_OFFSET': 10.0,
    'CHAR_BUDGET_PER_TOKEN': 3,
    'PROFILE_TOKEN_BUDGET': 2048,
    'CRITERIA_TOKEN_BUDGET': 1024,
    'RATIONALE_TOKEN_BUDGET': 512,
    'PROMPT_VERSION': 'v1',
    'CREDENTIAL_ENV_VAR': 'MEDRANK_API_KEY',
    'CACHE_DIR': Path(os.getenv('MEDRANK_CACHE_DIR', BASE_DIR / '.medrank_cache')),
}
