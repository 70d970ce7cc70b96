"""
Django settings for the dhalab project.

The project has no HTTP surface: Django provides settings, logging, the
management-command CLI and the test runner for the search library.
"""
import os
from pathlib import Path

from dotenv import load_dotenv


# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Load environment variables from .env in the repository root
load_dotenv(BASE_DIR / ".env")


DEBUG = os.getenv("DJANGO_DEBUG", "False").lower() == "true"

# Nothing is signed or served; the key only satisfies Django's startup checks.
SECRET_KEY = os.getenv("DJANGO_SECRET_KEY", "dhalab-local-only")


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',
    'rest_framework',
    'autodiff',
    'augment',
    'hpo',
    'nas',
    'dataio',
    'scheduler',
    'experiments',
]


# Database
# No model is persisted; the entry keeps `manage.py check` quiet.

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': os.getenv('SQLITE_PATH', BASE_DIR / 'db.sqlite3'),
    }
}


# Experiment runtime

# Root for run directories when a config leaves output_dir relative.
DHA_RUNS_ROOT = Path(os.getenv("DHA_RUNS_ROOT", BASE_DIR))

# Acceptance-scale simulations (multi-seed, thousands of iterations).
DHA_SLOW_TESTS = os.getenv("DHA_SLOW_TESTS", "False").lower() == "true"

DHA_LOG_LEVEL = os.getenv("DHA_LOG_LEVEL", "INFO").upper()


# Logging

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'run': {
            'format': '{asctime} {levelname} {name} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'run',
        },
    },
    'loggers': {
        app: {
            'handlers': ['console'],
            'level': DHA_LOG_LEVEL,
            'propagate': False,
        }
        for app in ('autodiff', 'augment', 'hpo', 'nas', 'dataio', 'scheduler', 'experiments')
    },
}


# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'
