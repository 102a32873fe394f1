"""
Django settings for the flowforge project.

flowforge has no web surface: Django provides configuration, logging, template
rendering for reports and the management-command CLI.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.1/ref/settings/
"""

import os
from pathlib import Path
from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Load environment variables
load_dotenv(dotenv_path=BASE_DIR / '.env')

# Only used by Django internals; nothing is signed or served.
SECRET_KEY = os.getenv('SECRET_KEY', 'flowforge-local-only')

DEBUG = os.getenv('DEBUG', 'False') == 'True'

ALLOWED_HOSTS = []

# Application definition

INSTALLED_APPS = [
    'utils',
    'nnet',
    'flow',
    'align',
    'kernels',
    'plan',
    'dynamics',
    'cli',
]

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {
            'context_processors': [],
        },
    },
]

# No database: every test is a SimpleTestCase and runs are persisted as files.
DATABASES = {}

USE_I18N = False

USE_TZ = True

TIME_ZONE = 'UTC'

# flowforge runtime knobs

# Caps every thread fan-out (strategy ranking, kernel self-tests).
FLOWFORGE_THREADS = max(1, int(os.getenv('FLOWFORGE_THREADS', '1')))

FLOWFORGE_DEFAULT_SEED = int(os.getenv('FLOWFORGE_DEFAULT_SEED', '0'))

FLOWFORGE_OUTPUT_DIR = os.getenv('FLOWFORGE_OUTPUT_DIR', str(BASE_DIR / 'runs'))

FLOWFORGE_LOG_FILE = os.getenv('FLOWFORGE_LOG_FILE')

# Logging configuration
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '[{asctime}] {levelname} {name} {message}',
            'style': '{',
        },
        'simple': {
            'format': '{levelname} {message}',
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
        'level': 'INFO',
    },
    'loggers': {
        'django': {
            'handlers': ['console'],
            'level': 'WARNING',
            'propagate': False,
        },
    },
}

if FLOWFORGE_LOG_FILE:
    LOGGING['handlers']['file'] = {
        'class': 'logging.FileHandler',
        'filename': FLOWFORGE_LOG_FILE,
        'formatter': 'verbose',
    }
    LOGGING['root']['handlers'].append('file')
