"""
Django settings for sslbench project.

The project hosts the bench app: a numerical testbed run through
management commands. There is no web surface and no database.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

from pathlib import Path
import os
from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

load_dotenv()


def _flag(name, default):
    return os.getenv(name, default).lower() in ('1', 'true', 'yes', 'on')


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.getenv('SECRET_KEY', 'sslbench-local')

DEBUG = _flag('DEBUG', 'False')

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',
    'rest_framework',

    'bench',
]

MIDDLEWARE = []

# No database: every artifact is a JSON or CSV file in an experiment directory
DATABASES = {}

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# Experiment defaults

SSLBENCH_OUTPUT_ROOT = os.getenv('SSLBENCH_OUTPUT_ROOT', str(BASE_DIR / 'runs'))
SSLBENCH_LOG_LEVEL = os.getenv('SSLBENCH_LOG_LEVEL', 'INFO').upper()
SSLBENCH_RUN_SLOW = _flag('SSLBENCH_RUN_SLOW', 'False')


# Logging

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '%(asctime)s %(levelname)s %(name)s %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'bench': {
            'handlers': ['console'],
            'level': SSLBENCH_LOG_LEVEL,
            'propagate': False,
        },
    },
}


# Celery Configuration
# Seeds run in-process unless a broker is configured and eager mode is off.

CELERY_BROKER_URL = os.getenv('CELERY_BROKER_URL', 'memory://')
CELERY_RESULT_BACKEND = os.getenv('CELERY_RESULT_BACKEND', 'cache+memory://')
CELERY_TASK_ALWAYS_EAGER = _flag('CELERY_TASK_ALWAYS_EAGER', 'True')
CELERY_TASK_EAGER_PROPAGATES = True
CELERY_TASK_SERIALIZER = 'json'
CELERY_RESULT_SERIALIZER = 'json'
CELERY_ACCEPT_CONTENT = ['json']
