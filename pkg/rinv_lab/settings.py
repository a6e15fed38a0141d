"""
Django settings for rinv_lab project.

Generated by 'django-admin startproject' using Django 5.2.8.

The project is command-line only: no URLs, no middleware. Django provides the
settings layer, logging configuration, management commands, the run registry
and the test runner.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""
import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.getenv('DJANGO_SECRET_KEY', 'django-insecure-rinv-lab-local-runs-only')


def parse_bool(s):
  return s in {'1', 'true', 'yes', 'True'}
DEBUG = parse_bool(os.getenv('DJANGO_DEBUG', 'false'))

ALLOWED_HOSTS = []

# Application definition

INSTALLED_APPS = [
    'django.contrib.auth',
    'django.contrib.contenttypes',
    'rest_framework',
    'invariance',
]

RINV = {
    # verification checks run on a thread pool of this size
    'THREADS': int(os.getenv('RINV_THREADS') or os.cpu_count() or 1),
    # default parent of run directories
    'RUNS_DIR': Path(os.getenv('RINV_RUNS_DIR') or BASE_DIR / 'runs'),
    # finite-output assertions in every kernel; slow
    'DEBUG_CHECKS': parse_bool(os.getenv('RINV_DEBUG_CHECKS', 'false')),
}


# Database
# https://docs.djangoproject.com/en/5.2/ref/settings/#databases

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': Path(os.getenv('RINV_DB') or BASE_DIR / 'db.sqlite3'),
    }
}


LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'invariance': {
            'handlers': ['console'],
            'level': 'DEBUG' if DEBUG else os.getenv('RINV_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
    },
}


# Internationalization
# https://docs.djangoproject.com/en/5.2/topics/i18n/

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# Default primary key field type
# https://docs.djangoproject.com/en/5.2/ref/settings/#default-auto-field

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'
