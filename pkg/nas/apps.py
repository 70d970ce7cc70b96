from django.apps import AppConfig


class NasConfig(AppConfig):
    name = 'nas'
