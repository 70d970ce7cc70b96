from django.apps import AppConfig


class HpoConfig(AppConfig):
    name = 'hpo'
