from django.apps import AppConfig


class NnetConfig(AppConfig):
    name = 'nnet'
    verbose_name = 'Velocity network and optimizer'
