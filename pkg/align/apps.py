from django.apps import AppConfig


class AlignConfig(AppConfig):
    name = 'align'
    verbose_name = 'Self-distillation and preference alignment'
