from django.apps import AppConfig


class KernelsConfig(AppConfig):
    name = 'kernels'
    verbose_name = 'Video autoencoder and attention kernels'
