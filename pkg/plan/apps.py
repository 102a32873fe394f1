from django.apps import AppConfig


class PlanConfig(AppConfig):
    name = 'plan'
    verbose_name = 'Parallelism planner and load balancer'
