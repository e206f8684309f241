from django.apps import AppConfig


class DpoAppConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "dpo"
