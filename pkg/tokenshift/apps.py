from django.apps import AppConfig


class TokenshiftConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "tokenshift"
