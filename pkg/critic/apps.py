from django.apps import AppConfig


class CriticConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "critic"
