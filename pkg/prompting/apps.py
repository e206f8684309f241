from django.apps import AppConfig


class PromptingConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "prompting"
