from django.apps import AppConfig


class DialectAsrConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "dialect_asr"
    verbose_name = "Dolphin dialect ASR toolkit"
