from django.apps import AppConfig


class DatasetToolsConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'dataset_tools'
    verbose_name = 'Dataset tools'
