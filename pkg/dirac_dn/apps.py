from django.apps import AppConfig


class DiracDnConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'dirac_dn'
    verbose_name = 'Dirac DN experiments'
