from django.apps import AppConfig


class InvarianceConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'invariance'

    def ready(self):
        from django.conf import settings
        # default parent of run directories; train and prune also create their own
        try:
            settings.RINV['RUNS_DIR'].mkdir(parents=True, exist_ok=True)
        except Exception:
            pass
        return super().ready()
