from django.db import models

from .training import mte


class TrainingRunQuerySet(models.QuerySet):
    def mte(self):
        '''(mean test error, population std, number of runs) over the queryset'''
        errors = list(self.exclude(test_error=None).values_list('test_error', flat=True))
        if not errors:
            return None
        return (*mte(errors), len(errors))


class TrainingRun(models.Model):
    label = models.CharField(max_length=100, db_index=True)
    config_name = models.CharField(max_length=255, blank=True)
    seed = models.PositiveIntegerField()
    head_kind = models.CharField(max_length=32)
    subset_size = models.PositiveIntegerField(null=True, blank=True)
    test_error = models.FloatField(null=True, blank=True)
    parameters = models.PositiveIntegerField()
    invariance_residual = models.FloatField(null=True, blank=True)
    checkpoint = models.CharField(max_length=1024)
    created = models.DateTimeField(auto_now_add=True)

    objects = TrainingRunQuerySet.as_manager()

    class Meta:
        ordering = ['created', 'id']

    def __str__(self):
        return f"{self.label} seed={self.seed} ({self.head_kind}): {self.test_error}"


class EvaluationRecord(models.Model):
    checkpoint = models.CharField(max_length=1024)
    data_source = models.CharField(max_length=1024)
    error_rate = models.FloatField()
    label = models.CharField(max_length=100, blank=True, db_index=True)
    created = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['created', 'id']

    def __str__(self):
        return f"{self.checkpoint} on {self.data_source}: {self.error_rate}"
