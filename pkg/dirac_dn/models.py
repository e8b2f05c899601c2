import uuid
from django.db import models


class ExperimentRun(models.Model):
    STATUS_CHOICES = [
        ('PENDING', 'Pending'),
        ('RUNNING', 'Running'),
        ('PASSED', 'Passed'),
        ('FAILED', 'Failed'),
        ('ERROR', 'Error'),
    ]

    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    created_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)
    subcommand = models.CharField(max_length=40)
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default='PENDING')

    seed = models.BigIntegerField(default=0)
    threads = models.IntegerField(default=1)
    config_text = models.TextField(blank=True)
    output_dir = models.CharField(max_length=500, blank=True)
    exit_code = models.IntegerField(null=True, blank=True)
    error_message = models.TextField(blank=True)

    class Meta:
        ordering = ['-created_at']
        indexes = [
            models.Index(fields=['status']),
            models.Index(fields=['subcommand']),
        ]

    def __str__(self):
        return f"Run {self.id.hex[:8]} - {self.subcommand} - {self.status}"

    @property
    def short_id(self):
        return self.id.hex[:8]

    @property
    def failed_checks(self):
        return self.residuals.filter(passed=False).count()


class ResidualRecord(models.Model):
    run = models.ForeignKey(ExperimentRun, on_delete=models.CASCADE, related_name='residuals')
    name = models.CharField(max_length=120)
    value = models.FloatField()
    tolerance = models.FloatField(null=True, blank=True)
    passed = models.BooleanField(default=True)
    grid = models.CharField(max_length=80, blank=True)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['run', 'id']

    def __str__(self):
        verdict = 'ok' if self.passed else 'FAIL'
        return f"{self.name}={self.value:.3e} ({verdict})"
