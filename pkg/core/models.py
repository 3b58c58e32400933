"""
نماذج سجل المهام
Job records: one row per CLI job with its provenance.
"""
from django.db import models
from django.utils import timezone
from django.utils.translation import gettext_lazy as _


class RankingStrategy(models.TextChoices):
    POINTWISE = 'pointwise', _('Pointwise label logits')
    PAIRWISE = 'pairwise', _('Pairwise heapsort')
    LISTWISE = 'listwise', _('Listwise sliding window')


class JobRun(models.Model):
    """سجل تشغيل مهمة"""

    class Command(models.TextChoices):
        RANK = 'rank', _('Rank')
        CRITERIA = 'criteria', _('Criteria')
        EXPLAIN = 'explain', _('Explain')
        EVALUATE = 'evaluate', _('Evaluate')
        FAIRNESS = 'fairness', _('Fairness')
        MINE_NEGATIVES = 'mine_negatives', _('Mine negatives')
        FIXTURE = 'fixture', _('Fixture')
        VALIDATE = 'validate', _('Validate')

    class Status(models.TextChoices):
        PENDING = 'pending', _('Pending')
        RUNNING = 'running', _('Running')
        COMPLETED = 'completed', _('Completed')
        PARTIAL = 'partial', _('Completed with failures')
        FAILED = 'failed', _('Failed')

    command = models.CharField(_('command'), max_length=30, choices=Command.choices)
    status = models.CharField(
        _('status'),
        max_length=20,
        choices=Status.choices,
        default=Status.PENDING
    )
    config_digest = models.CharField(_('config digest'), max_length=64, blank=True)
    backend_identity = models.CharField(_('backend identity'), max_length=255, blank=True)
    output_dir = models.CharField(_('output directory'), max_length=1024, blank=True)

    warnings_count = models.PositiveIntegerField(_('warnings'), default=0)
    errors_count = models.PositiveIntegerField(_('errors'), default=0)
    error_message = models.TextField(_('error message'), blank=True)
    provenance = models.JSONField(_('provenance'), default=dict, blank=True)

    started_at = models.DateTimeField(_('started at'), null=True, blank=True)
    completed_at = models.DateTimeField(_('completed at'), null=True, blank=True)
    created_at = models.DateTimeField(_('created at'), auto_now_add=True)

    class Meta:
        verbose_name = _('job run')
        verbose_name_plural = _('job runs')
        ordering = ['-created_at']

    def __str__(self):
        return f"{self.get_command_display()} #{self.pk} ({self.status})"

    def mark_running(self):
        self.status = self.Status.RUNNING
        self.started_at = timezone.now()
        self.save(update_fields=['status', 'started_at'])

    def mark_finished(self, provenance, warnings_count=0, errors_count=0):
        self.provenance = provenance
        self.warnings_count = warnings_count
        self.errors_count = errors_count
        self.status = self.Status.PARTIAL if errors_count else self.Status.COMPLETED
        self.completed_at = timezone.now()
        self.save()

    def mark_failed(self, message):
        self.status = self.Status.FAILED
        self.error_message = message[:2000]
        self.errors_count += 1
        self.completed_at = timezone.now()
        self.save()

    @property
    def duration_seconds(self):
        if self.started_at and self.completed_at:
            return (self.completed_at - self.started_at).total_seconds()
        return None
