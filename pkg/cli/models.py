from django.db import models


class Stage(models.TextChoices):
    INGEST = 'Ingest', 'Ingest'
    GENERATE = 'Generate', 'Generate'
    ALIGN = 'Align', 'Align'
    JUDGE = 'Judge', 'Judge'
    PAIR = 'Pair', 'Pair'
    TRAIN = 'Train', 'Train'
    EXPORT = 'Export', 'Export'
    EVAL = 'Eval', 'Eval'
    SHIFT = 'Shift', 'Shift'
    REPORT = 'Report', 'Report'
    ITERATE = 'Iterate', 'Iterate'


class ManifestStatus(models.TextChoices):
    ACTIVE = 'active', 'Active'
    SUPERSEDED = 'superseded', 'Superseded'


class RunManifest(models.Model):
    """One executed stage: what it read, what it wrote, and under which config.

    ``inputs`` and ``outputs`` map file paths to sha256 digests. ``parents``
    are the active manifests that produced this stage's inputs.
    """

    run_id = models.CharField(max_length=32, unique=True)
    stage = models.CharField(max_length=10, choices=Stage.choices)
    workdir = models.CharField(max_length=500)
    inputs = models.JSONField(default=dict)
    outputs = models.JSONField(default=dict)
    config = models.JSONField(default=dict)
    config_hash = models.CharField(max_length=64)
    seed = models.BigIntegerField(default=0)
    status = models.CharField(max_length=12, choices=ManifestStatus.choices, default=ManifestStatus.ACTIVE)
    parents = models.ManyToManyField('self', symmetrical=False, related_name='children', blank=True)
    started_at = models.DateTimeField()
    finished_at = models.DateTimeField()

    def __str__(self):
        return f"{self.stage} run {self.run_id} ({self.status})"

    @property
    def is_active(self):
        return self.status == ManifestStatus.ACTIVE

    class Meta:
        db_table = 'run_manifests'
        ordering = ['started_at', 'id']
