# Generated by Django 5.2.8 on 2026-10-19 09:14

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="RunManifest",
            fields=[
                (
                    "id",
                    models.BigAutoField(
                        auto_created=True,
                        primary_key=True,
                        serialize=False,
                        verbose_name="ID",
                    ),
                ),
                ("run_id", models.CharField(max_length=32, unique=True)),
                (
                    "stage",
                    models.CharField(
                        choices=[
                            ("Ingest", "Ingest"),
                            ("Generate", "Generate"),
                            ("Align", "Align"),
                            ("Judge", "Judge"),
                            ("Pair", "Pair"),
                            ("Train", "Train"),
                            ("Export", "Export"),
                            ("Eval", "Eval"),
                            ("Shift", "Shift"),
                            ("Report", "Report"),
                            ("Iterate", "Iterate"),
                        ],
                        max_length=10,
                    ),
                ),
                ("workdir", models.CharField(max_length=500)),
                ("inputs", models.JSONField(default=dict)),
                ("outputs", models.JSONField(default=dict)),
                ("config", models.JSONField(default=dict)),
                ("config_hash", models.CharField(max_length=64)),
                ("seed", models.BigIntegerField(default=0)),
                (
                    "status",
                    models.CharField(
                        choices=[("active", "Active"), ("superseded", "Superseded")],
                        default="active",
                        max_length=12,
                    ),
                ),
                ("started_at", models.DateTimeField()),
                ("finished_at", models.DateTimeField()),
                (
                    "parents",
                    models.ManyToManyField(
                        blank=True,
                        related_name="children",
                        to="cli.runmanifest",
                    ),
                ),
            ],
            options={
                "db_table": "run_manifests",
                "ordering": ["started_at", "id"],
            },
        ),
    ]
