import os

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from chronopref.exceptions import ChronoprefError

from .config import resolve_config
from .pipeline import PipelineRun


def flag_name(key):
    return "--" + key.replace("_", "-")


class BaseStageCommand(BaseCommand):
    """Config flags, error mapping and status output shared by every stage command.

    Subclasses either name a ``PipelineRun`` method in ``stage_method`` or
    override ``run``.
    """

    stage_method = None
    requires_migrations_checks = True

    def add_arguments(self, parser):
        parser.add_argument('--config', dest='config_file', help="JSON config file")
        group = parser.add_argument_group("config overrides")
        for key in sorted(settings.CHRONOPREF):
            group.add_argument(flag_name(key), dest=key, default=None, metavar=key.upper())

    def handle(self, *args, **options):
        flags = {key: options.get(key) for key in settings.CHRONOPREF}
        try:
            config = resolve_config(options.get('config_file'), os.environ, flags)
            self.run(config, *args, **options)
        except ChronoprefError as exc:
            raise CommandError(str(exc), returncode=exc.exit_code) from exc

    def run(self, config, *args, **options):
        result = getattr(PipelineRun(config), self.stage_method)()
        self.show(result)

    def show(self, result):
        manifest = result.manifest
        line = f"{manifest.stage}: {result.status} (run {manifest.run_id})"
        self.stdout.write(self.style.WARNING(line) if result.skipped else self.style.SUCCESS(line))
