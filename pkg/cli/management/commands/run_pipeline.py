from cli.commands import BaseStageCommand
from cli.pipeline import PipelineRun


class Command(BaseStageCommand):
    help = "Run ingest, generate, align, judge, pair, eval and report in order."

    def run(self, config, *args, **options):
        for result in PipelineRun(config).run_base():
            self.show(result)
