from cli.commands import BaseStageCommand
from cli.pipeline import PipelineRun


class Command(BaseStageCommand):
    help = "Mark the best and second-best model per task across evaluation reports."

    def add_arguments(self, parser):
        parser.add_argument('reports', nargs='+', help="eval_report.json or report.csv files")
        super().add_arguments(parser)

    def run(self, config, *args, **options):
        self.show(PipelineRun(config).compare(options['reports']))
