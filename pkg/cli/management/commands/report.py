from cli.commands import BaseStageCommand


class Command(BaseStageCommand):
    help = "Render the evaluation report."
    stage_method = "report"
