from cli.commands import BaseStageCommand


class Command(BaseStageCommand):
    help = "Partition candidates by agreement with gold."
    stage_method = "align"
