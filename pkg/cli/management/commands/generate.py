from cli.commands import BaseStageCommand


class Command(BaseStageCommand):
    help = "Sample candidate responses for the optimization split."
    stage_method = "generate"
