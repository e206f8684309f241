from cli.commands import BaseStageCommand


class Command(BaseStageCommand):
    help = "Evaluate a model on every eval split."
    stage_method = "eval"
