from cli.commands import BaseStageCommand


class Command(BaseStageCommand):
    help = "Compare token distributions of a base and a tuned model."
    stage_method = "shift"
