from cli.commands import BaseStageCommand


class Command(BaseStageCommand):
    help = "Select one preference pair per instance."
    stage_method = "pair"
