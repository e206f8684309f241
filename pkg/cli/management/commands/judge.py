from cli.commands import BaseStageCommand


class Command(BaseStageCommand):
    help = "Score aligned candidates with the judge model."
    stage_method = "judge"
