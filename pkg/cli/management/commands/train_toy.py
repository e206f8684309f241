from cli.commands import BaseStageCommand


class Command(BaseStageCommand):
    help = "Train the toy policy on the preference pairs."
    stage_method = "train_toy"
