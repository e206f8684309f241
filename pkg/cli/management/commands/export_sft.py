from cli.commands import BaseStageCommand


class Command(BaseStageCommand):
    help = "Write chosen responses as an SFT dataset."
    stage_method = "export_sft"
