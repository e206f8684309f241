from cli.commands import BaseStageCommand


class Command(BaseStageCommand):
    help = "Write preference pairs as prompt/chosen/rejected JSONL."
    stage_method = "export_pairs"
