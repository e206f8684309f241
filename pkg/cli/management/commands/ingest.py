from cli.commands import BaseStageCommand


class Command(BaseStageCommand):
    help = "Load the corpus and write instances and frozen splits."
    stage_method = "ingest"
