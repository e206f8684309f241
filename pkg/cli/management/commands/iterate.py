from cli.commands import BaseStageCommand
from cli.pipeline import run_iterations


class Command(BaseStageCommand):
    help = "Run iterative rounds: the base pipeline then toy training, regenerating from the last policy."

    def run(self, config, *args, **options):
        round_results, stage_results = run_iterations(config)
        for result in stage_results:
            self.show(result)
        for result in round_results:
            self.stdout.write(f"round {result.plan.index}: {result.plan.policy_model} -> {result.pairs_path}")
