from pathlib import Path

from chronopref.exceptions import ConfigError
from cli.commands import BaseStageCommand
from corpus.synthetic import build_synthetic_corpus, uniform_pool_sizes, write_corpus


class Command(BaseStageCommand):
    help = "Write a synthetic corpus with the same instance pool size for every task."

    def add_arguments(self, parser):
        parser.add_argument('--pool-size', type=int, default=120)
        super().add_arguments(parser)

    def run(self, config, *args, **options):
        if not config["corpus_dir"]:
            raise ConfigError("make_mock_corpus needs --corpus-dir")
        corpus = build_synthetic_corpus(uniform_pool_sizes(options['pool_size']), seed=config["seed"])
        directory = write_corpus(corpus, Path(config["corpus_dir"]))
        self.stdout.write(self.style.SUCCESS(f"Wrote {len(corpus)} instances over {len(corpus.tasks)} tasks to {directory}"))
