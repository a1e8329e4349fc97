from bench import pipeline

from ._base import BenchCommand


class Command(BenchCommand):
    help = 'Train the SSL encoder on the train-seen split'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--resume', metavar='PATH', help='Encoder checkpoint to continue from')

    def run(self, config, /, **options):
        result = pipeline.cmd_train(config, resume=options.get('resume'))
        self.success(
            f"Trained {config.ssl.objective} for {result['epochs']} epochs "
            f"({result['batches']} batches) in {result['directory']}"
        )
