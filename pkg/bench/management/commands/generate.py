from bench import pipeline

from ._base import BenchCommand


class Command(BenchCommand):
    help = 'Sample the train-seen, test-seen and test-holdout latent datasets'

    def run(self, config, /, **options):
        result = pipeline.cmd_generate(config)
        sizes = ', '.join(f'{split}={count}' for split, count in result['sizes'].items())
        self.success(f"Generated {sizes} in {result['directory']}")
