from bench import pipeline

from ._base import BenchCommand


class Command(BenchCommand):
    help = 'Fit the linear probe on frozen train-seen representations'

    def run(self, config, /, **options):
        result = pipeline.cmd_probe(config)
        if result['missing_classes']:
            self.stdout.write(self.style.WARNING(f"Classes absent from training: {result['missing_classes']}"))
        self.success(f"Probe written to {result['directory']}")
