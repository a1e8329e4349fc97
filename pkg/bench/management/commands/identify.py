from bench import pipeline

from ._base import BenchCommand


class Command(BenchCommand):
    help = 'Fit the linear map between ground-truth latents and learned representations'

    def run(self, config, /, **options):
        result = pipeline.cmd_identify(config)
        self.success(f"Mean held-out R2 {result['mean_r2']:.4f}, written to {result['directory']}")
