from bench import pipeline

from ._base import BenchCommand


class Command(BenchCommand):
    help = 'Run the unstable-shift sweep, both remedies, treatment effects and the identifiability fit'

    def run(self, config, /, **options):
        result = pipeline.cmd_evaluate(config)
        self.success(
            f"{result['rows']} report rows in {result['directory']} "
            f"(mean R2 {result['mean_r2']:.4f}, nullspace ratio {result['nullspace_ratio']:.4f})"
        )
