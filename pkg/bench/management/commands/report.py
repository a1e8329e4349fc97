from pathlib import Path

from django.conf import settings

from bench import persistence
from bench.config import SCHEMA_VERSION, sweep_hash
from bench.tasks import aggregate_seed_reports, run_seed_pipeline

from ._base import BenchCommand


class Command(BenchCommand):
    help = 'Run every configured seed and aggregate their stability reports'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            '--aggregate-only', action='store_true',
            help='Skip the per-seed runs and aggregate the seed directories already present',
        )

    def run(self, config, /, **options):
        payload = persistence.read_json(options['config']) if options.get('config') else {'schema_version': SCHEMA_VERSION}
        root = Path(
            options.get('out') or payload.get('output_dir')
            or Path(settings.SSLBENCH_OUTPUT_ROOT) / f'{config.ssl.objective}-{config.geometry}'
        )
        seeds = (options['seed'],) if options.get('seed') is not None else config.seeds
        directories = [str(root / f'seed{seed}') for seed in seeds]

        if not options['aggregate_only']:
            # one task per seed; each owns its directory lock
            results = [
                run_seed_pipeline.delay(payload, seed, directory, options.get('objective'))
                for seed, directory in zip(seeds, directories)
            ]
            for result in results:
                summary = result.get()
                self.stdout.write(f"seed {summary['seed']}: mean R2 {summary['mean_r2']:.4f}")

        summary = aggregate_seed_reports.delay(directories, str(root), sweep_hash(config)).get()
        self.success(f"Aggregated {summary['seeds']} seeds into {persistence.AGGREGATE_FILE} under {root}")
