from django.core.management.base import CommandError

from bench import pipeline

from ._base import BenchCommand

MISMATCH_EXIT_CODE = 3


class Command(BenchCommand):
    help = 'Load, re-save and reload a checkpoint; bytes and predictions must be unchanged'

    uses_config = False

    def add_arguments(self, parser):
        parser.add_argument('checkpoint', metavar='PATH')

    def run(self, config, /, **options):
        result = pipeline.cmd_checkpoint_roundtrip(options['checkpoint'])
        if not result.passed:
            raise CommandError(
                f"{result.kind} round trip changed the checkpoint "
                f"(bytes identical: {result.identical_bytes}, predictions identical: {result.identical_predictions})",
                returncode=MISMATCH_EXIT_CODE,
            )
        self.success(f"{result.kind} round trip identical")
