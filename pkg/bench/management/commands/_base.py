"""
Shared plumbing for the bench management commands

Flags common to every experiment command: --config, --seed, --out,
--objective. Library errors leave the command as CommandError with the
exit code carried by the exception class.
"""

import logging

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from rest_framework.exceptions import ValidationError

from bench import pipeline
from bench.encoders import OBJECTIVES
from bench.exceptions import BenchError

logger = logging.getLogger(__name__)

CONFIG_EXIT_CODE = 2


class BenchCommand(BaseCommand):
    """Base for commands that act on one experiment directory"""

    uses_config = True

    def add_arguments(self, parser):
        if not self.uses_config:
            return
        parser.add_argument('--config', metavar='PATH', help='Experiment config JSON')
        parser.add_argument('--seed', type=int, help='Override the config seed')
        parser.add_argument('--out', metavar='DIR', help='Experiment directory')
        parser.add_argument('--objective', choices=OBJECTIVES, help='Override the SSL objective')

    def load_config(self, options):
        return pipeline.load_config(
            options.get('config'),
            seed=options.get('seed'),
            output_dir=options.get('out'),
            objective=options.get('objective'),
            output_root=settings.SSLBENCH_OUTPUT_ROOT,
        )

    def handle(self, *args, **options):
        try:
            if self.uses_config:
                return self.run(self.load_config(options), **options)
            return self.run(None, **options)
        except BenchError as exc:
            logger.debug("%s failed", self.__class__.__module__, exc_info=True)
            raise CommandError(str(exc), returncode=exc.exit_code) from exc
        except ValidationError as exc:
            raise CommandError(str(exc.detail), returncode=CONFIG_EXIT_CODE) from exc

    def run(self, config, /, **options):
        raise NotImplementedError

    def success(self, message):
        self.stdout.write(self.style.SUCCESS(message))
