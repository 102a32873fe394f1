"""
Shared base for flowforge management commands.

Exit codes: 0 on success, 1 for invalid configuration or input, 2 for I/O
and checkpoint errors.
"""
import logging
import os

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from utils.exceptions import FlowforgeError
from utils.rng import RngStreams
from .checkpoint import CheckpointError
from .config import RunConfig
from .reports import write_json

logger = logging.getLogger(__name__)

APP_LOGGERS = ('utils', 'nnet', 'flow', 'align', 'kernels', 'plan', 'dynamics', 'cli')

EXIT_INVALID = 1
EXIT_IO = 2


def set_verbosity(verbosity):
    if verbosity > 1:
        level = logging.DEBUG
    elif verbosity > 0:
        level = logging.INFO
    else:
        level = logging.WARNING
    for name in APP_LOGGERS:
        logging.getLogger(name).setLevel(level)


class FlowforgeCommand(BaseCommand):
    """
    Subclasses implement `add_command_arguments` and `run(config, out_dir, options)`.

    `run` returns an optional summary dict, which is written to
    `summary.json` next to the effective `config.json`.
    """
    output_name = ''

    def add_arguments(self, parser):
        parser.add_argument('--config', help='Path to a section.key=value config file')
        parser.add_argument('--seed', type=int, help='Run seed (default: FLOWFORGE_DEFAULT_SEED)')
        parser.add_argument('--out', help='Output directory (default: FLOWFORGE_OUTPUT_DIR/<command>)')
        parser.add_argument(
            '--set',
            action='append',
            default=[],
            metavar='SECTION.KEY=VALUE',
            help='Override one config value; repeatable',
        )
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def overrides(self, options):
        """Command flags translated to `section.key=value` overrides."""
        return []

    def handle(self, *args, **options):
        set_verbosity(options.get('verbosity', 1))
        seed = options.get('seed')
        seed = settings.FLOWFORGE_DEFAULT_SEED if seed is None else seed
        try:
            config = RunConfig.load(options.get('config'), list(options.get('set') or []) + self.overrides(options),
                                    seed=seed)
            out_dir = options.get('out') or os.path.join(settings.FLOWFORGE_OUTPUT_DIR, self.output_name)
            os.makedirs(out_dir, exist_ok=True)
            config.log()
            write_json(os.path.join(out_dir, 'config.json'), config.as_dict())

            summary = self.run(config, out_dir, options)
            if summary is not None:
                write_json(os.path.join(out_dir, 'summary.json'), summary)
        except CommandError:
            raise
        except (OSError, CheckpointError) as e:
            logger.error(f"{self.output_name}: {e}")
            raise CommandError(str(e), returncode=EXIT_IO)
        except FlowforgeError as e:
            logger.error(f"{self.output_name}: {e}")
            raise CommandError(str(e), returncode=EXIT_INVALID)
        except Exception as e:
            logger.error(f"Unexpected error in {self.output_name}: {str(e)}", exc_info=True)
            raise
        self.stdout.write(self.style.SUCCESS(f"{self.output_name}: outputs in {out_dir}"))

    def streams(self, config):
        return RngStreams(config.seed)

    def run(self, config, out_dir, options):
        raise NotImplementedError
