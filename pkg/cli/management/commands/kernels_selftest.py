import logging
import os

from django.core.management.base import CommandError

from cli.base import EXIT_INVALID, FlowforgeCommand
from cli.reports import format_table
from kernels.selftest import run_selftests
from utils.csvio import write_csv

logger = logging.getLogger(__name__)


class Command(FlowforgeCommand):
    help = 'Run the kernel property checks and print a pass/fail table'
    output_name = 'kernels_selftest'

    def run(self, config, out_dir, options):
        results = run_selftests(seed=config.seed)
        rows = [[r.name, 'PASS' if r.passed else 'FAIL', r.detail] for r in results]
        write_csv(os.path.join(out_dir, 'selftest.csv'), ('check', 'result', 'detail'), rows)
        self.stdout.write(format_table(('check', 'result', 'detail'), rows))

        failed = [r.name for r in results if not r.passed]
        if failed:
            raise CommandError(f"{len(failed)} kernel self-test(s) failed: {', '.join(failed)}",
                               returncode=EXIT_INVALID)
        return {'checks': len(results), 'failed': failed}
