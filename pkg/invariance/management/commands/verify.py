from django.core.management.base import CommandError

from invariance.config import load_run_config
from invariance.verification import SUITES, VerifyConfig, run_suites

from ._base import USAGE, VERIFICATION_FAILED, RinvCommand


class Command(RinvCommand):
    help = 'Run the numerical property suites and print one PASS/FAIL line per check.'

    def add_arguments(self, parser):
        parser.add_argument('--suite', choices=SUITES + ('all',))
        parser.add_argument('--n-alpha', type=int)
        parser.add_argument('--precision', type=int, choices=(32, 64))
        parser.add_argument('--samples', type=int)
        parser.add_argument('--seed', type=int)
        parser.add_argument('--config', help='run config whose [verify] section gives the defaults')
        parser.add_argument('--threads', type=int, help='defaults to RINV_THREADS')

    def run(self, suite, n_alpha, precision, samples, seed, config, threads, **options):
        base = (load_run_config(config).verify if config else None) or VerifyConfig()
        overrides = {'suite': suite, 'n_alpha': n_alpha, 'precision': precision, 'samples': samples, 'seed': seed}
        values = {**vars(base), **{k: v for k, v in overrides.items() if v is not None}}
        if values['n_alpha'] < 1 or values['samples'] < 1:
            raise CommandError('--n-alpha and --samples must be positive', returncode=USAGE)
        results = run_suites(VerifyConfig(**values), threads)
        for result in results:
            self.stdout.write(result.line())
        failed = [r for r in results if not r.passed]
        self.stdout.write(f"{len(results) - len(failed)}/{len(results)} checks passed")
        if failed:
            raise CommandError(f"{len(failed)} checks failed: " + ', '.join(f"{r.suite}/{r.name}" for r in failed),
                               returncode=VERIFICATION_FAILED)
