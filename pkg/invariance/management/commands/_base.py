from django.core.management.base import BaseCommand, CommandError

from invariance.exceptions import ConfigError, FormatError, NumericalAbort, RinvError

USAGE = 2
NUMERICAL_ABORT = 3
VERIFICATION_FAILED = 4


class RinvCommand(BaseCommand):
    '''maps package errors onto exit codes: 2 usage/config/files, 3 numerical abort'''

    def handle(self, *args, **options):
        try:
            return self.run(**options)
        except NumericalAbort as exc:
            raise CommandError(str(exc), returncode=NUMERICAL_ABORT) from exc
        except (ConfigError, FormatError, FileNotFoundError) as exc:
            raise CommandError(str(exc), returncode=USAGE) from exc
        except RinvError as exc:
            raise CommandError(f"{type(exc).__name__}: {exc}", returncode=USAGE) from exc

    def run(self, **options):
        raise NotImplementedError
