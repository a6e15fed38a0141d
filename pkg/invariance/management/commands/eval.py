from django.core.management.base import CommandError

from invariance import runs

from ._base import USAGE, RinvCommand


class Command(RinvCommand):
    help = 'Error rate of a checkpoint on a data set; --label aggregates MTE over recorded runs.'

    def add_arguments(self, parser):
        parser.add_argument('--checkpoint', help='model.rinv written by train or prune')
        parser.add_argument('--data', help='IDX prefix, or a run config whose test split is used')
        parser.add_argument('--label', default='', help='registry label to aggregate over')

    def run(self, checkpoint, data, label, **options):
        if not checkpoint and not label:
            raise CommandError('give --checkpoint and --data, or --label', returncode=USAGE)
        if checkpoint:
            if not data:
                raise CommandError('--checkpoint needs --data', returncode=USAGE)
            record = runs.evaluate_checkpoint(checkpoint, data, label)
            self.stdout.write(f"error rate {record.error_rate:.6f}")
        if label:
            summary = runs.aggregate(label)
            if summary is None:
                raise CommandError(f"no recorded runs with label {label!r}", returncode=USAGE)
            mean, std, count = summary
            self.stdout.write(f"{label}: MTE {mean:.6f} ± {std:.6f} over {count} runs")
