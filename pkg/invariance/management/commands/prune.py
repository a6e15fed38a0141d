from invariance import runs
from invariance.config import load_run_config
from invariance.selection import ALGORITHMS

from ._base import RinvCommand


class Command(RinvCommand):
    help = 'Select n_m monomials from a pool of M, continue training and write the monomial sidecar.'

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True, help='run config (TOML) with a monomial head')
        parser.add_argument('--algorithm', choices=ALGORITHMS)
        parser.add_argument('--pool', type=int, help='initial pool size M')
        parser.add_argument('--target', type=int, help='monomials to keep (n_m)')
        parser.add_argument('--seed', type=int)
        parser.add_argument('--out-dir')
        parser.add_argument('--subset')
        parser.add_argument('--label')

    def run(self, config, algorithm, pool, target, seed, out_dir, subset, label, **options):
        run_config = load_run_config(config)
        selection = runs.selection_config(run_config, algorithm=algorithm, pool=pool, target=target)
        with runs.numeric_context(run_config.train.precision):
            run = runs.prepare(run_config, seed, out_dir, subset)
            model, metrics, result = runs.prune_run(run, selection)
        record = runs.record_run(run, model, metrics, label)
        for step in result.steps:
            self.stdout.write(f"epoch {step.epoch}: pool {step.pool_before} -> {len(step.kept)} "
                              f"(checksum {step.checksum[:12]})")
        self.stdout.write(f"kept {len(result.specs)} monomials: {run.out_dir / runs.SIDECAR_NAME}")
        self.stdout.write(f"run {record.label} seed {run.seed}: test error {metrics.test_error}")
