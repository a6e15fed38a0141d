from invariance import runs
from invariance.config import load_run_config, validate_document
from invariance.presets import ROTATED_MNIST, preset_document

from ._base import RinvCommand


class Command(RinvCommand):
    help = 'Train one model from a run config; writes model.rinv, metrics.csv and summary.json.'

    def add_arguments(self, parser):
        source = parser.add_mutually_exclusive_group(required=True)
        source.add_argument('--config', help='run config (TOML)')
        source.add_argument('--preset', choices=sorted(ROTATED_MNIST), help='Rotated-MNIST preset for a head kind')
        parser.add_argument('--seed', type=int, help='root seed (defaults to train.seed)')
        parser.add_argument('--out-dir', help='run directory (defaults to RINV_RUNS_DIR/<config>-seed<seed>)')
        parser.add_argument('--subset', help='fraction in (0, 1] or sample count')
        parser.add_argument('--monomials', help='sidecar with selected monomials for a monomial head')
        parser.add_argument('--label', help='run registry label (defaults to the config name)')

    def run(self, config, preset, seed, out_dir, subset, monomials, label, **options):
        if config:
            run_config = load_run_config(config)
        else:
            run_config = validate_document(preset_document(preset, seed or 0), name=f"rotmnist-{preset}")
        with runs.numeric_context(run_config.train.precision):
            run = runs.prepare(run_config, seed, out_dir, subset)
            specs = runs.load_monomials(monomials, run_config.model) if monomials else None
            model, metrics = runs.train_run(run, specs)
        record = runs.record_run(run, model, metrics, label)
        self.stdout.write(f"run {record.label} seed {run.seed}: test error {metrics.test_error}, "
                          f"{metrics.parameters} parameters, invariance residual {metrics.invariance_residual}")
        self.stdout.write(f"checkpoint {record.checkpoint}")
