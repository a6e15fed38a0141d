from invariance.datasets import GLYPH_MENU, save_idx, synth_shapes
from invariance.exceptions import ConfigError

from ._base import RinvCommand


class Command(RinvCommand):
    help = 'Write a synthetic rotated-shapes set as IDX files (<out>-images-idx3-ubyte, <out>-labels-idx1-ubyte).'

    def add_arguments(self, parser):
        parser.add_argument('--out', required=True, help='IDX prefix')
        parser.add_argument('--n', type=int, required=True)
        parser.add_argument('--size', type=int, default=24)
        parser.add_argument('--classes', type=int, default=4)
        parser.add_argument('--seed', type=int, default=0)

    def run(self, out, n, size, classes, seed, **options):
        if n < 1:
            raise ConfigError(f"need at least one image, got {n}", 'n')
        if size < 8:
            raise ConfigError(f"images must be at least 8px, got {size}", 'size')
        if not 1 <= classes <= len(GLYPH_MENU):
            raise ConfigError(f"must be in [1, {len(GLYPH_MENU)}], got {classes}", 'classes')
        data = synth_shapes(n, size, classes, seed)
        images, labels = save_idx(data, out)
        self.stdout.write(f"wrote {images} and {labels}")
        for label, count in enumerate(data.class_counts(classes)):
            self.stdout.write(f"class {label} ({GLYPH_MENU[label]}): {count}")
