"""
Labeled image sets: IDX ingestion, the synthetic rotated-shapes task,
stratified subsampling and training-time augmentation.
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .autodiff import Tensor
from .exceptions import ContractError, FormatError
from .sampling import rotate_plane

logger = logging.getLogger(__name__)

SOURCES = ('synthetic-shapes', 'idx-files')
AUGMENTATIONS = ('none', 'random-rotation', 'random-crop+flip')
IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass
class LabeledImages:
    images: np.ndarray  # [N, 1, H, W] in [0, 1]
    labels: np.ndarray  # [N] int64

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.shape[0] != self.labels.shape[0]:
            raise ContractError(f"{self.images.shape[0]} images but {self.labels.shape[0]} labels")

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def image_size(self) -> Tuple[int, int]:
        return tuple(self.images.shape[-2:])

    def take(self, indices) -> 'LabeledImages':
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledImages(self.images[indices], self.labels[indices])

    def class_counts(self, classes: Optional[int] = None) -> List[int]:
        size = classes or (int(self.labels.max()) + 1 if len(self) else 0)
        return np.bincount(self.labels, minlength=size).tolist()


@dataclass
class DatasetSpec:
    source: str = 'synthetic-shapes'
    image_size: int = 24
    classes: int = 4
    train_count: int = 1000
    test_count: int = 1000
    train_prefix: str = ''
    test_prefix: str = ''
    augmentation: str = 'none'
    subset: Optional[float] = None
    stratified: bool = True
    seed: int = 0


# --------------------------------------------------------------------------
# IDX files
# --------------------------------------------------------------------------
def idx_paths(prefix: Union[str, Path]) -> Tuple[Path, Path]:
    prefix = str(prefix)
    return Path(f"{prefix}-images-idx3-ubyte"), Path(f"{prefix}-labels-idx1-ubyte")


def _parse_idx(raw: bytes, magic: int, rank: int, what: str) -> np.ndarray:
    if len(raw) < 4:
        raise FormatError(f"{what}: truncated IDX header", offset=len(raw))
    found = int.from_bytes(raw[:4], 'big')
    if found != magic:
        raise FormatError(f"{what}: bad IDX magic 0x{found:08x}, expected 0x{magic:08x}", offset=0)
    header = 4 + 4 * rank
    if len(raw) < header:
        raise FormatError(f"{what}: truncated IDX dimensions", offset=len(raw))
    dims = tuple(int(d) for d in np.frombuffer(raw, dtype='>u4', count=rank, offset=4))
    size = int(np.prod(dims))
    if len(raw) < header + size:
        raise FormatError(f"{what}: truncated payload, expected {size} bytes", offset=len(raw))
    if len(raw) > header + size:
        raise FormatError(f"{what}: {len(raw) - header - size} trailing bytes", offset=header + size)
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def read_idx_images(path: Union[str, Path]) -> np.ndarray:
    return _parse_idx(Path(path).read_bytes(), IMAGE_MAGIC, 3, str(path))


def read_idx_labels(path: Union[str, Path]) -> np.ndarray:
    return _parse_idx(Path(path).read_bytes(), LABEL_MAGIC, 1, str(path))


def encode_idx(array: np.ndarray, magic: int) -> bytes:
    array = np.ascontiguousarray(array, dtype=np.uint8)
    return magic.to_bytes(4, 'big') + np.asarray(array.shape, dtype='>u4').tobytes() + array.tobytes()


def load_idx(prefix: Union[str, Path]) -> LabeledImages:
    image_path, label_path = idx_paths(prefix)
    images = read_idx_images(image_path)
    labels = read_idx_labels(label_path)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{label_path}: {labels.shape[0]} labels for {images.shape[0]} images", offset=4)
    data = images.astype(np.float32)[:, None, :, :] / np.float32(255.0)
    return LabeledImages(data, labels.astype(np.int64))


def save_idx(data: LabeledImages, prefix: Union[str, Path]) -> Tuple[Path, Path]:
    image_path, label_path = idx_paths(prefix)
    image_path.parent.mkdir(parents=True, exist_ok=True)
    pixels = np.clip(np.rint(data.images[:, 0] * 255.0), 0, 255).astype(np.uint8)
    image_path.write_bytes(encode_idx(pixels, IMAGE_MAGIC))
    label_path.write_bytes(encode_idx(data.labels.astype(np.uint8), LABEL_MAGIC))
    return image_path, label_path


# --------------------------------------------------------------------------
# synthetic rotated shapes
# --------------------------------------------------------------------------
def _arc(radius: float, start: float, stop: float, pieces: int = 12) -> List[Tuple]:
    angles = np.linspace(start, stop, pieces + 1)
    points = [(radius * math.cos(a), radius * math.sin(a)) for a in angles]
    return list(zip(points[:-1], points[1:]))


# Glyphs as line segments in a [-1, 1] box; none of them maps onto another by a rotation.
GLYPHS: Dict[str, List[Tuple]] = {
    'bar': [((-0.8, 0.0), (0.8, 0.0))],
    'corner': [((-0.7, -0.7), (0.7, -0.7)), ((-0.7, -0.7), (-0.7, 0.7))],
    'tee': [((-0.8, -0.6), (0.8, -0.6)), ((0.0, -0.6), (0.0, 0.8))],
    'cross': [((-0.8, 0.0), (0.8, 0.0)), ((0.0, -0.8), (0.0, 0.8))],
    'arc': _arc(0.7, 0.0, 1.25 * math.pi),
    'arrow': [((-0.8, 0.0), (0.8, 0.0)), ((0.8, 0.0), (0.3, 0.45)), ((0.8, 0.0), (0.3, -0.45))],
    'triangle': [((-0.7, -0.6), (0.7, -0.6)), ((0.7, -0.6), (0.0, 0.7)), ((0.0, 0.7), (-0.7, -0.6))],
    'zigzag': [((-0.8, -0.5), (-0.25, 0.5)), ((-0.25, 0.5), (0.25, -0.5)), ((0.25, -0.5), (0.8, 0.5))],
}
GLYPH_MENU = tuple(GLYPHS)


def _segment_distance(px: np.ndarray, py: np.ndarray, segment) -> np.ndarray:
    (ax, ay), (bx, by) = segment
    dx, dy = bx - ax, by - ay
    t = np.clip(((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
    return np.hypot(px - (ax + t * dx), py - (ay + t * dy))


def render_glyph(name: str, size: int, angle: float, scale: float = 1.0,
                 shift: Tuple[float, float] = (0.0, 0.0), stroke: float = 0.12) -> np.ndarray:
    """Anti-aliased distance-field rendering of a glyph rotated by `angle`."""
    half = (size - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(size) - half - shift[0], np.arange(size) - half - shift[1], indexing='ij')
    extent = scale * 0.8 * half
    # glyph coordinates of every pixel: inverse rotation of the (row, col) offset
    cos, sin = math.cos(angle), math.sin(angle)
    gx = (cos * rows + sin * cols) / extent
    gy = (-sin * rows + cos * cols) / extent
    distance = np.min([_segment_distance(gx, gy, s) for s in GLYPHS[name]], axis=0)
    pixel = 1.0 / extent
    return np.clip((stroke - distance) / pixel + 0.5, 0.0, 1.0)


def synth_shapes(n: int, size: int, classes: int, seed: Union[int, np.random.Generator]) -> LabeledImages:
    """Balanced glyph images, each at a uniformly random orientation."""
    if classes < 1 or classes > len(GLYPH_MENU):
        raise ContractError(f"classes must be in [1, {len(GLYPH_MENU)}], got {classes}")
    if n < 0 or size < 8:
        raise ContractError(f"need n >= 0 and size >= 8, got n={n}, size={size}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % classes)
    images = np.zeros((n, 1, size, size), dtype=np.float32)
    for i, label in enumerate(labels):
        angle = rng.uniform(0.0, 2 * math.pi)
        scale = rng.uniform(0.8, 1.0)
        shift = tuple(rng.uniform(-1.0, 1.0, size=2))
        images[i, 0] = render_glyph(GLYPH_MENU[label], size, angle, scale, shift)
    return LabeledImages(images, labels)


# --------------------------------------------------------------------------
# subsets
# --------------------------------------------------------------------------
def _resolve_count(amount: Union[int, float], total: int) -> int:
    if isinstance(amount, float):
        if not 0.0 < amount <= 1.0:
            raise ContractError(f"subset fraction must be in (0, 1], got {amount}")
        return int(round(amount * total))
    return int(amount)


def stratified_allocation(counts: Sequence[int], target: int) -> List[int]:
    """Largest-remainder split of `target` in proportion to `counts` (ties to the lower class)."""
    total = sum(counts)
    ideal = [target * c / total for c in counts]
    alloc = [int(math.floor(q)) for q in ideal]
    order = sorted(range(len(counts)), key=lambda k: (-(ideal[k] - alloc[k]), k))
    for k in order[:target - sum(alloc)]:
        alloc[k] += 1
    return alloc


def stratified_subset(data: LabeledImages, amount: Union[int, float],
                      seed: Union[int, np.random.Generator]) -> Tuple[LabeledImages, np.ndarray]:
    """
    Random subset with the class ratios of `data`; returns the subset and its
    sorted source indices. `amount` is a count or a fraction in (0, 1].
    """
    total = len(data)
    count = _resolve_count(amount, total)
    classes = [k for k, c in enumerate(data.class_counts()) if c > 0]
    if count > total:
        raise ContractError(f"subset of {count} requested from {total} samples")
    if count < len(classes):
        raise ContractError(f"subset of {count} cannot hold {len(classes)} classes")
    if count == total:
        indices = np.arange(total)
        return data.take(indices), indices
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    members = [np.flatnonzero(data.labels == k) for k in classes]
    alloc = stratified_allocation([len(m) for m in members], count)
    chosen = [rng.choice(m, size=a, replace=False) for m, a in zip(members, alloc)]
    indices = np.sort(np.concatenate(chosen))
    return data.take(indices), indices


def subsample(data: LabeledImages, amount: Union[int, float], rng: np.random.Generator,
              stratified: bool = True) -> Tuple[LabeledImages, np.ndarray]:
    if stratified:
        return stratified_subset(data, amount, rng)
    count = _resolve_count(amount, len(data))
    if not 0 < count <= len(data):
        raise ContractError(f"subset of {count} requested from {len(data)} samples")
    indices = np.sort(rng.choice(len(data), size=count, replace=False))
    return data.take(indices), indices


# --------------------------------------------------------------------------
# augmentation
# --------------------------------------------------------------------------
def augment_random_rotation(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Rotate each image by an independent angle drawn uniformly from [0, 2*pi)."""
    angles = rng.uniform(0.0, 2 * math.pi, size=images.shape[0])
    return np.stack([rotate_plane(Tensor(image), float(a)).data for image, a in zip(images, angles)])


def augment_crop_flip(images: np.ndarray, rng: np.random.Generator, pad: int = 2) -> np.ndarray:
    """Zero-pad by `pad`, crop back at a random offset, flip columns with probability 1/2."""
    n, _, h, w = images.shape
    padded = np.pad(images, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    offsets = rng.integers(0, 2 * pad + 1, size=(n, 2))
    flips = rng.random(n) < 0.5
    out = np.empty_like(images)
    for i, ((r, c), flip) in enumerate(zip(offsets, flips)):
        crop = padded[i, :, r:r + h, c:c + w]
        out[i] = crop[..., ::-1] if flip else crop
    return out


def augment(images: np.ndarray, mode: str, rng: np.random.Generator) -> np.ndarray:
    if mode == 'none':
        return images
    if mode == 'random-rotation':
        return augment_random_rotation(images, rng)
    if mode == 'random-crop+flip':
        return augment_crop_flip(images, rng)
    raise ContractError(f"unknown augmentation {mode!r}")


def load_dataset(spec: DatasetSpec) -> Tuple[LabeledImages, LabeledImages]:
    """Train and test splits described by `spec` (before any subsetting)."""
    if spec.source == 'synthetic-shapes':
        sequence = np.random.SeedSequence(spec.seed)
        train_seed, test_seed = sequence.spawn(2)
        train = synth_shapes(spec.train_count, spec.image_size, spec.classes, np.random.default_rng(train_seed))
        test = synth_shapes(spec.test_count, spec.image_size, spec.classes, np.random.default_rng(test_seed))
    elif spec.source == 'idx-files':
        train, test = load_idx(spec.train_prefix), load_idx(spec.test_prefix)
    else:
        raise ContractError(f"unknown data source {spec.source!r}")
    logger.info("loaded %d train / %d test images (%s)", len(train), len(test), spec.source)
    return train, test
