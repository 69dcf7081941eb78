"""
Dataset management module for polarized-cell images.
Synthetic cell generation, ground truth from tracks, label-correct augmentation,
fold splitting and the on-disk dataset format (8-bit PGM images + labels.csv).
"""

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import click
import numpy as np
from scipy import ndimage

from modules.circular_module import TWO_PI, wrap
from modules.utils_module import ConfigError, ContractError, ParseError, require_finite, save_metadata

LABELS_FILE = "labels.csv"
GENERATION_FILE = "generation.json"
MIN_CELL_SIZE = 32
NOISE_SIGMA = 0.05
BACKGROUND_LEVEL = 0.1

# Synthetic morphology presets: body size/eccentricity ranges and front/rear lobe contrast
CELL_PRESETS = {
    "standard": {
        "description": "Clear polarity: bright front lobe, faint small rear",
        "body_radius": (0.16, 0.22),
        "aspect": (0.6, 0.9),
        "body_level": 0.35,
        "front_level": 0.45,
        "front_offset": (0.9, 1.2),
        "rear_level": 0.12,
        "noise_sigma": NOISE_SIGMA,
    },
    "subtle": {
        "description": "Weak polarity: rounder bodies, dimmer front lobe",
        "body_radius": (0.16, 0.22),
        "aspect": (0.75, 1.0),
        "body_level": 0.35,
        "front_level": 0.25,
        "front_offset": (0.7, 1.0),
        "rear_level": 0.12,
        "noise_sigma": NOISE_SIGMA,
    },
}


# ============================================================================
# TYPES
# ============================================================================

@dataclass
class LabeledImage:
    """Square grayscale image in [0, 1] with its ground-truth direction"""
    pixels: np.ndarray
    label: float
    id: str

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2 or self.pixels.shape[0] != self.pixels.shape[1]:
            raise ContractError(f"image {self.id} must be square 2-D, got shape {self.pixels.shape}")
        if self.pixels.size and (self.pixels.min() < 0.0 or self.pixels.max() > 1.0):
            raise ContractError(f"image {self.id} has pixels outside [0, 1]")
        self.label = wrap(self.label)


@dataclass
class Track:
    """Time-ordered cell positions in µm"""
    positions: List[Tuple[float, float]]
    frame_interval: float = 1.0

    def __post_init__(self):
        if len(self.positions) < 2:
            raise ContractError("a track needs at least 2 positions")


@dataclass(frozen=True)
class AugmentConfig:
    rotation_range: Tuple[float, float] = (0.0, TWO_PI)
    shift_frac: float = 0.2
    scale_delta: float = 0.1
    h_mirror: bool = True
    v_mirror: bool = True
    seed: int = 0


@dataclass(frozen=True)
class FoldSplit:
    fold_index: int
    train: Tuple[str, ...]
    val: Tuple[str, ...]
    test: Tuple[str, ...]


@dataclass
class Dataset:
    """Stacked images for fast batching; items() yields LabeledImage views"""
    ids: List[str]
    pixels: np.ndarray
    labels: np.ndarray
    _index: Dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {item_id: i for i, item_id in enumerate(self.ids)}
        if len(self._index) != len(self.ids):
            raise ContractError("dataset ids must be unique")

    @classmethod
    def from_images(cls, images: Sequence[LabeledImage]) -> "Dataset":
        if not images:
            raise ContractError("dataset must contain at least one image")
        sizes = {img.pixels.shape for img in images}
        if len(sizes) != 1:
            raise ContractError(f"all images must share one size, found {sorted(sizes)}")
        return cls([img.id for img in images],
                   np.stack([img.pixels for img in images]),
                   np.array([img.label for img in images], dtype=np.float64))

    def __len__(self):
        return len(self.ids)

    @property
    def size(self) -> int:
        return int(self.pixels.shape[1])

    def select(self, ids: Sequence[str]) -> Tuple[np.ndarray, np.ndarray]:
        """(pixels, labels) for the given ids, in that order"""
        try:
            rows = [self._index[i] for i in ids]
        except KeyError as e:
            raise ContractError(f"unknown image id {e.args[0]!r}")
        return self.pixels[rows], self.labels[rows]

    def items(self):
        for i, item_id in enumerate(self.ids):
            yield LabeledImage(self.pixels[i], self.labels[i], item_id)


# ============================================================================
# SYNTHETIC CELLS
# ============================================================================

def generate_cell(size: int, direction: float, rng_seed: int, preset: str = "standard",
                  image_id: Optional[str] = None) -> LabeledImage:
    """Render a polarized cell whose front lobe points along direction (y-down frame)"""
    if size < MIN_CELL_SIZE:
        raise ConfigError(f"cell images need size >= {MIN_CELL_SIZE}, got {size}")
    if preset not in CELL_PRESETS:
        raise ConfigError(f"unknown cell preset {preset!r}; choose from {sorted(CELL_PRESETS)}")
    require_finite(direction, "direction")

    p = CELL_PRESETS[preset]
    rng = np.random.default_rng(rng_seed)
    direction = wrap(direction)

    c = (size - 1) / 2.0
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    dx, dy = xs - c, ys - c
    ux, uy = math.cos(direction), math.sin(direction)

    # elongated soft body, loosely aligned with the direction of motion
    radius = size * rng.uniform(*p["body_radius"])
    minor = radius * rng.uniform(*p["aspect"])
    phi = direction + rng.normal(0.0, 0.3)
    u = dx * math.cos(phi) + dy * math.sin(phi)
    v = -dx * math.sin(phi) + dy * math.cos(phi)
    r_ell = np.sqrt((u / radius) ** 2 + (v / minor) ** 2)
    body = 1.0 / (1.0 + np.exp((r_ell - 1.0) / 0.08))

    # large front, small rear
    front_d = radius * rng.uniform(*p["front_offset"])
    front_sigma = radius * 0.5
    front = np.exp(-((dx - front_d * ux) ** 2 + (dy - front_d * uy) ** 2) / (2 * front_sigma ** 2))
    rear_d = radius * 0.8
    rear_sigma = radius * 0.25
    rear = np.exp(-((dx + rear_d * ux) ** 2 + (dy + rear_d * uy) ** 2) / (2 * rear_sigma ** 2))

    image = BACKGROUND_LEVEL + p["body_level"] * body + p["front_level"] * front + p["rear_level"] * rear
    image += rng.normal(0.0, p["noise_sigma"], size=image.shape)
    return LabeledImage(np.clip(image, 0.0, 1.0), direction, image_id or f"cell_{rng_seed}")


def generate_dataset(count: int, size: int, seed: int, preset: str = "standard") -> Dataset:
    """count cells with uniform random directions; item i uses seed + i"""
    if count < 1:
        raise ConfigError(f"count must be positive, got {count}")
    images = []
    for index in range(count):
        item_seed = seed + index
        direction = np.random.default_rng([item_seed, 1]).uniform(0.0, TWO_PI)
        images.append(generate_cell(size, direction, item_seed, preset, image_id=f"cell_{index:05d}"))
    return Dataset.from_images(images)


def intensity_centroid_direction(pixels: np.ndarray, background: Optional[float] = None) -> float:
    """Direction of the background-subtracted intensity centroid, seen from the image center"""
    pixels = np.asarray(pixels, dtype=np.float64)
    if background is None:
        background = estimate_background(pixels)
    weights = np.clip(pixels - background, 0.0, None)
    size = pixels.shape[0]
    c = (size - 1) / 2.0
    ys, xs = np.mgrid[0:size, 0:size]
    total = weights.sum()
    return wrap(math.atan2(((ys - c) * weights).sum() / total, ((xs - c) * weights).sum() / total))


# ============================================================================
# TRACKS
# ============================================================================

def track_to_label(t: Track, min_displacement: float = 5.0) -> Optional[float]:
    """Direction of net displacement (last − first); None if the cell moved ≤ min_displacement µm"""
    (x0, y0), (x1, y1) = t.positions[0], t.positions[-1]
    dx, dy = x1 - x0, y1 - y0
    if math.hypot(dx, dy) <= min_displacement:
        return None
    return wrap(math.atan2(dy, dx))


def load_tracks_csv(path) -> Dict[str, Track]:
    """Read `id,frame,x_um,y_um` rows into tracks ordered by frame"""
    path = Path(path)
    rows: Dict[str, List[Tuple[float, float, float]]] = {}
    for offset, record in _csv_records(path, ("id", "frame", "x_um", "y_um")):
        try:
            frame, x, y = float(record["frame"]), float(record["x_um"]), float(record["y_um"])
        except ValueError:
            raise ParseError(path, offset, f"non-numeric value in row {record}")
        rows.setdefault(record["id"], []).append((frame, x, y))

    tracks = {}
    for cell_id, points in rows.items():
        points.sort(key=lambda r: r[0])
        if len(points) < 2:
            continue
        frames = [r[0] for r in points]
        interval = (frames[-1] - frames[0]) / (len(frames) - 1)
        tracks[cell_id] = Track([(r[1], r[2]) for r in points], interval)
    return tracks


def labels_from_tracks(tracks: Dict[str, Track], min_displacement: float = 5.0) -> Tuple[Dict[str, float], List[str]]:
    """Ground-truth labels for cells that migrated far enough, plus the rejected ids"""
    labels, rejected = {}, []
    for cell_id in sorted(tracks):
        label = track_to_label(tracks[cell_id], min_displacement)
        if label is None:
            rejected.append(cell_id)
        else:
            labels[cell_id] = label
    return labels, rejected


# ============================================================================
# AUGMENTATION
# ============================================================================

def estimate_background(pixels: np.ndarray) -> float:
    """Median of the one-pixel border ring"""
    ring = np.concatenate([pixels[0, :], pixels[-1, :], pixels[1:-1, 0], pixels[1:-1, -1]])
    return float(np.median(ring))


def transform_image(pixels: np.ndarray, theta: float = 0.0, shift: Tuple[float, float] = (0.0, 0.0),
                    scale: float = 1.0, h_mirror: bool = False, v_mirror: bool = False,
                    background: Optional[float] = None) -> np.ndarray:
    """Mirror, rotate by theta (y-down frame), scale about the center and shift by (dx, dy) pixels.

    Bilinear resampling; pixels mapped from outside the source get the background level.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    if background is None:
        background = estimate_background(pixels)

    mirror = np.diag([-1.0 if h_mirror else 1.0, -1.0 if v_mirror else 1.0])
    rotation = np.array([[math.cos(theta), -math.sin(theta)],
                         [math.sin(theta), math.cos(theta)]])
    forward = scale * rotation @ mirror  # acts on (x, y)

    inverse_xy = np.linalg.inv(forward)
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    inverse_rc = swap @ inverse_xy @ swap  # acts on (row, col)

    h, w = pixels.shape
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    shift_rc = np.array([shift[1], shift[0]])
    offset = center - inverse_rc @ (center + shift_rc)

    out = ndimage.affine_transform(pixels, inverse_rc, offset=offset, order=1,
                                   mode="constant", cval=background)
    return np.clip(out, 0.0, 1.0)


def rotate_image(pixels: np.ndarray, theta: float, background: Optional[float] = None) -> np.ndarray:
    """Rotation only; shared by augmentation and test-time augmentation"""
    return transform_image(pixels, theta=theta, background=background)


def transform_label(label: float, theta: float = 0.0, h_mirror: bool = False, v_mirror: bool = False) -> float:
    """Label under the same transform: mirrors first, then rotation; shifts/scaling don't matter"""
    if h_mirror:
        label = math.pi - label
    if v_mirror:
        label = -label
    return wrap(label + theta)


def augment(img: LabeledImage, cfg: AugmentConfig, rng: np.random.Generator) -> LabeledImage:
    """Random rotation, shift, scale and mirrors with the label corrected to match"""
    size = img.pixels.shape[0]
    theta = rng.uniform(*cfg.rotation_range)
    shift = tuple(rng.uniform(-cfg.shift_frac, cfg.shift_frac, size=2) * size)
    scale = 1.0 + rng.uniform(-cfg.scale_delta, cfg.scale_delta)
    h_mirror = bool(cfg.h_mirror and rng.random() < 0.5)
    v_mirror = bool(cfg.v_mirror and rng.random() < 0.5)

    pixels = transform_image(img.pixels, theta, shift, scale, h_mirror, v_mirror)
    label = transform_label(img.label, theta, h_mirror, v_mirror)
    return LabeledImage(pixels, label, img.id)


def augment_arrays(pixels: np.ndarray, labels: np.ndarray, multiplier: int, cfg: AugmentConfig,
                   rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Originals plus multiplier−1 augmented copies of each image"""
    if multiplier < 1:
        raise ConfigError(f"augmentation multiplier must be >= 1, got {multiplier}")
    out_pixels, out_labels = [pixels], [labels]
    for _ in range(multiplier - 1):
        copies = [augment(LabeledImage(p, l, "aug"), cfg, rng) for p, l in zip(pixels, labels)]
        out_pixels.append(np.stack([c.pixels for c in copies]))
        out_labels.append(np.array([c.label for c in copies]))
    return np.concatenate(out_pixels), np.concatenate(out_labels)


# ============================================================================
# FOLDS
# ============================================================================

def make_folds(ids: Sequence[str], k: int = 4, proportions: Tuple[float, float, float] = (0.4, 0.1, 0.5),
               seed: int = 0) -> List[FoldSplit]:
    """k independent random 40/10/50 splits; train/val sizes are floored, the rest goes to test"""
    ids = list(ids)
    if len(ids) < 10:
        raise ConfigError(f"need at least 10 images to split into folds, got {len(ids)}")
    if k < 1 or len(proportions) != 3 or abs(sum(proportions) - 1.0) > 1e-9:
        raise ConfigError("folds need k >= 1 and three proportions summing to 1")

    n = len(ids)
    n_train = int(math.floor(proportions[0] * n + 1e-9))
    n_val = int(math.floor(proportions[1] * n + 1e-9))

    folds = []
    for fold_index in range(k):
        order = np.random.default_rng([seed, fold_index]).permutation(n)
        shuffled = [ids[i] for i in order]
        folds.append(FoldSplit(fold_index,
                               tuple(shuffled[:n_train]),
                               tuple(shuffled[n_train:n_train + n_val]),
                               tuple(shuffled[n_train + n_val:])))
    return folds


# ============================================================================
# PGM / CSV I/O
# ============================================================================

def write_pgm(path, pixels: np.ndarray):
    """Binary 8-bit PGM (P5, maxval 255), value v stored as floor(255·v + 0.5)"""
    pixels = np.asarray(pixels, dtype=np.float64)
    h, w = pixels.shape
    data = np.floor(np.clip(pixels, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def _pgm_tokens(data: bytes, path, count: int) -> Tuple[List[Tuple[int, bytes]], int]:
    """First count whitespace-separated header tokens (skipping # comments) and the raster offset"""
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise ParseError(path, pos, "truncated PGM header")
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        tokens.append((start, data[start:pos]))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ParseError(path, pos, "expected a single whitespace byte before the raster")
    return tokens, pos + 1


def read_pgm(path) -> np.ndarray:
    """Read a binary 8-bit PGM into floats in [0, 1]"""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise ParseError(path, 0, f"cannot read image: {e}")

    tokens, raster = _pgm_tokens(data, path, 4)
    (m_off, magic), (w_off, w_tok), (h_off, h_tok), (v_off, v_tok) = tokens
    if magic != b"P5":
        raise ParseError(path, m_off, f"expected P5 magic, got {magic[:8]!r}")
    values = []
    for offset, token, what in ((w_off, w_tok, "width"), (h_off, h_tok, "height"), (v_off, v_tok, "maxval")):
        if not token.isdigit() or int(token) <= 0:
            raise ParseError(path, offset, f"invalid {what} {token[:16]!r}")
        values.append(int(token))
    width, height, maxval = values
    if maxval != 255:
        raise ParseError(path, v_off, f"only maxval 255 is supported, got {maxval}")

    expected = width * height
    if len(data) - raster < expected:
        raise ParseError(path, len(data), f"raster has {len(data) - raster} bytes, expected {expected}")
    raster_bytes = np.frombuffer(data, dtype=np.uint8, count=expected, offset=raster)
    return raster_bytes.reshape(height, width).astype(np.float64) / 255.0


def _csv_records(path: Path, columns: Tuple[str, ...]):
    """Yield (byte offset, row dict) for each data row; header must match columns exactly"""
    if not path.exists():
        raise ParseError(path, 0, "file not found")
    data = path.read_bytes()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ParseError(path, e.start, "file is not valid UTF-8")

    offset = 0
    lines = text.split("\n")
    header = lines[0].rstrip("\r")
    if tuple(header.split(",")) != columns:
        raise ParseError(path, 0, f"expected header {','.join(columns)!r}, got {header!r}")
    offset += len(lines[0].encode("utf-8")) + 1

    for line in lines[1:]:
        stripped = line.rstrip("\r")
        if stripped:
            fields = next(csv.reader([stripped]))
            if len(fields) != len(columns):
                raise ParseError(path, offset, f"expected {len(columns)} fields, got {len(fields)}")
            yield offset, dict(zip(columns, fields))
        offset += len(line.encode("utf-8")) + 1


def save_dataset(dataset: Dataset, dir_path, provenance: Optional[Dict] = None):
    """Write one PGM per image plus labels.csv (radians, shortest round-trip repr)"""
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["id", "angle_rad"])
    for item_id, pixels, label in zip(dataset.ids, dataset.pixels, dataset.labels):
        write_pgm(dir_path / f"{item_id}.pgm", pixels)
        writer.writerow([item_id, repr(float(label))])

    with open(dir_path / LABELS_FILE, "w", newline="") as f:
        f.write(buffer.getvalue())

    if provenance is not None:
        save_metadata(dir_path / GENERATION_FILE, provenance)


def load_dataset(dir_path) -> Dataset:
    """Read a dataset directory; out-of-range angles are wrapped with a warning"""
    dir_path = Path(dir_path)
    labels_path = dir_path / LABELS_FILE

    images = []
    for offset, record in _csv_records(labels_path, ("id", "angle_rad")):
        try:
            angle = float(record["angle_rad"])
        except ValueError:
            raise ParseError(labels_path, offset, f"invalid angle {record['angle_rad']!r}")
        if not math.isfinite(angle):
            raise ParseError(labels_path, offset, f"non-finite angle {record['angle_rad']!r}")
        if not 0.0 <= angle < TWO_PI:
            click.echo(f"⚠️ {labels_path}: angle {angle} for {record['id']} wrapped to {wrap(angle)}", err=True)

        pixels = read_pgm(dir_path / f"{record['id']}.pgm")
        if pixels.shape[0] != pixels.shape[1]:
            raise ParseError(dir_path / f"{record['id']}.pgm", 0, f"image must be square, got {pixels.shape}")
        images.append(LabeledImage(pixels, angle, record["id"]))

    if not images:
        raise ParseError(labels_path, 0, "no images listed")
    try:
        return Dataset.from_images(images)
    except ContractError as e:
        raise ParseError(labels_path, 0, str(e))
