"""Image datasets, synthetic generators, forgetting splits and SUDS files."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from matplotlib.colors import hsv_to_rgb

from .errors import ConfigError, FormatError, SiamUnlearnError

SUDS_MAGIC = b"SUDS"
SUDS_VERSION = 1
_HEADER = struct.Struct("<4sHHIBHH")


@dataclass
class LabeledDataset:
    images: np.ndarray  # (N, C, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64 in [0, K)
    class_count: int
    name: str = "dataset"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ConfigError(f"images must be (N, C, H, W), got shape {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ConfigError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ConfigError(f"labels must lie in [0, {self.class_count})")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ConfigError("pixel values must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (self.class_count == other.class_count
                and np.array_equal(self.labels, other.labels)
                and self.images.shape == other.images.shape
                and self.images.tobytes() == other.images.tobytes())


# ------------------------------------------------------------------ generators

def _class_colors(rng: np.random.Generator, class_count: int, channels: int) -> np.ndarray:
    """Evenly spaced hues (random phase) for RGB, spread intensities for grey."""
    if channels == 1:
        return rng.permutation(np.linspace(0.5, 1.0, class_count))[:, None]
    hue = (rng.uniform() + np.arange(class_count) / class_count) % 1.0
    hsv = np.stack([hue, np.full(class_count, 0.8), np.full(class_count, 0.9)], axis=1)
    return hsv_to_rgb(hsv)


def generate_synthetic(kind: str, class_count: int, per_class: int, image_size: int,
                       seed: int, channels: int = 3, noise: float = 0.15,
                       layout_seed: int = 0, name: str | None = None) -> LabeledDataset:
    """Render a small labelled image set.

    ``layout_seed`` fixes the class templates (blob positions and colours,
    ring radii) while ``seed`` drives per-example sampling, so a test set is
    simply the same call with another ``seed``.

    ``blobs``: a pool of coloured anchor blobs sits on a grid; class ``k``
    shows anchors ``k`` and ``k+1``, each with jittered position, width and
    brightness, so classes are separable but share visual parts. ``rings``: each class is a
    ring of its own radius around a jittered centre.
    """
    if class_count < 2:
        raise ConfigError(f"class_count must be at least 2, got {class_count}")
    if per_class < 20:
        raise ConfigError(f"per_class must be at least 20, got {per_class}")
    if channels not in (1, 3):
        raise ConfigError(f"channels must be 1 or 3, got {channels}")
    layout = np.random.default_rng([layout_seed, class_count, image_size, 0x5D5])
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:image_size, 0:image_size].astype(np.float64)

    if kind == "blobs":
        # class k shows anchors k and k+1 (cyclic for K >= 3), so neighbouring
        # classes share one anchor blob
        anchors = class_count if class_count >= 3 else class_count + 1
        cell = 3
        # keep anchors clear of the border so a padded crop never removes one
        margin = round(image_size / 8) + 1
        grid = (image_size - 2 * margin) // cell
        if image_size < 6 or grid * grid < anchors:
            raise ConfigError(f"image_size {image_size} too small to place {anchors} distinct blobs")
        cells = layout.choice(grid * grid, size=anchors, replace=False)
        centers = margin + np.stack([cells // grid, cells % grid], axis=1) * cell + cell / 2.0 - 0.5
        colors = _class_colors(layout, anchors, channels)
        pairs = [(k, (k + 1) % anchors) for k in range(class_count)]

        def render(k):
            img = 0.0
            for a in pairs[k]:
                cy, cx = centers[a] + rng.normal(0.0, 0.6, 2)
                width = rng.uniform(1.0, 1.8)
                amp = rng.uniform(0.6, 0.9)
                blob = amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width ** 2))
                img = img + colors[a][:, None, None] * blob[None]
            return img

    elif kind == "rings":
        rmax = image_size / 2.0 - 1.0
        rmin = 1.5
        if image_size < 6 or (rmax - rmin) / class_count < 0.75:
            raise ConfigError(f"image_size {image_size} too small to draw {class_count} distinct rings")
        radii = np.linspace(rmin, rmax, class_count)
        colors = _class_colors(layout, class_count, channels)

        def render(k):
            cy, cx = (image_size - 1) / 2.0 + rng.normal(0.0, 0.5, 2)
            r = radii[k] + rng.normal(0.0, 0.15)
            dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
            ring = rng.uniform(0.7, 1.0) * np.exp(-((dist - r) ** 2) / (2 * 0.5 ** 2))
            return colors[k][:, None, None] * ring[None]
    else:
        raise ConfigError(f"unknown synthetic kind {kind!r}; expected 'blobs' or 'rings'")

    n = class_count * per_class
    labels = np.repeat(np.arange(class_count), per_class)
    labels = labels[rng.permutation(n)]
    images = np.empty((n, channels, image_size, image_size), dtype=np.float32)
    for i, k in enumerate(labels):
        img = 0.1 + render(k) + rng.normal(0.0, noise, (channels, image_size, image_size))
        images[i] = np.clip(img, 0.0, 1.0)
    return LabeledDataset(images, labels, class_count, name or f"{kind}-k{class_count}-s{seed}")


# --------------------------------------------------------------------- splits

@dataclass(frozen=True)
class Scenario:
    """Which examples to forget.

    ``kind`` is ``full_class`` (every example of ``classes``), ``sub_class``
    (a random ``fraction`` of the single class in ``classes``) or ``random``
    (a uniform ``fraction`` of the whole set).
    """

    kind: str
    classes: tuple[int, ...] = ()
    fraction: float = 1.0

    def __post_init__(self):
        if self.kind not in ("full_class", "sub_class", "random"):
            raise ConfigError(f"unknown scenario {self.kind!r}; expected full_class, sub_class or random")
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError(f"fraction must lie in (0, 1], got {self.fraction}")
        if self.kind in ("full_class", "sub_class") and not self.classes:
            raise ConfigError(f"{self.kind} scenario needs at least one class")
        if self.kind == "sub_class" and len(self.classes) != 1:
            raise ConfigError("sub_class scenario takes exactly one class")

    def forgetting_classes(self) -> tuple[int, ...]:
        return self.classes if self.kind != "random" else ()


def full_class(*classes: int) -> Scenario:
    return Scenario("full_class", tuple(classes))


def sub_class(cls: int, fraction: float) -> Scenario:
    return Scenario("sub_class", (cls,), fraction)


def random_forget(fraction: float) -> Scenario:
    return Scenario("random", (), fraction)


def compute_ratios(labels: np.ndarray, forget_indices: np.ndarray, class_count: int) -> np.ndarray:
    totals = np.bincount(labels, minlength=class_count).astype(np.float64)
    forgot = np.bincount(labels[forget_indices], minlength=class_count).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(totals > 0, forgot / np.maximum(totals, 1), 0.0)


@dataclass(frozen=True)
class DatasetSplit:
    forget_indices: np.ndarray
    retain_indices: np.ndarray
    probe_indices: np.ndarray
    ratios: np.ndarray
    scenario: Scenario | None = field(default=None, compare=False)

    def validate(self, ds: LabeledDataset) -> None:
        """Raise if the split is not a consistent partition of ``ds``."""
        f, r, p = self.forget_indices, self.retain_indices, self.probe_indices
        if np.intersect1d(f, r).size:
            raise SiamUnlearnError("forget and retain sets overlap")
        if len(f) + len(r) != len(ds) or not np.array_equal(np.union1d(f, r), np.arange(len(ds))):
            raise SiamUnlearnError("forget and retain sets do not cover the dataset")
        if not np.all(np.isin(p, r)):
            raise SiamUnlearnError("probe set is not a subset of the retain set")
        if not np.array_equal(self.ratios, compute_ratios(ds.labels, f, ds.class_count)):
            raise SiamUnlearnError("stored ratios disagree with the partition")


def default_probe_size(retain_count: int) -> int:
    return max(2, min(1000, round(0.1 * retain_count)))


def _stratified_sample(labels: np.ndarray, pool: np.ndarray, size: int,
                       rng: np.random.Generator) -> np.ndarray:
    classes, counts = np.unique(labels[pool], return_counts=True)
    exact = size * counts / counts.sum()
    take = np.floor(exact).astype(int)
    # largest remainder keeps every class within one of its proportional share
    order = np.lexsort((classes, -(exact - take)))
    take[order[:size - take.sum()]] += 1
    chosen = []
    for cls, n in zip(classes, take):
        members = pool[labels[pool] == cls]
        chosen.append(rng.choice(members, size=n, replace=False))
    return np.sort(np.concatenate(chosen)) if chosen else np.empty(0, dtype=np.int64)


def build_split(ds: LabeledDataset, scenario: Scenario, probe_size: int | None = None,
                seed: int = 0) -> DatasetSplit:
    rng = np.random.default_rng([seed, 0x5917])
    n = len(ds)
    labels = ds.labels
    for c in scenario.classes:
        if not 0 <= c < ds.class_count:
            raise ConfigError(f"class {c} does not exist (dataset has {ds.class_count} classes)")

    if scenario.kind == "full_class":
        forget = np.flatnonzero(np.isin(labels, scenario.classes))
    elif scenario.kind == "sub_class":
        members = np.flatnonzero(labels == scenario.classes[0])
        k = int(round(scenario.fraction * len(members)))
        forget = np.sort(rng.choice(members, size=k, replace=False))
    else:
        k = int(round(scenario.fraction * n))
        forget = np.sort(rng.choice(n, size=k, replace=False))
    if forget.size == 0:
        raise ConfigError(f"scenario {scenario} selects no examples to forget")
    retain = np.setdiff1d(np.arange(n), forget)

    if probe_size is None:
        probe_size = default_probe_size(len(retain))
    if probe_size > len(retain):
        raise ConfigError(f"probe_size {probe_size} exceeds the {len(retain)} retained examples")
    if probe_size < 1:
        raise ConfigError(f"probe_size must be positive, got {probe_size}")
    probe = _stratified_sample(labels, retain, probe_size, rng)
    ratios = compute_ratios(labels, forget, ds.class_count)
    return DatasetSplit(forget.astype(np.int64), retain.astype(np.int64), probe.astype(np.int64),
                        ratios, scenario)


# ------------------------------------------------------------------ SUDS files

def encode_dataset(ds: LabeledDataset) -> bytes:
    n, c, h, w = ds.images.shape
    header = _HEADER.pack(SUDS_MAGIC, SUDS_VERSION, ds.class_count, n, c, h, w)
    rec = np.dtype([("label", "<u2"), ("pixels", "<f4", (c * h * w,))])
    records = np.empty(n, dtype=rec)
    records["label"] = ds.labels
    records["pixels"] = ds.images.reshape(n, -1)
    return header + records.tobytes()


def decode_dataset(buf: bytes, name: str = "dataset") -> LabeledDataset:
    if len(buf) < _HEADER.size:
        raise FormatError(f"truncated header: expected {_HEADER.size} bytes, got {len(buf)}", len(buf))
    magic, version, k, n, c, h, w = _HEADER.unpack_from(buf, 0)
    if magic != SUDS_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {SUDS_MAGIC!r}", 0)
    if version != SUDS_VERSION:
        raise FormatError(f"unsupported dataset version {version}", 4)
    rec = np.dtype([("label", "<u2"), ("pixels", "<f4", (c * h * w,))])
    expected = _HEADER.size + n * rec.itemsize
    if len(buf) != expected:
        raise FormatError(f"payload length mismatch: expected {expected} bytes, got {len(buf)}",
                          min(len(buf), expected))
    records = np.frombuffer(buf, dtype=rec, count=n, offset=_HEADER.size)
    labels = records["label"].astype(np.int64)
    bad = np.flatnonzero(labels >= k)
    if bad.size:
        i = int(bad[0])
        raise FormatError(f"record {i} has label {labels[i]} >= class count {k}", _HEADER.size + i * rec.itemsize)
    images = records["pixels"].reshape(n, c, h, w).copy()
    if images.size and not (np.all(np.isfinite(images)) and images.min() >= 0.0 and images.max() <= 1.0):
        flat = ~((images >= 0.0) & (images <= 1.0))
        i = int(np.flatnonzero(flat.reshape(n, -1).any(axis=1))[0])
        raise FormatError(f"record {i} has pixel values outside [0, 1]", _HEADER.size + i * rec.itemsize + 2)
    return LabeledDataset(images, labels, k, name)


def save_dataset(ds: LabeledDataset, path: str | Path) -> None:
    Path(path).write_bytes(encode_dataset(ds))


def load_dataset(path: str | Path) -> LabeledDataset:
    path = Path(path)
    return decode_dataset(path.read_bytes(), name=path.stem)
