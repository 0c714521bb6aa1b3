"""Deterministic paired-modality sequence datasets, segment sampling, and a
bit-exact binary file format.

Each class label factors into a (shape, motion) pair. Appearance frames
carry only the shape prototype (plus a per-sample nuisance direction and
noise); motion frames carry only the motion prototype under a class-specific
square-wave envelope with random phase. A classifier seeing one modality can
therefore recover only its own factor: appearance-only accuracy is capped at
1/motion_classes and motion-only accuracy at 1/shape_classes.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"CMMPDS01"
VERSION = 1


class DatasetFormatError(ValueError):
    """The dataset file violates the on-disk format."""


@dataclass
class DatasetSpec:
    """Generation knobs; class count is shape_classes * motion_classes."""

    shape_classes: int = 4
    motion_classes: int = 3
    train_per_class: int = 100
    test_per_class: int = 50
    frames: int = 40
    a_dim: int = 24
    m_dim: int = 12
    window: int = 5        # motion frames stacked per step (sampling-time knob)
    noise: float = 0.3
    motion_scale: float = 8.0
    crosstalk: float = 0.5
    seed: int = 0

    @property
    def classes(self) -> int:
        return self.shape_classes * self.motion_classes

    def validate(self):
        if self.shape_classes < 1 or self.motion_classes < 1:
            raise ValueError("need at least one shape and one motion class")
        if self.shape_classes > self.a_dim:
            raise ValueError(f"cannot draw {self.shape_classes} orthonormal prototypes "
                             f"in {self.a_dim} dims")
        if self.motion_classes > self.m_dim:
            raise ValueError(f"cannot draw {self.motion_classes} orthonormal prototypes "
                             f"in {self.m_dim} dims")
        if self.train_per_class < 1 or self.test_per_class < 1:
            raise ValueError("need at least one sample per class in each split")
        if self.frames < 1:
            raise ValueError("need at least one frame")
        if not (1 <= self.window <= self.frames):
            raise ValueError(f"window {self.window} must lie in [1, {self.frames}]")
        if 2 ** self.motion_classes > self.frames:
            raise ValueError(f"{self.frames} frames cannot hold a period-"
                             f"{2 ** self.motion_classes} envelope")
        if self.noise < 0 or self.motion_scale <= 0:
            raise ValueError("noise must be >= 0 and motion_scale > 0")


@dataclass
class Sample:
    appearance: np.ndarray  # [frames, a_dim] float32
    motion: np.ndarray      # [frames, m_dim] float32
    label: int


@dataclass
class Dataset:
    spec: DatasetSpec
    train: list = field(default_factory=list)
    test: list = field(default_factory=list)


def _orthonormal_rows(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    """Gram-Schmidt on Gaussian draws; redraws on (vanishingly rare) collapse."""
    rows = np.empty((count, dim))
    k = 0
    while k < count:
        v = rng.standard_normal(dim)
        for j in range(k):
            v -= (v @ rows[j]) * rows[j]
        norm = np.linalg.norm(v)
        if norm < 1e-8:
            continue
        rows[k] = v / norm
        k += 1
    return rows


def _envelope(period: int, phase: int, frames: int) -> np.ndarray:
    t = np.arange(frames)
    return np.where(((t + phase) % period) < period // 2, 1.0, -1.0)


def _make_sample(rng, spec, shape_protos, motion_protos, shape_id, motion_id) -> Sample:
    nuisance = rng.standard_normal(spec.a_dim)
    nuisance /= np.linalg.norm(nuisance)
    appearance = (shape_protos[shape_id]
                  + spec.crosstalk * nuisance
                  + spec.noise * rng.standard_normal((spec.frames, spec.a_dim)))
    period = 2 ** (motion_id + 1)
    phase = int(rng.integers(period))
    wave = _envelope(period, phase, spec.frames)
    motion = (spec.motion_scale * np.outer(wave, motion_protos[motion_id])
              + spec.noise * rng.standard_normal((spec.frames, spec.m_dim)))
    return Sample(
        appearance=appearance.astype(np.float32),
        motion=motion.astype(np.float32),
        label=shape_id * spec.motion_classes + motion_id,
    )


def generate(spec: DatasetSpec) -> Dataset:
    """Build train/test splits with exactly the configured count per class.

    Fully determined by spec.seed: prototypes first, then samples in
    (split, shape, motion, index) order on a single generator stream.
    """
    spec.validate()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, 1])))
    shape_protos = _orthonormal_rows(rng, spec.shape_classes, spec.a_dim)
    motion_protos = _orthonormal_rows(rng, spec.motion_classes, spec.m_dim)
    ds = Dataset(spec=spec)
    for split, count in ((ds.train, spec.train_per_class), (ds.test, spec.test_per_class)):
        for shape_id in range(spec.shape_classes):
            for motion_id in range(spec.motion_classes):
                for _ in range(count):
                    split.append(_make_sample(rng, spec, shape_protos, motion_protos,
                                              shape_id, motion_id))
    return ds


# ---------------------------------------------------------------------------
# Segment sampling.
# ---------------------------------------------------------------------------


def sample_segments(sample: Sample, t_steps: int, window: int, mode: str,
                    rng: np.random.Generator | None = None):
    """Draw one anchor frame per temporal segment.

    Returns (raw_a [T, a_dim], raw_m [T, window*m_dim]) as float64. Training
    mode picks a random in-segment anchor (rng required); eval mode picks the
    segment center. The motion window starts at the anchor, clamped so it
    stays inside the segment.
    """
    frames = sample.appearance.shape[0]
    if not (1 <= t_steps <= frames):
        raise ValueError(f"cannot split {frames} frames into {t_steps} segments")
    seg = frames // t_steps
    if seg < window:
        raise ValueError(f"window {window} does not fit in segments of {seg} frames")
    if mode == "train":
        if rng is None:
            raise ValueError("training-mode sampling needs an rng")
        anchors = np.array([int(rng.integers(k * seg, (k + 1) * seg)) for k in range(t_steps)])
    elif mode == "eval":
        anchors = np.array([k * seg + (seg - 1) // 2 for k in range(t_steps)])
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    raw_a = sample.appearance[anchors].astype(np.float64)
    m_rows = []
    for k, a in enumerate(anchors):
        start = min(int(a), k * seg + seg - window)
        m_rows.append(sample.motion[start:start + window].reshape(-1))
    return raw_a, np.asarray(m_rows, dtype=np.float64)


# ---------------------------------------------------------------------------
# File format: little-endian, float32 payloads, bit-exact round trips.
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<8sI8I3dQ")


def save_dataset(ds: Dataset, path):
    spec = ds.spec
    with open(path, "wb") as f:
        f.write(_HEADER.pack(
            MAGIC, VERSION,
            len(ds.train), len(ds.test), spec.frames, spec.a_dim, spec.m_dim,
            spec.classes, spec.shape_classes, spec.motion_classes,
            spec.noise, spec.motion_scale, spec.crosstalk, spec.seed,
        ))
        for sample in (*ds.train, *ds.test):
            f.write(struct.pack("<I", sample.label))
            f.write(np.ascontiguousarray(sample.appearance, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(sample.motion, dtype="<f4").tobytes())


def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise DatasetFormatError(f"truncated file: wanted {n} bytes, got {len(buf)}")
    return buf


def load_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        header = _read_exact(f, _HEADER.size)
        (magic, version, n_train, n_test, frames, a_dim, m_dim,
         classes, shape_classes, motion_classes,
         noise, motion_scale, crosstalk, seed) = _HEADER.unpack(header)
        if magic != MAGIC:
            raise DatasetFormatError(f"bad magic: {magic!r}")
        if version != VERSION:
            raise DatasetFormatError(f"version mismatch: file has {version}, "
                                     f"reader supports {VERSION}")
        if classes != shape_classes * motion_classes:
            raise DatasetFormatError("header class counts are inconsistent")
        spec = DatasetSpec(
            shape_classes=shape_classes, motion_classes=motion_classes,
            train_per_class=max(n_train // max(classes, 1), 1),
            test_per_class=max(n_test // max(classes, 1), 1),
            frames=frames, a_dim=a_dim, m_dim=m_dim,
            noise=noise, motion_scale=motion_scale, crosstalk=crosstalk, seed=seed,
        )
        ds = Dataset(spec=spec)
        a_count = frames * a_dim
        m_count = frames * m_dim
        for split, count in ((ds.train, n_train), (ds.test, n_test)):
            for _ in range(count):
                (label,) = struct.unpack("<I", _read_exact(f, 4))
                if label >= classes:
                    raise DatasetFormatError(f"label {label} out of range [0, {classes})")
                app = np.frombuffer(_read_exact(f, 4 * a_count), dtype="<f4")
                mot = np.frombuffer(_read_exact(f, 4 * m_count), dtype="<f4")
                split.append(Sample(
                    appearance=app.reshape(frames, a_dim).copy(),
                    motion=mot.reshape(frames, m_dim).copy(),
                    label=int(label),
                ))
        if f.read(1):
            raise DatasetFormatError("trailing data after the last sample")
    return ds
