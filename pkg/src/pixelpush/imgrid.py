"""Dense grid value types (images, pixel distributions, flow fields) and the
episode dataset container format.

Conventions used throughout the package:
  * positions and offsets are (x, y) pairs; x indexes columns, y indexes rows
  * grid arrays have shape (H, W) and are indexed [y, x]
  * flow kernels have shape (2*kappa+1, 2*kappa+1) and are indexed
    [dy + kappa, dx + kappa] for an offset (dx, dy)
All value types are immutable after construction (backing arrays are frozen),
so instances can be shared freely between threads.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, FormatError, TruncatedFile, ZeroMass

MIN_GRID = 8

KERNEL_SUM_TOL = 1e-4   # construction-time tolerance on per-pixel kernel sums
MASS_TOL = 1e-6         # normalization tolerance for distributions


def _frozen(a: np.ndarray, dtype=np.float64) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=dtype)
    if out is a:
        out = out.copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Image:
    """Grayscale intensity grid, values in [0, 1], shape (H, W)."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim != 2:
            raise DimensionMismatch(f"image must be 2-D, got shape {a.shape}")
        if a.shape[0] < MIN_GRID or a.shape[1] < MIN_GRID:
            raise DimensionMismatch(f"grid must be at least {MIN_GRID}x{MIN_GRID}, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("image contains non-finite values")
        if a.min() < -1e-9 or a.max() > 1 + 1e-9:
            raise ValueError(f"image intensities outside [0,1]: [{a.min()}, {a.max()}]")
        object.__setattr__(self, "data", _frozen(np.clip(a, 0.0, 1.0)))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def __eq__(self, other) -> bool:
        return isinstance(other, Image) and np.array_equal(self.data, other.data)


@dataclass(frozen=True)
class PixelDistribution:
    """Nonnegative mass per pixel, shape (H, W)."""

    mass: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.mass, dtype=np.float64)
        if a.ndim != 2:
            raise DimensionMismatch(f"distribution must be 2-D, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("distribution contains non-finite values")
        if a.min() < -1e-12:
            raise ValueError(f"negative mass: {a.min()}")
        object.__setattr__(self, "mass", _frozen(np.maximum(a, 0.0)))

    @property
    def height(self) -> int:
        return self.mass.shape[0]

    @property
    def width(self) -> int:
        return self.mass.shape[1]

    def total(self) -> float:
        return float(self.mass.sum())

    def __eq__(self, other) -> bool:
        return isinstance(other, PixelDistribution) and np.array_equal(self.mass, other.mass)


def normalize(dist: PixelDistribution) -> PixelDistribution:
    """Rescale so total mass is 1. Raises ZeroMass when nothing is left."""
    total = dist.mass.sum()
    if total <= 1e-12:
        raise ZeroMass(f"total mass {total} too small to normalize")
    return PixelDistribution(dist.mass / total)


@dataclass(frozen=True)
class FlowField:
    """Per-pixel normalized kernel over motion offsets in [-kappa, kappa]^2.

    kernels[y, x, dy + kappa, dx + kappa] is the probability that the content
    of pixel (x, y) moves by offset (dx, dy) this step.
    """

    kernels: np.ndarray
    kappa: int = field(init=False, default=0)

    def __post_init__(self):
        a = np.asarray(self.kernels, dtype=np.float64)
        if a.ndim != 4 or a.shape[2] != a.shape[3] or a.shape[2] % 2 == 0:
            raise DimensionMismatch(f"flow kernels must be (H, W, 2k+1, 2k+1), got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("flow field contains non-finite weights")
        if a.min() < -1e-9:
            raise ValueError(f"negative kernel weight: {a.min()}")
        a = np.maximum(a, 0.0)
        sums = a.sum(axis=(2, 3))
        bad = np.abs(sums - 1.0)
        if bad.max() > KERNEL_SUM_TOL:
            y, x = np.unravel_index(int(bad.argmax()), bad.shape)
            raise ValueError(f"kernel at ({x},{y}) sums to {sums[y, x]}, outside 1 +/- {KERNEL_SUM_TOL}")
        object.__setattr__(self, "kernels", _frozen(a))
        object.__setattr__(self, "kappa", (a.shape[2] - 1) // 2)

    @property
    def height(self) -> int:
        return self.kernels.shape[0]

    @property
    def width(self) -> int:
        return self.kernels.shape[1]

    def __eq__(self, other) -> bool:
        return isinstance(other, FlowField) and np.array_equal(self.kernels, other.kernels)


def identity_flow(height: int, width: int, kappa: int) -> FlowField:
    """Flow field that keeps every pixel in place."""
    side = 2 * kappa + 1
    k = np.zeros((height, width, side, side))
    k[:, :, kappa, kappa] = 1.0
    return FlowField(k)


@dataclass(frozen=True)
class EpisodeRecord:
    """One rollout: per-step image, pusher state and commanded action.

    Arrays are float32 (the container stores raw little-endian f32), shapes:
    images (T, H, W), states (T, 2), actions (T, 2). actions[t] is the
    command applied *at* step t; images[t] is the observation before it.
    """

    images: np.ndarray
    states: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        im = np.asarray(self.images, dtype=np.float32)
        st = np.asarray(self.states, dtype=np.float32)
        ac = np.asarray(self.actions, dtype=np.float32)
        if im.ndim != 3:
            raise DimensionMismatch(f"episode images must be (T, H, W), got {im.shape}")
        t = im.shape[0]
        if st.shape != (t, 2) or ac.shape != (t, 2):
            raise DimensionMismatch(
                f"states/actions must be ({t}, 2), got {st.shape} and {ac.shape}")
        object.__setattr__(self, "images", _frozen(im, np.float32))
        object.__setattr__(self, "states", _frozen(st, np.float32))
        object.__setattr__(self, "actions", _frozen(ac, np.float32))

    @property
    def steps(self) -> int:
        return self.images.shape[0]

    def __eq__(self, other) -> bool:
        return (isinstance(other, EpisodeRecord)
                and np.array_equal(self.images, other.images)
                and np.array_equal(self.states, other.states)
                and np.array_equal(self.actions, other.actions))


@dataclass(frozen=True)
class Dataset:
    """A list of episodes plus the collection metadata."""

    episodes: tuple
    height: int
    width: int
    kappa: int
    seed: int
    version: int = 1

    def __post_init__(self):
        eps = tuple(self.episodes)
        for e in eps:
            if e.images.shape[1:] != (self.height, self.width):
                raise DimensionMismatch(
                    f"episode grid {e.images.shape[1:]} != dataset grid {(self.height, self.width)}")
        object.__setattr__(self, "episodes", eps)

    def __len__(self) -> int:
        return len(self.episodes)

    def __eq__(self, other) -> bool:
        return (isinstance(other, Dataset)
                and (self.height, self.width, self.kappa, self.seed, self.version)
                == (other.height, other.width, other.kappa, other.seed, other.version)
                and self.episodes == other.episodes)


# ---------------------------------------------------------------------------
# Container I/O.  Layout (all little-endian):
#   magic "VFDS" | u16 version | u32 height | u32 width | u32 kappa
#   | i64 seed | u32 n_episodes
#   then per episode: u32 T | u64 payload_bytes | raw f32 payload
#   payload = T*H*W image floats, T*2 state floats, T*2 action floats
# ---------------------------------------------------------------------------

DATASET_MAGIC = b"VFDS"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sHIIIqI")
_EP_HEADER = struct.Struct("<IQ")


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedFile(f"expected {n} bytes, got {len(buf)}")
    return buf


def save_dataset(ds: Dataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, ds.height, ds.width,
                              ds.kappa, ds.seed, len(ds.episodes)))
        for ep in ds.episodes:
            payload = (ep.images.astype("<f4").tobytes()
                       + ep.states.astype("<f4").tobytes()
                       + ep.actions.astype("<f4").tobytes())
            fh.write(_EP_HEADER.pack(ep.steps, len(payload)))
            fh.write(payload)


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        magic, version, h, w, kappa, seed, n_eps = _HEADER.unpack(_read_exact(fh, _HEADER.size))
        if magic != DATASET_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {DATASET_MAGIC!r}")
        if version != DATASET_VERSION:
            raise FormatError(f"unsupported dataset version {version}")
        episodes = []
        for _ in range(n_eps):
            t, nbytes = _EP_HEADER.unpack(_read_exact(fh, _EP_HEADER.size))
            expected = 4 * (t * h * w + t * 2 + t * 2)
            if nbytes != expected:
                raise FormatError(f"episode payload {nbytes} bytes, expected {expected}")
            payload = _read_exact(fh, nbytes)
            img_n = t * h * w
            flat = np.frombuffer(payload, dtype="<f4")
            episodes.append(EpisodeRecord(
                images=flat[:img_n].reshape(t, h, w),
                states=flat[img_n:img_n + 2 * t].reshape(t, 2),
                actions=flat[img_n + 2 * t:].reshape(t, 2),
            ))
    return Dataset(tuple(episodes), h, w, kappa, seed, version)


# Model checkpoints reuse the same conventions with a different magic.
CHECKPOINT_MAGIC = b"VFMP"
CHECKPOINT_VERSION = 1


def save_arrays(path, magic: bytes, meta: dict, arrays: dict) -> None:
    """Write integer metadata and named f32 arrays in the container style."""
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        meta_items = sorted(meta.items())
        fh.write(struct.pack("<I", len(meta_items)))
        for key, val in meta_items:
            kb = key.encode()
            fh.write(struct.pack("<H", len(kb)) + kb + struct.pack("<q", int(val)))
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            a = np.ascontiguousarray(arrays[name], dtype="<f4")
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)) + nb)
            fh.write(struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
            fh.write(a.tobytes())


def load_arrays(path, magic: bytes):
    """Read back (meta, arrays) written by save_arrays."""
    with open(path, "rb") as fh:
        got = _read_exact(fh, 4)
        if got != magic:
            raise FormatError(f"bad magic {got!r}, expected {magic!r}")
        (version,) = struct.unpack("<H", _read_exact(fh, 2))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported container version {version}")
        (n_meta,) = struct.unpack("<I", _read_exact(fh, 4))
        meta = {}
        for _ in range(n_meta):
            (klen,) = struct.unpack("<H", _read_exact(fh, 2))
            key = _read_exact(fh, klen).decode()
            (val,) = struct.unpack("<q", _read_exact(fh, 8))
            meta[key] = val
        (n_arr,) = struct.unpack("<I", _read_exact(fh, 4))
        arrays = {}
        for _ in range(n_arr):
            (nlen,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, nlen).decode()
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            arrays[name] = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4").reshape(shape)
    return meta, arrays
