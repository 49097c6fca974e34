"""Procedural mini-dsprites datasets and their binary file format.

File layout (little-endian)::

    b"CLGD" | version u16 | K u16 | cardinality u16 * K | H u16 | W u16 | N u64
    | images u8 * (N*H*W) | factors u16 * (N*K) | crc32 u32

The CRC covers every byte before it.
"""
from __future__ import annotations

import itertools
import struct
import zlib
from dataclasses import dataclass

import numpy as np

MAGIC = b"CLGD"
FORMAT_VERSION = 1
RENDERER_VERSION = 1

SHAPES = ("square", "ellipse", "triangle")
SCALES = np.linspace(0.5, 1.0, 4)
# half-extent of a scale-1.0 shape as a fraction of the image side
EXTENT = 0.25

PROFILES = {
    "mini-dsprites": (("shape", 3), ("scale", 4), ("pos_x", 8), ("pos_y", 8)),
    "mini-dsprites-rot": (("shape", 3), ("scale", 4), ("orientation", 8),
                          ("pos_x", 8), ("pos_y", 8)),
}
SIDES = (16, 32, 64)


@dataclass(frozen=True)
class FactorSpec:
    names: tuple[str, ...]
    cardinalities: tuple[int, ...]

    def __post_init__(self):
        if len(self.names) != len(self.cardinalities) or not self.names:
            raise ValueError("factor names and cardinalities must be non-empty and equal length")
        if any(c < 1 for c in self.cardinalities):
            raise ValueError(f"cardinalities must be positive: {self.cardinalities}")

    @property
    def num_factors(self) -> int:
        return len(self.names)

    @property
    def size(self) -> int:
        return int(np.prod(self.cardinalities))

    @classmethod
    def from_profile(cls, profile: str) -> "FactorSpec":
        if profile not in PROFILES:
            raise ValueError(f"unknown profile {profile!r}; valid profiles: {', '.join(PROFILES)}")
        names, cards = zip(*PROFILES[profile])
        return cls(tuple(names), tuple(cards))


@dataclass
class FactorDataset:
    spec: FactorSpec
    images: np.ndarray   # (N, H, W) uint8
    factors: np.ndarray  # (N, K) int64

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.uint8)
        self.factors = np.ascontiguousarray(self.factors, dtype=np.int64)
        if self.images.ndim != 3 or self.factors.shape != (len(self.images), self.spec.num_factors):
            raise ValueError(f"inconsistent dataset shapes: images {self.images.shape}, "
                             f"factors {self.factors.shape}")
        if len(self.factors) and (np.any(self.factors < 0)
                                  or np.any(self.factors >= np.array(self.spec.cardinalities))):
            raise ValueError("factor index out of range of its cardinality")

    def __len__(self):
        return len(self.images)

    @property
    def side(self) -> int:
        return self.images.shape[1]

    def subset(self, idx) -> "FactorDataset":
        idx = np.asarray(idx)
        return FactorDataset(self.spec, self.images[idx], self.factors[idx])

    def as_float(self, idx=None) -> np.ndarray:
        """Flattened pixels in [0, 1]."""
        imgs = self.images if idx is None else self.images[idx]
        return imgs.reshape(len(imgs), -1).astype(np.float64) / 255.0

    def __eq__(self, other):
        if not isinstance(other, FactorDataset):
            return NotImplemented
        return (self.spec.cardinalities == other.spec.cardinalities
                and self.images.shape == other.images.shape
                and np.array_equal(self.images, other.images)
                and np.array_equal(self.factors, other.factors))


# -------------------------------------------------------------- rendering

def _inside(shape: str, u, v):
    if shape == "square":
        return (np.abs(u) <= 1.0) & (np.abs(v) <= 1.0)
    if shape == "ellipse":
        return u ** 2 + (v / 0.6) ** 2 <= 1.0
    if shape == "triangle":
        return (v <= 1.0) & (np.abs(u) <= 0.5 * (v + 1.0))
    raise ValueError(f"unknown shape {shape!r}")


def shape_area(shape: str, radius: float) -> float:
    """Analytic area in pixels of a shape with the given half-extent."""
    unit = {"square": 4.0, "ellipse": np.pi * 0.6, "triangle": 2.0}[shape]
    return unit * radius ** 2


def render_shape(shape: str, radius: float, cx: float, cy: float, angle: float,
                 side: int) -> np.ndarray:
    """Binary image (0/255) with 2x2 supersampling; a pixel is on at >= half coverage."""
    offs = np.array([0.25, 0.75])
    coords = (np.arange(side)[:, None] + offs[None, :]).ravel()
    ys, xs = np.meshgrid(coords, coords, indexing="ij")
    dx, dy = xs - cx, ys - cy
    c, s = np.cos(angle), np.sin(angle)
    u = (c * dx + s * dy) / radius
    v = (-s * dx + c * dy) / radius
    hit = _inside(shape, u, v).reshape(side, 2, side, 2).sum(axis=(1, 3))
    return np.where(hit >= 2, 255, 0).astype(np.uint8)


def _positions(side: int, levels: int, rotated: bool) -> np.ndarray:
    r_max = EXTENT * side * SCALES[-1]
    margin = r_max * (np.sqrt(2.0) if rotated else 1.0) + 0.5
    return np.linspace(margin, side - margin, levels)


def generate(profile: str = "mini-dsprites", side: int = 32, seed: int = 0) -> FactorDataset:
    """Exhaustive factor grid rendered in factor-major order.

    The grid is fully deterministic; ``seed`` is accepted for interface
    symmetry with the other generators and does not change the pixels.
    """
    spec = FactorSpec.from_profile(profile)
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}, got {side}")
    names = spec.names
    rotated = "orientation" in names
    pos = _positions(side, spec.cardinalities[names.index("pos_x")], rotated)
    n_orient = spec.cardinalities[names.index("orientation")] if rotated else 1
    angles = np.linspace(0.0, 2.0 * np.pi, n_orient, endpoint=False)

    combos = list(itertools.product(*(range(c) for c in spec.cardinalities)))
    images = np.empty((len(combos), side, side), dtype=np.uint8)
    for row, combo in enumerate(combos):
        f = dict(zip(names, combo))
        radius = EXTENT * side * SCALES[f["scale"]]
        angle = angles[f.get("orientation", 0)]
        images[row] = render_shape(SHAPES[f["shape"]], radius, pos[f["pos_x"]],
                                   pos[f["pos_y"]], angle, side)
    return FactorDataset(spec, images, np.array(combos, dtype=np.int64))


def train_test_split(n: int, seed: int, test_fraction: float = 0.1):
    """Random 9/10 - 1/10 index split."""
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(n * test_fraction))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


# ----------------------------------------------------------- sampling

def fixed_factor_indices(ds: FactorDataset, factor_k: int, batch_size: int,
                         rng: np.random.Generator):
    """Row indices sharing one random value of factor ``factor_k``."""
    if not 0 <= factor_k < ds.spec.num_factors:
        raise IndexError(f"factor index {factor_k} out of range")
    card = ds.spec.cardinalities[factor_k]
    value = int(rng.integers(card))
    rows = np.nonzero(ds.factors[:, factor_k] == value)[0]
    if batch_size < 1 or batch_size > len(rows):
        raise ValueError(f"cannot draw batch of {batch_size} with factor {factor_k} = {value}: "
                         f"only {len(rows)} matching rows")
    return rng.choice(rows, size=batch_size, replace=False), value


def fixed_factor_batch(ds: FactorDataset, factor_k: int, batch_size: int,
                       rng: np.random.Generator):
    idx, value = fixed_factor_indices(ds, factor_k, batch_size, rng)
    return ds.images[idx], value


# ------------------------------------------------------------------ io

def _header(ds: FactorDataset) -> bytes:
    K = ds.spec.num_factors
    N, H, W = ds.images.shape
    return (MAGIC + struct.pack("<HH", FORMAT_VERSION, K)
            + struct.pack(f"<{K}H", *ds.spec.cardinalities)
            + struct.pack("<HHQ", H, W, N))


def dataset_bytes(ds: FactorDataset) -> bytes:
    body = (_header(ds) + ds.images.tobytes()
            + ds.factors.astype("<u2").tobytes())
    return body + struct.pack("<I", zlib.crc32(body))


def dataset_crc(ds: FactorDataset) -> int:
    return zlib.crc32(dataset_bytes(ds)[:-4])


def write_dataset(ds: FactorDataset, path) -> int:
    """Write ``ds``; returns the CRC32 stored in the file."""
    blob = dataset_bytes(ds)
    with open(path, "wb") as fh:
        fh.write(blob)
    return struct.unpack("<I", blob[-4:])[0]


def _spec_for(cards: tuple[int, ...]) -> FactorSpec:
    # names are not stored on disk; recover them from a matching profile
    for profile in PROFILES:
        spec = FactorSpec.from_profile(profile)
        if spec.cardinalities == cards:
            return spec
    return FactorSpec(tuple(f"factor{i}" for i in range(len(cards))), cards)


def read_dataset(path) -> FactorDataset:
    with open(path, "rb") as fh:
        blob = fh.read()

    def need(offset, count):
        if offset + count > len(blob):
            raise ValueError(f"truncated dataset file: need {count} bytes at offset {offset}, "
                             f"file has {len(blob)}")

    need(0, 8)
    if blob[:4] != MAGIC:
        raise ValueError(f"bad magic at offset 0: {blob[:4]!r}")
    version, K = struct.unpack_from("<HH", blob, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset version {version} at offset 4")
    off = 8
    need(off, 2 * K + 12)
    cards = struct.unpack_from(f"<{K}H", blob, off)
    off += 2 * K
    H, W, N = struct.unpack_from("<HHQ", blob, off)
    off += 12
    n_img = N * H * W
    need(off, n_img + 2 * N * K + 4)
    images = np.frombuffer(blob, dtype=np.uint8, count=n_img, offset=off).reshape(N, H, W)
    off += n_img
    factors = np.frombuffer(blob, dtype="<u2", count=N * K, offset=off).reshape(N, K)
    off += 2 * N * K
    (stored,) = struct.unpack_from("<I", blob, off)
    actual = zlib.crc32(blob[:off])
    if stored != actual:
        raise ValueError(f"checksum mismatch at offset {off}: stored {stored:#010x}, "
                         f"computed {actual:#010x}")
    return FactorDataset(_spec_for(tuple(cards)), images.copy(), factors.astype(np.int64))
