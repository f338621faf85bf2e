"""Synthetic phantoms with nested, blurred ellipsoidal regions.

Each blob is an axis-aligned ellipsoid. Class ``k`` of a blob shares the
blob centre with semi-axes scaled by ``core_ratio ** k``, so channel 0 is the
whole region and every later channel is nested inside the previous one.
The image is the mean of the label channels, blurred with a Gaussian of
width ``blur`` so region boundaries become uncertain, plus white noise,
then clamped to [0, 1].
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from fdiff.errors import InvalidConfig, ShapeMismatch
from fdiff.numerics.rng import SeededRng


@dataclass
class PhantomConfig:
    size: int = 16
    n_classes: int = 2
    n_blobs: tuple[int, int] = (1, 1)
    radius: tuple[float, float] = (4.0, 6.5)
    core_ratio: float = 0.6
    blur: float = 1.0
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        self.n_blobs = tuple(int(v) for v in self.n_blobs)
        self.radius = tuple(float(v) for v in self.radius)
        if self.size < 1 or self.n_classes < 1:
            raise InvalidConfig("size and n_classes must be >= 1")
        if not 1 <= self.n_blobs[0] <= self.n_blobs[1]:
            raise InvalidConfig(f"bad blob count range {self.n_blobs}")
        if not 0 < self.radius[0] <= self.radius[1]:
            raise InvalidConfig(f"bad radius range {self.radius}")
        if 2 * self.radius[1] > self.size - 1:
            raise InvalidConfig(f"radius {self.radius[1]} does not fit a {self.size}^3 grid")
        if not 0 < self.core_ratio <= 1:
            raise InvalidConfig("core_ratio must lie in (0, 1]")
        if self.blur < 0 or self.noise < 0:
            raise InvalidConfig("blur and noise must be >= 0")

    def check_depth(self, depth: int) -> None:
        if self.size % 2 ** depth:
            raise InvalidConfig(f"grid size {self.size} is not divisible by 2**{depth}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class VolumeRecord:
    """One phantom: ``image [C_img, D, H, W]`` float in [0, 1] and binary ``label [C_mask, D, H, W]``."""

    image: np.ndarray
    label: np.ndarray
    id: str = ""
    seed: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.image.ndim != 4 or self.label.ndim != 4 or self.image.shape[1:] != self.label.shape[1:]:
            raise ShapeMismatch(f"image {self.image.shape} and label {self.label.shape} are not aligned")

    def __eq__(self, other) -> bool:
        if not isinstance(other, VolumeRecord):
            return NotImplemented
        return (self.id == other.id and self.seed == other.seed
                and self.image.dtype == other.image.dtype and self.label.dtype == other.label.dtype
                and np.array_equal(self.image, other.image) and np.array_equal(self.label, other.label))


def ellipsoid_mask(size: int, centre, radii) -> np.ndarray:
    """Voxels whose centres satisfy ``sum(((x - c) / r)**2) <= 1``."""
    grid = np.ogrid[:size, :size, :size]
    q = sum(((g - c) / r) ** 2 for g, c, r in zip(grid, centre, radii))
    return q <= 1.0


def gen_phantom(config: PhantomConfig, rng: SeededRng | None = None, record_id: str = "") -> VolumeRecord:
    rng = rng or SeededRng(config.seed)
    n = config.size
    label = np.zeros((config.n_classes, n, n, n), dtype=bool)
    blobs = []
    for _ in range(int(rng.integers(config.n_blobs[0], config.n_blobs[1] + 1))):
        radii = rng.uniform(config.radius[0], config.radius[1], size=3)
        centre = np.array([rng.uniform(r, n - 1 - r) for r in radii])
        for k in range(config.n_classes):
            label[k] |= ellipsoid_mask(n, centre, radii * config.core_ratio ** k)
        blobs.append({"centre": centre.tolist(), "radii": radii.tolist()})

    crisp = label.mean(axis=0)
    image = ndimage.gaussian_filter(crisp, config.blur, mode="constant") if config.blur > 0 else crisp
    if config.noise > 0:
        image = image + config.noise * rng.normal(image.shape)
    image = np.clip(image, 0.0, 1.0)
    return VolumeRecord(image[None].astype(np.float32), label.astype(np.uint8),
                        id=record_id, seed=rng.seed, meta={"blobs": blobs})


def ellipsoid_voxel_bounds(radii_lo: float, radii_hi: float) -> tuple[float, float]:
    """Rigorous voxel-count bounds for one grid-contained ellipsoid with semi-axes in ``[lo, hi]``.

    A voxel is counted when its centre lies inside. Every counted unit cube
    sits inside the ellipsoid grown by the half-diagonal ``h = sqrt(3)/2``,
    which is contained in the homothetic ellipsoid with axes ``r (1 + h/lo)``;
    conversely, the counted cubes cover the ellipsoid shrunk to ``r (1 - h/lo)``.
    """
    h = np.sqrt(3.0) / 2.0
    lo = 4.0 / 3.0 * np.pi * max(radii_lo - h, 0.0) ** 3
    hi = 4.0 / 3.0 * np.pi * (radii_hi * (1.0 + h / radii_lo)) ** 3
    return lo, hi
