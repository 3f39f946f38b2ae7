"""Synthetic aligned image/mask sets with overlapping region intensities.

Every image draws from its own PCG64 stream, seeded by
``SeedSequence(seed, spawn_key=(index,))``, so dropping or adding images never
changes the others.
"""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidSpec
from .imageio import quantize
from .model import TrainingSet

FAMILIES = ("blob-with-protrusion", "ellipse", "capped-cylinder")


def _default_fg():
    return [(1.0, 0.6, 0.08)]


def _default_bg():
    return [(0.75, 0.2, 0.08), (0.25, 0.9, 0.05)]


@dataclass(frozen=True)
class PhantomSpec:
    """Recipe for a phantom training set.

    Mixtures are lists of ``(weight, mean, std)``. ``overlap`` blends the
    foreground mixture into the background one: the effective background is
    ``(1 - overlap) * bg + overlap * fg``.
    """

    dims: tuple = (128, 128)
    n_shapes: int = 30
    shape_family: str = "blob-with-protrusion"
    fg_intensity_mixture: list = field(default_factory=_default_fg)
    bg_intensity_mixture: list = field(default_factory=_default_bg)
    overlap: float = 0.0
    jitter: float = 3.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "fg_intensity_mixture", [tuple(map(float, c)) for c in self.fg_intensity_mixture])
        object.__setattr__(self, "bg_intensity_mixture", [tuple(map(float, c)) for c in self.bg_intensity_mixture])
        validate(self)

    def to_json(self):
        d = asdict(self)
        d["dims"] = list(self.dims)
        d["fg_intensity_mixture"] = [list(c) for c in self.fg_intensity_mixture]
        d["bg_intensity_mixture"] = [list(c) for c in self.bg_intensity_mixture]
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidSpec(f"phantom spec is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise InvalidSpec("phantom spec must be a JSON object")
        unknown = set(data) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise InvalidSpec(f"unknown phantom spec keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, InvalidSpec):
                raise
            raise InvalidSpec(str(exc)) from None

    def with_changes(self, **changes):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(changes)
        return PhantomSpec(**d)


def _check_mixture(name, mixture):
    if not mixture:
        raise InvalidSpec(f"{name} is empty")
    for comp in mixture:
        if len(comp) != 3:
            raise InvalidSpec(f"{name}: components are (weight, mean, std)")
        w, mean, std = comp
        if w < 0 or not 0.0 <= mean <= 1.0 or not std > 0:
            raise InvalidSpec(f"{name}: bad component {comp}")
    if abs(sum(c[0] for c in mixture) - 1.0) > 1e-9:
        raise InvalidSpec(f"{name}: weights must sum to 1")


def validate(spec):
    if len(spec.dims) not in (2, 3) or min(spec.dims) < 8:
        raise InvalidSpec(f"dims must be 2 or 3 extents of at least 8, got {spec.dims}")
    if spec.n_shapes < 1:
        raise InvalidSpec("n_shapes must be positive")
    if spec.shape_family not in FAMILIES:
        raise InvalidSpec(f"unknown shape family {spec.shape_family!r}")
    if spec.shape_family == "capped-cylinder" and len(spec.dims) != 3:
        raise InvalidSpec("capped-cylinder phantoms are 3-D only")
    _check_mixture("fg_intensity_mixture", spec.fg_intensity_mixture)
    _check_mixture("bg_intensity_mixture", spec.bg_intensity_mixture)
    if not 0.0 <= spec.overlap <= 1.0:
        raise InvalidSpec("overlap must lie in [0, 1]")
    if not spec.jitter > 0:
        raise InvalidSpec("jitter must be positive")
    if not 0 <= int(spec.seed) < 2 ** 64:
        raise InvalidSpec("seed must be a 64-bit unsigned integer")


def effective_background(spec):
    """Background mixture after blending in ``overlap`` of the foreground mixture."""
    o = spec.overlap
    mix = [(w * (1.0 - o), m, s) for w, m, s in spec.bg_intensity_mixture]
    mix += [(w * o, m, s) for w, m, s in spec.fg_intensity_mixture]
    return [c for c in mix if c[0] > 0]


def mixture_pdf(mixture, x):
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    for w, m, s in mixture:
        out += w * np.exp(-0.5 * ((x - m) / s) ** 2) / (s * math.sqrt(2.0 * math.pi))
    return out


def overlap_coefficient(fg_mix, bg_mix, nodes=10_000):
    """Integral of ``min(p_fg, p_bg)`` by the trapezoid rule.

    The interval is [-0.5, 1.5] widened to cover 8 standard deviations around
    every component, so mixtures with wide components are not cut off.
    """
    comps = list(fg_mix) + list(bg_mix)
    lo = min([-0.5] + [m - 8 * s for _, m, s in comps])
    hi = max([1.5] + [m + 8 * s for _, m, s in comps])
    x = np.linspace(lo, hi, nodes)
    return float(np.trapezoid(np.minimum(mixture_pdf(fg_mix, x), mixture_pdf(bg_mix, x)), x))


def image_rng(seed, index):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(index),))))


def _capsule(grid, a, b, radius):
    """Points within ``radius`` of the segment a-b."""
    a = np.asarray(a, dtype=np.float64)
    ab = np.asarray(b, dtype=np.float64) - a
    rel = grid - a.reshape((-1,) + (1,) * (grid.ndim - 1))
    t = np.clip(np.tensordot(ab, rel, axes=(0, 0)) / (ab @ ab), 0.0, 1.0)
    closest = a.reshape((-1,) + (1,) * (grid.ndim - 1)) + ab.reshape((-1,) + (1,) * (grid.ndim - 1)) * t
    return ((grid - closest) ** 2).sum(axis=0) <= radius ** 2


def _ball(grid, center, radius):
    c = np.asarray(center, dtype=np.float64).reshape((-1,) + (1,) * (grid.ndim - 1))
    return ((grid - c) ** 2).sum(axis=0) <= radius ** 2


def shape_mask(family, dims, shift, scale):
    """One instance of a shape family, shifted by ``shift`` voxels and scaled by ``scale``."""
    dims = np.array(dims, dtype=np.float64)
    grid = np.indices(tuple(int(d) for d in dims), dtype=np.float64)
    size = dims.min()
    center = (dims - 1) / 2.0 + np.asarray(shift, dtype=np.float64)
    # axis 0 is the protrusion axis: the base sits at larger index
    up = np.zeros(len(dims))
    up[0] = 1.0
    side = np.zeros(len(dims))
    side[-1] = 1.0
    if family == "blob-with-protrusion":
        r_head = 0.11 * size * scale
        head = center - 0.12 * size * up
        lobe = head + 0.45 * r_head * side + 0.2 * r_head * up
        base = center + 0.22 * size * up
        mask = _ball(grid, head, r_head)
        mask |= _ball(grid, lobe, 0.8 * r_head)
        mask |= _capsule(grid, head, base, 0.35 * r_head)
        return mask
    if family == "ellipse":
        semi = np.full(len(dims), 0.12 * size * scale)
        semi[0] = 0.2 * size * scale
        c = center.reshape((-1,) + (1,) * len(dims))
        s = semi.reshape((-1,) + (1,) * len(dims))
        return (((grid - c) / s) ** 2).sum(axis=0) <= 1.0
    if family == "capped-cylinder":
        r = 0.1 * size * scale
        return _capsule(grid, center - 0.18 * size * up, center + 0.18 * size * up, r)
    raise InvalidSpec(f"unknown shape family {family!r}")


def _sample(rng, mixture, u):
    weights = np.array([c[0] for c in mixture])
    edges = np.cumsum(weights) / weights.sum()
    comp = np.minimum(np.searchsorted(edges, u, side="right"), len(mixture) - 1)
    means = np.array([c[1] for c in mixture])[comp]
    stds = np.array([c[2] for c in mixture])[comp]
    return means + stds * rng.standard_normal(u.shape)


def generate_one(spec, index):
    """Image (float, 8-bit quantized) and mask for one phantom index."""
    rng = image_rng(spec.seed, index)
    d = len(spec.dims)
    shift = rng.uniform(-spec.jitter, spec.jitter, size=d)
    scale = rng.uniform(0.9, 1.1)
    mask = shape_mask(spec.shape_family, spec.dims, shift, scale)
    u = rng.random(spec.dims)
    fg = _sample(rng, spec.fg_intensity_mixture, u)
    bg = _sample(rng, effective_background(spec), u)
    image = np.where(mask, fg, bg)
    image = quantize(image, 8).astype(np.float64) / 255.0
    return image, mask


def generate(spec):
    """Generate the full training set described by ``spec``."""
    validate(spec)
    images, masks = [], []
    for k in range(spec.n_shapes):
        image, mask = generate_one(spec, k)
        images.append(image)
        masks.append(mask)
    return TrainingSet(images, masks, [f"phantom_{k:03d}" for k in range(spec.n_shapes)])


def foreground_fraction_bounds(spec):
    """Smallest and largest foreground fraction the jitter range can produce."""
    lo = shape_mask(spec.shape_family, spec.dims, np.zeros(len(spec.dims)), 0.9).mean()
    hi = shape_mask(spec.shape_family, spec.dims, np.zeros(len(spec.dims)), 1.1).mean()
    return float(lo) * 0.9, float(hi) * 1.1
