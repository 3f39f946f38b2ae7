"""Energy, force fields and gradient-descent curve evolution.

The energy of a level-set field ``phi`` given image ``y`` is::

    E = w_data    * (-sum_{phi<0} log p_fg(y) - sum_{phi>=0} log p_bg(y))
      + w_context * (-sum_{phi<0} log q_fg(x) - sum_{phi>=0} log q_bg(x))
      + w_shape   * -log( mean_i exp(-||phi - phi_i||^2 / (2 sigma_S^2)) )

Every density carries the additive floor before the log. Evolution moves
``phi`` along the combined descent direction, so foreground-likely voxels
drift below zero.
"""

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from . import grid
from .density import DEFAULT_FLOOR, eval_intensity, log_ratio_map
from .errors import AllBackground, AllForeground, ConfigError, DimensionMismatch, EmptyAtlas, NonFiniteForce
from .kernels import atlas_sqdist, atlas_weighted_sum

logger = logging.getLogger(__name__)

LEARNED = "learned"
PIECEWISE_CONSTANT = "piecewise-constant"
METHODS = ("full", "data+context", "data+shape", "data-only", "piecewise-constant")


@dataclass(frozen=True)
class EvolutionConfig:
    """Weights, step control and stopping rule for curve evolution.

    ``tol`` is the fraction of voxels allowed to change label per iteration;
    the stage stops once ``window`` consecutive iterations stay below it.
    """

    w_data: float = 1.0
    w_context: float = 1.0
    w_shape: float = 1.0
    step_size: float = 0.5
    max_iters_stage1: int = 500
    max_iters_stage2: int = 500
    tol: float = 1e-4
    window: int = 5
    redistance_every: int = 10
    density_floor: float = DEFAULT_FLOOR
    data_term: str = LEARNED

    def __post_init__(self):
        for name in ("w_data", "w_context", "w_shape"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not self.step_size > 0:
            raise ConfigError("step_size must be positive")
        if not 0 < self.tol < 1:
            raise ConfigError("tol must lie in (0, 1)")
        for name in ("max_iters_stage1", "max_iters_stage2", "window", "redistance_every"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if not self.density_floor > 0:
            raise ConfigError("density_floor must be positive")
        if self.data_term not in (LEARNED, PIECEWISE_CONSTANT):
            raise ConfigError(f"unknown data term {self.data_term!r}")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def baseline_config(kind, base=None):
    """Configuration for one of the compared methods.

    ``full`` is the proposed method; ``data+context`` drops the shape prior,
    ``data+shape`` drops the context prior, ``data-only`` keeps only the
    learned intensity term and ``piecewise-constant`` swaps that term for the
    two-region-mean force with no priors.
    """
    base = base or EvolutionConfig()
    if kind == "full":
        return base.replace(data_term=LEARNED)
    if kind == "data+context":
        return base.replace(data_term=LEARNED, w_shape=0.0)
    if kind == "data+shape":
        return base.replace(data_term=LEARNED, w_context=0.0)
    if kind == "data-only":
        return base.replace(data_term=LEARNED, w_context=0.0, w_shape=0.0)
    if kind == "piecewise-constant":
        return base.replace(data_term=PIECEWISE_CONSTANT, w_context=0.0, w_shape=0.0)
    raise ConfigError(f"unknown method {kind!r}; expected one of {', '.join(METHODS)}")


def _check_dims(model, *fields):
    for f in fields:
        if tuple(np.shape(f)) != tuple(model.dims):
            raise DimensionMismatch(f"field dims {np.shape(f)} do not match model dims {tuple(model.dims)}")


def intensity_costs(y, model, floor=DEFAULT_FLOOR):
    """Per-voxel ``-log(p + floor)`` of the foreground and background intensity KDEs."""
    y = np.asarray(y, dtype=np.float64)
    _check_dims(model, y)
    fg = -np.log(eval_intensity(model.intensity_fg, y) + floor)
    bg = -np.log(eval_intensity(model.intensity_bg, y) + floor)
    return fg, bg


def context_costs(model, floor=DEFAULT_FLOOR):
    return -np.log(model.context_fg.map + floor), -np.log(model.context_bg.map + floor)


def data_force(y, model, floor=DEFAULT_FLOOR):
    """``log((p_bg(y) + floor) / (p_fg(y) + floor))``; negative where y looks like foreground."""
    fg, bg = intensity_costs(y, model, floor)
    return fg - bg


def context_force(model, floor=DEFAULT_FLOOR):
    """``log((q_bg + floor) / (q_fg + floor))``; depends on location only."""
    return log_ratio_map(model.context_fg, model.context_bg, floor)


def _shape_terms(phi, atlas, sqdist=None):
    if len(atlas) == 0:
        raise EmptyAtlas("shape atlas is empty")
    if sqdist is None:
        sqdist = atlas_sqdist(phi, atlas.flat)
    logits = -sqdist / (2.0 * atlas.bandwidth ** 2)
    top = logits.max()
    lse = top + np.log(np.exp(logits - top).sum())
    energy = -(lse - np.log(len(atlas)))
    resp = np.exp(logits - lse)
    return energy, resp


def shape_energy(phi, atlas):
    """``-log mean_i exp(-||phi - phi_i||^2 / (2 sigma^2))``, normalizer dropped."""
    phi = np.asarray(phi, dtype=np.float64)
    if tuple(phi.shape) != tuple(atlas.dims):
        raise DimensionMismatch("phi and atlas dims differ")
    return float(_shape_terms(phi, atlas)[0])


def shape_force(phi, atlas, sqdist=None):
    """Responsibility-weighted pull ``sum_i r_i (phi_i - phi) / sigma^2`` toward the atlas.

    ``r`` is the softmax of ``-||phi - phi_i||^2 / (2 sigma^2)``; the result
    is the negative gradient of :func:`shape_energy`.
    """
    phi = np.asarray(phi, dtype=np.float64)
    if len(atlas) == 0:
        raise EmptyAtlas("shape atlas is empty")
    if tuple(phi.shape) != tuple(atlas.dims):
        raise DimensionMismatch("phi and atlas dims differ")
    _, resp = _shape_terms(phi, atlas, sqdist)
    pulled = atlas_weighted_sum(resp, atlas.flat).reshape(phi.shape)
    return (pulled - phi) / atlas.bandwidth ** 2


def piecewise_constant_terms(y, mask):
    """Two-region-mean energy and force for the current partition."""
    total = y.mean()
    n_fg = int(mask.sum())
    mu_fg = y[mask].mean() if n_fg else total
    mu_bg = y[~mask].mean() if n_fg < mask.size else total
    cost_fg = (y - mu_fg) ** 2
    cost_bg = (y - mu_bg) ** 2
    energy = float(np.where(mask, cost_fg, cost_bg).sum())
    return energy, cost_fg - cost_bg


class ForceSet:
    """The weighted terms driving one evolution stage.

    Static terms (learned intensity and context) enter as per-voxel label
    costs; the shape and piecewise-constant terms depend on the current field
    and are recomputed every iteration.
    """

    def __init__(self, cost_fg=None, cost_bg=None, atlas=None, w_shape=0.0, image=None, w_pc=0.0):
        self.cost_fg = cost_fg
        self.cost_bg = cost_bg
        self.static = None if cost_fg is None else cost_fg - cost_bg
        self.atlas = atlas if w_shape > 0 else None
        self.w_shape = float(w_shape)
        self.image = image if w_pc > 0 else None
        self.w_pc = float(w_pc)

    @classmethod
    def for_config(cls, y, model, cfg, with_shape=True):
        floor = cfg.density_floor
        cost_fg = cost_bg = None
        pc_weight = 0.0
        if cfg.data_term == LEARNED and cfg.w_data > 0:
            fg, bg = intensity_costs(y, model, floor)
            cost_fg, cost_bg = cfg.w_data * fg, cfg.w_data * bg
        elif cfg.data_term == PIECEWISE_CONSTANT:
            pc_weight = cfg.w_data
        if cfg.w_context > 0:
            fg, bg = context_costs(model, floor)
            if cost_fg is None:
                cost_fg, cost_bg = cfg.w_context * fg, cfg.w_context * bg
            else:
                cost_fg = cost_fg + cfg.w_context * fg
                cost_bg = cost_bg + cfg.w_context * bg
        w_shape = cfg.w_shape if with_shape else 0.0
        image = np.asarray(y, dtype=np.float64) if pc_weight > 0 else None
        return cls(cost_fg, cost_bg, model.shapes if w_shape > 0 else None, w_shape, image, pc_weight)

    def evaluate(self, phi):
        """Energy at ``phi`` and the descent direction there."""
        mask = phi < 0
        energy = 0.0
        force = np.zeros(phi.shape)
        if self.static is not None:
            energy += float(np.where(mask, self.cost_fg, self.cost_bg).sum())
            force += self.static
        if self.image is not None:
            e, f = piecewise_constant_terms(self.image, mask)
            energy += self.w_pc * e
            force += self.w_pc * f
        if self.atlas is not None:
            sqdist = atlas_sqdist(phi, self.atlas.flat)
            e, _ = _shape_terms(phi, self.atlas, sqdist)
            energy += self.w_shape * float(e)
            force += self.w_shape * shape_force(phi, self.atlas, sqdist)
        return energy, force


def energy(phi, y, model, cfg=None):
    """Total weighted energy of ``phi`` (piecewise-constant data term if so configured)."""
    cfg = cfg or EvolutionConfig()
    phi = np.asarray(phi, dtype=np.float64)
    _check_dims(model, phi, y)
    return ForceSet.for_config(y, model, cfg).evaluate(phi)[0]


@dataclass
class StageResult:
    phi: np.ndarray
    trace: list
    iterations: int
    converged: bool
    redistanced: list = field(default_factory=list)


def evolve_stage(phi0, forces, cfg, max_iters=None):
    """Gradient-descent evolution of a level-set field.

    Each iteration applies ``phi += dt * F`` with ``dt = min(step_size, 1 / max|F|)``
    so no voxel moves more than one unit, redistances every
    ``redistance_every`` iterations, and stops when fewer than ``tol`` of the
    voxels changed label in each of the last ``window`` iterations (or at once
    if ``F`` vanishes).

    Returns
    -------
    StageResult
        ``trace`` holds ``(iteration, energy)`` starting with iteration 0.
    """
    max_iters = cfg.max_iters_stage1 if max_iters is None else int(max_iters)
    phi = np.array(phi0, dtype=np.float64)
    mask = phi < 0
    n_vox = phi.size
    e, force = forces.evaluate(phi)
    trace = [(0, e)]
    flips = []
    redistanced = []
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        if not np.all(np.isfinite(force)):
            raise NonFiniteForce(f"non-finite force at iteration {it}; check density_floor")
        peak = float(np.abs(force).max())
        if peak == 0.0:
            converged = True
            break
        dt = min(cfg.step_size, 1.0 / peak)
        phi = phi + dt * force
        if it % cfg.redistance_every == 0:
            try:
                phi = grid.redistance(phi)
                redistanced.append(it)
            except (AllForeground, AllBackground):
                pass
        new_mask = phi < 0
        flips.append(np.count_nonzero(new_mask != mask) / n_vox)
        mask = new_mask
        e, force = forces.evaluate(phi)
        trace.append((it, e))
        if len(flips) >= cfg.window and max(flips[-cfg.window:]) < cfg.tol:
            converged = True
            break
    return StageResult(phi, trace, it, converged, redistanced)


@dataclass
class SegmentationResult:
    mask: np.ndarray
    phi: np.ndarray
    stage1: StageResult
    stage2: StageResult = None
    dice: float = None

    @property
    def iters_stage1(self):
        return self.stage1.iterations

    @property
    def iters_stage2(self):
        return self.stage2.iterations if self.stage2 is not None else 0

    @property
    def converged(self):
        second = self.stage2.converged if self.stage2 is not None else self.stage1.converged
        return (self.stage1.converged, second)

    @property
    def energy_trace(self):
        """``(iteration, energy)`` over both stages; stage 2 continues the numbering."""
        out = list(self.stage1.trace)
        if self.stage2 is not None:
            offset = self.stage1.iterations
            out += [(offset + k, e) for k, e in self.stage2.trace]
        return out

    @property
    def stage1_mask(self):
        return self.stage1.phi < 0


def auto_init(y, model, cfg=None):
    """Initial field: signed distance of the voxels whose intensity looks like foreground.

    Falls back to a centered ball when that mask is uniform.
    """
    cfg = cfg or EvolutionConfig()
    mask = data_force(y, model, cfg.density_floor) < 0
    if mask.any() and not mask.all():
        return grid.signed_distance_transform(mask)
    logger.info("intensity-only initialization is uniform; starting from a centered ball")
    return grid.ball(model.dims)


def run_stage1(y, model, cfg, phi0=None):
    """Stage 1: evolve with the shape weight forced to zero."""
    y = grid.check_field(y, "image")
    _check_dims(model, y)
    if phi0 is None:
        phi0 = auto_init(y, model, cfg)
    _check_dims(model, phi0)
    forces = ForceSet.for_config(y, model, cfg, with_shape=False)
    return evolve_stage(phi0, forces, cfg, cfg.max_iters_stage1)


def run_stage2(y, model, cfg, stage1):
    """Stage 2: all three terms, starting from the stage-1 curve. ``None`` if ``w_shape == 0``."""
    if cfg.w_shape == 0:
        return None
    phi = stage1.phi
    try:
        phi = grid.redistance(phi)
    except (AllForeground, AllBackground):
        pass
    forces = ForceSet.for_config(y, model, cfg, with_shape=True)
    return evolve_stage(phi, forces, cfg, cfg.max_iters_stage2)


def segment_two_stage(y, model, cfg=None, phi0=None, ground_truth=None, stage1=None):
    """Two-stage segmentation: intensity + context to convergence, then all three terms.

    Parameters
    ----------
    y : ndarray
        Test image, float in [0, 1], same dims as the model.
    model : PriorModel
    cfg : EvolutionConfig, optional
    phi0 : ndarray, optional
        Initial level-set field; defaults to :func:`auto_init`.
    ground_truth : ndarray of bool, optional
        If given, the result carries its Dice score against this mask.
    stage1 : StageResult, optional
        Reuse a finished stage 1 (it depends only on the non-shape settings).
    """
    cfg = cfg or EvolutionConfig()
    if stage1 is None:
        stage1 = run_stage1(y, model, cfg, phi0)
    stage2 = run_stage2(y, model, cfg, stage1)
    phi = stage2.phi if stage2 is not None else stage1.phi
    mask = grid.threshold(phi)
    score = grid.dice(mask, ground_truth) if ground_truth is not None else None
    return SegmentationResult(mask, phi, stage1, stage2, score)


def stage1_key(cfg):
    """Settings that determine stage 1; configs with equal keys share a stage-1 result."""
    return dataclasses.replace(cfg, w_shape=0.0, max_iters_stage2=1)
