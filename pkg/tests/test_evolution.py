import math
from types import SimpleNamespace

import numpy as np
import pytest

from spinecarve import density, grid
from spinecarve.errors import ConfigError, DimensionMismatch
from spinecarve.evolution import (
    METHODS,
    EvolutionConfig,
    ForceSet,
    baseline_config,
    context_force,
    data_force,
    energy,
    evolve_stage,
    segment_two_stage,
    shape_energy,
    shape_force,
    stage1_key,
)
from spinecarve.model import ShapeAtlas, build_model


@pytest.fixture(scope="module")
def hard_model(hard_set):
    return build_model(hard_set.subset(range(1, len(hard_set))))


def test_zero_weights_give_zero_energy(hard_set, hard_model):
    cfg = EvolutionConfig(w_data=0.0, w_context=0.0, w_shape=0.0)
    phi = grid.signed_distance_transform(hard_set.masks[0])
    assert energy(phi, hard_set.images[0], hard_model, cfg) == 0.0


def test_shape_energy_zero_at_single_atlas_field():
    rng = np.random.default_rng(0)
    f = rng.standard_normal((1, 8, 8))
    assert shape_energy(f[0], ShapeAtlas(f, 2.0)) == 0.0


def straight_line_energy(phi, y, model, cfg):
    """Voxel-by-voxel energy with scalar math only."""
    floor = cfg.density_floor
    e_data = e_ctx = 0.0
    for idx in np.ndindex(phi.shape):
        p_fg = float(model.intensity_fg(y[idx]))
        p_bg = float(model.intensity_bg(y[idx]))
        q_fg = float(model.context_fg.map[idx])
        q_bg = float(model.context_bg.map[idx])
        if phi[idx] < 0:
            e_data -= math.log(p_fg + floor)
            e_ctx -= math.log(q_fg + floor)
        else:
            e_data -= math.log(p_bg + floor)
            e_ctx -= math.log(q_bg + floor)
    sigma = model.shapes.bandwidth
    terms = []
    for field in model.shapes.fields:
        sq = sum((float(phi[i]) - float(field[i])) ** 2 for i in np.ndindex(phi.shape))
        terms.append(-sq / (2 * sigma * sigma))
    top = max(terms)
    mean = sum(math.exp(t - top) for t in terms) / len(terms)
    e_shape = -(top + math.log(mean))
    return cfg.w_data * e_data + cfg.w_context * e_ctx + cfg.w_shape * e_shape


def test_energy_matches_straight_line_oracle():
    from spinecarve.phantoms import PhantomSpec, generate
    ts = generate(PhantomSpec(dims=(8, 8), n_shapes=4, jitter=0.5, overlap=0.3, seed=2))
    model = build_model(ts.subset([1, 2, 3]))
    cfg = EvolutionConfig(w_data=1.3, w_context=0.7, w_shape=2.0)
    rng = np.random.default_rng(1)
    for _ in range(3):
        phi = model.shapes.fields[0] + rng.standard_normal((8, 8))
        got = energy(phi, ts.images[0], model, cfg)
        want = straight_line_energy(phi, ts.images[0], model, cfg)
        assert got == pytest.approx(want, rel=1e-12, abs=1e-9)


def two_kde_model(y_node):
    # p_fg / p_bg = e at y_node for unit-weight Gaussians 0.05 and 0.15 away, sigma 0.1
    fg = density.fit_intensity_kde([y_node + 0.05], 0.1)
    bg = density.fit_intensity_kde([y_node - 0.15], 0.1)
    return SimpleNamespace(intensity_fg=fg, intensity_bg=bg, dims=(4, 4))


def test_data_force_examples():
    node = np.linspace(0, 1, density.TABLE_RESOLUTION)[2252]
    model = two_kde_model(node)
    y = np.full((4, 4), node)
    np.testing.assert_allclose(data_force(y, model, floor=1e-14), -1.0, atol=1e-9)
    same = density.fit_intensity_kde([0.3, 0.7], 0.1)
    eq = SimpleNamespace(intensity_fg=same, intensity_bg=same, dims=(4, 4))
    assert np.all(data_force(np.random.default_rng(0).random((4, 4)), eq) == 0.0)


def test_data_force_small_where_pdfs_overlap(hard_set, hard_model):
    y = np.linspace(0, 1, 101)
    pf, pb = hard_model.intensity_fg(y), hard_model.intensity_bg(y)
    model = SimpleNamespace(intensity_fg=hard_model.intensity_fg, intensity_bg=hard_model.intensity_bg,
                            dims=y.shape)
    f = data_force(y, model)
    tangled = np.abs(np.log(pf / pb)) < 0.2
    assert tangled.any()
    assert np.abs(f[tangled]).max() < 0.2 + 1e-6
    assert np.abs(f).max() > 1.0


def test_context_force_examples():
    dims = (16, 16)
    centre = density.fit_spatial_kde([[8, 8]], dims, 2.0)
    spread = density.fit_spatial_kde(np.argwhere(np.ones(dims)), dims, 2.0)
    model = SimpleNamespace(context_fg=centre, context_bg=spread)
    f = context_force(model)
    assert f[8, 8] < -1.0
    assert f[0, 0] > 1.0 and f[15, 15] > 1.0
    np.testing.assert_array_equal(f, context_force(model))
    flat = SimpleNamespace(context_fg=spread, context_bg=spread)
    assert np.all(context_force(flat) == 0.0)


def test_sign_sanity(hard_set, hard_model):
    cfg = baseline_config("data+context")
    forces = ForceSet.for_config(hard_set.images[0], hard_model, cfg)
    _, f = forces.evaluate(np.ones(hard_model.dims))
    both = (data_force(hard_set.images[0], hard_model) < 0) & (context_force(hard_model) < 0)
    assert both.any()
    assert np.all(f[both] < 0)


def test_shape_force_single_field():
    rng = np.random.default_rng(3)
    fields = rng.standard_normal((1, 10, 10))
    atlas = ShapeAtlas(fields, 1.7)
    phi = rng.standard_normal((10, 10))
    np.testing.assert_allclose(shape_force(phi, atlas), (fields[0] - phi) / 1.7 ** 2, rtol=1e-14)


def test_shape_force_vanishes_at_isolated_field():
    rng = np.random.default_rng(4)
    a = rng.standard_normal((10, 10))
    fields = np.stack([a, a + 50.0])
    atlas = ShapeAtlas(fields, 2.0)
    assert np.abs(shape_force(a, atlas)).max() < 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_shape_force_is_negative_gradient(seed):
    rng = np.random.default_rng(seed)
    fields = rng.standard_normal((3, 16, 16)) * 3
    atlas = ShapeAtlas(fields, 4.0)
    phi = fields.mean(axis=0) + rng.standard_normal((16, 16))
    force = shape_force(phi, atlas)
    h = 1e-4
    for _ in range(5):
        d = rng.standard_normal((16, 16))
        fd = (shape_energy(phi + h * d, atlas) - shape_energy(phi - h * d, atlas)) / (2 * h)
        analytic = -float((force * d).sum())
        assert abs(fd - analytic) <= 1e-4 * abs(analytic)


def test_shape_dims_checked():
    atlas = ShapeAtlas(np.zeros((2, 4, 4)), 1.0)
    with pytest.raises(DimensionMismatch):
        shape_force(np.zeros((5, 5)), atlas)


def test_zero_force_converges_immediately():
    phi = grid.ball((12, 12))
    out = evolve_stage(phi, ForceSet(), EvolutionConfig())
    assert out.converged and out.iterations == 1
    np.testing.assert_array_equal(out.phi, phi)


def test_uniform_force_single_step():
    phi = grid.ball((12, 12))
    forces = ForceSet(cost_fg=-np.ones((12, 12)), cost_bg=np.zeros((12, 12)))
    cfg = EvolutionConfig(step_size=0.5, redistance_every=100)
    out = evolve_stage(phi, forces, cfg, max_iters=1)
    np.testing.assert_allclose(out.phi, phi - 0.5, atol=1e-15)


def test_step_is_capped():
    phi = grid.ball((12, 12))
    forces = ForceSet(cost_fg=-8 * np.ones((12, 12)), cost_bg=np.zeros((12, 12)))
    out = evolve_stage(phi, forces, EvolutionConfig(step_size=0.5, redistance_every=100), max_iters=1)
    np.testing.assert_allclose(out.phi, phi - 1.0, atol=1e-15)


def test_separated_modes_data_only(easy_set):
    model = build_model(easy_set.subset(range(1, len(easy_set))))
    res = segment_two_stage(easy_set.images[0], model, baseline_config("data-only"),
                            ground_truth=easy_set.masks[0])
    assert res.dice >= 0.95
    np.testing.assert_array_equal(res.mask, grid.threshold(res.phi))


def test_w_shape_zero_skips_stage_two(hard_set, hard_model):
    cfg = baseline_config("data+context")
    res = segment_two_stage(hard_set.images[0], hard_model, cfg)
    assert res.stage2 is None and res.iters_stage2 == 0
    np.testing.assert_array_equal(res.mask, res.stage1_mask)


def test_descent_with_static_forces(hard_set, hard_model):
    for kind in ("data+context", "data-only"):
        res = segment_two_stage(hard_set.images[0], hard_model, baseline_config(kind))
        energies = [e for _, e in res.stage1.trace]
        assert all(b <= a + 1e-9 * abs(a) for a, b in zip(energies, energies[1:]))


def test_full_run_final_not_above_initial(hard_set, hard_model):
    res = segment_two_stage(hard_set.images[0], hard_model, baseline_config("full"))
    assert res.stage2 is not None
    assert res.stage2.trace[-1][1] <= res.stage2.trace[0][1]
    assert res.stage1.trace[-1][1] <= res.stage1.trace[0][1]
    assert res.iters_stage1 <= 500 and res.iters_stage2 <= 500


@pytest.mark.parametrize("c", [4.0, 3.0])
def test_weight_and_step_scaling_invariance(hard_set, hard_model, c):
    base = EvolutionConfig(w_data=1.0, w_context=0.8, w_shape=1.5, step_size=0.5)
    scaled = base.replace(w_data=c * 1.0, w_context=c * 0.8, w_shape=c * 1.5, step_size=0.5 / c)
    a = segment_two_stage(hard_set.images[0], hard_model, base)
    b = segment_two_stage(hard_set.images[0], hard_model, scaled)
    np.testing.assert_array_equal(a.mask, b.mask)
    assert a.iters_stage1 == b.iters_stage1 and a.iters_stage2 == b.iters_stage2
    if c == 4.0:
        # powers of two scale exactly
        np.testing.assert_array_equal(a.phi, b.phi)


def test_no_context_equals_data_plus_shape(hard_set, hard_model):
    a = segment_two_stage(hard_set.images[0], hard_model, EvolutionConfig(w_context=0.0))
    b = segment_two_stage(hard_set.images[0], hard_model, baseline_config("data+shape"))
    np.testing.assert_array_equal(a.phi, b.phi)
    assert a.energy_trace == b.energy_trace


def test_segmentation_is_deterministic(hard_set, hard_model):
    a = segment_two_stage(hard_set.images[0], hard_model)
    b = segment_two_stage(hard_set.images[0], hard_model)
    np.testing.assert_array_equal(a.phi, b.phi)
    assert a.energy_trace == b.energy_trace


def test_shared_stage_one(hard_set, hard_model):
    full = baseline_config("full")
    ctx = baseline_config("data+context")
    assert stage1_key(full) == stage1_key(ctx)
    assert stage1_key(full) != stage1_key(baseline_config("data-only"))
    first = segment_two_stage(hard_set.images[0], hard_model, ctx)
    reused = segment_two_stage(hard_set.images[0], hard_model, full, stage1=first.stage1)
    fresh = segment_two_stage(hard_set.images[0], hard_model, full)
    np.testing.assert_array_equal(reused.phi, fresh.phi)


def test_full_close_to_piecewise_constant_on_easy_phantoms(easy_set):
    scores = {m: [] for m in ("full", "piecewise-constant")}
    for k in range(len(easy_set)):
        keep = [j for j in range(len(easy_set)) if j != k]
        model = build_model(easy_set.subset(keep))
        for m in scores:
            res = segment_two_stage(easy_set.images[k], model, baseline_config(m),
                                    ground_truth=easy_set.masks[k])
            scores[m].append(res.dice)
    assert abs(np.mean(scores["full"]) - np.mean(scores["piecewise-constant"])) <= 0.02


def test_config_validation():
    with pytest.raises(ConfigError):
        EvolutionConfig(tol=1.0)
    with pytest.raises(ConfigError):
        EvolutionConfig(w_shape=-1.0)
    with pytest.raises(ConfigError):
        baseline_config("bogus")
    assert set(METHODS) == {"full", "data+context", "data+shape", "data-only", "piecewise-constant"}
