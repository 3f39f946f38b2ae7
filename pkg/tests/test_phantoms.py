import math

import numpy as np
import pytest

from spinecarve.errors import InvalidSpec
from spinecarve.evolution import baseline_config, data_force, segment_two_stage
from spinecarve.model import build_model
from spinecarve.phantoms import (
    FAMILIES,
    PhantomSpec,
    effective_background,
    foreground_fraction_bounds,
    generate,
    overlap_coefficient,
)


def test_overlap_coefficient_examples():
    mix = [(0.5, 0.3, 0.1), (0.5, 0.7, 0.05)]
    assert overlap_coefficient(mix, mix) == pytest.approx(1.0, abs=1e-3)
    assert overlap_coefficient([(1, 0.2, 0.05)], [(1, 0.8, 0.05)]) <= 1e-6
    expected = 2 * 0.5 * math.erfc(0.5 / math.sqrt(2))
    assert expected == pytest.approx(0.6171, abs=1e-4)
    assert overlap_coefficient([(1, 0.0, 1.0)], [(1, 1.0, 1.0)]) == pytest.approx(expected, abs=1e-3)


def test_overlap_grows_with_blend():
    spec = PhantomSpec()
    values = [overlap_coefficient(spec.fg_intensity_mixture, effective_background(spec.with_changes(overlap=o)))
              for o in (0.0, 0.3, 0.6, 1.0)]
    assert values == sorted(values)
    assert values[-1] == pytest.approx(1.0, abs=1e-3)


def test_overlap_one_gives_identical_mixtures():
    spec = PhantomSpec(overlap=1.0)
    assert sorted(effective_background(spec)) == sorted(spec.fg_intensity_mixture)


@pytest.mark.parametrize("dims,family", [((40, 40), "blob-with-protrusion"), ((40, 40), "ellipse"),
                                         ((24, 24, 24), "capped-cylinder"), ((24, 24, 24), "blob-with-protrusion")])
def test_generate_shapes_and_bounds(dims, family):
    spec = PhantomSpec(dims=dims, n_shapes=5, shape_family=family, seed=3)
    ts = generate(spec)
    lo, hi = foreground_fraction_bounds(spec)
    assert len(ts) == 5 and ts.dims == dims
    for img, m in zip(ts.images, ts.masks):
        assert m.any() and not m.all()
        assert lo <= m.mean() <= hi
        assert img.min() >= 0 and img.max() <= 1
        np.testing.assert_array_equal(np.round(img * 255), img * 255)
    assert ts.ids[0] == "phantom_000"


def test_generate_is_deterministic_and_streams_are_independent():
    spec = PhantomSpec(dims=(32, 32), n_shapes=4, overlap=0.4, seed=9)
    a, b = generate(spec), generate(spec)
    for x, y in zip(a.images + a.masks, b.images + b.masks):
        np.testing.assert_array_equal(x, y)
    longer = generate(spec.with_changes(n_shapes=6))
    np.testing.assert_array_equal(longer.images[3], a.images[3])
    other = generate(spec.with_changes(seed=10))
    assert not np.array_equal(other.images[0], a.images[0])


def test_masks_cluster_spatially():
    ts = generate(PhantomSpec(dims=(64, 64), n_shapes=10))
    freq = np.mean(ts.masks, axis=0)
    # a shared core that every mask covers and a background most never touch
    assert (freq == 1).sum() > 50
    assert (freq == 0).mean() > 0.7


def test_overlap_one_makes_intensity_uninformative():
    ts = generate(PhantomSpec(dims=(64, 64), n_shapes=6, overlap=1.0, seed=1))
    model = build_model(ts.subset(range(1, 6)))
    guess = data_force(ts.images[0], model) < 0
    truth = ts.masks[0]
    balanced = 0.5 * (guess[truth].mean() + (~guess)[~truth].mean())
    assert abs(balanced - 0.5) < 0.05


def data_only_dice(overlap):
    ts = generate(PhantomSpec(dims=(48, 48), n_shapes=5, overlap=overlap, seed=4))
    model = build_model(ts.subset(range(1, 5)))
    return segment_two_stage(ts.images[0], model, baseline_config("data-only"), ground_truth=ts.masks[0]).dice


def test_data_only_dice_collapses_with_overlap():
    scores = [data_only_dice(o) for o in (0.0, 0.5, 1.0)]
    assert scores[0] >= 0.95
    assert scores[0] > scores[1] > scores[2]
    assert scores[2] < 0.5


def test_spec_validation_and_json():
    spec = PhantomSpec(dims=(16, 16), overlap=0.25, seed=7)
    assert PhantomSpec.from_json(spec.to_json()) == spec
    with pytest.raises(InvalidSpec):
        PhantomSpec.from_json('{"dims": [16, 16], "colour": 3}')
    with pytest.raises(InvalidSpec):
        PhantomSpec.from_json("not json")
    bad = [dict(overlap=1.5), dict(jitter=0.0), dict(dims=(4, 4)), dict(shape_family="cube"),
           dict(shape_family="capped-cylinder"), dict(fg_intensity_mixture=[(0.5, 0.5, 0.1)]),
           dict(bg_intensity_mixture=[(1.0, 1.2, 0.1)]), dict(n_shapes=0)]
    for changes in bad:
        with pytest.raises(InvalidSpec):
            PhantomSpec(**changes)
    assert set(FAMILIES) == {"blob-with-protrusion", "ellipse", "capped-cylinder"}
