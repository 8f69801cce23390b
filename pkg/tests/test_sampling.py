import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from macrecon.errors import InfeasibleRateError, ShapeError
from macrecon.fourier import forward_dft
from macrecon.sampling import (
    AcquisitionContext,
    SamplingMask,
    encode_context,
    make_cartesian_mask,
    make_gaussian_mask,
    make_mask,
    mask_for_context,
    mirror_index,
    undersample,
)

RATES = [2, 3.3, 4, 5, 8]


def count_rows(grid):
    return int(grid.any(axis=1).sum())


class TestCartesian:
    def test_r1_all_ones(self):
        assert make_cartesian_mask(64, 64, 1.0).grid.all()

    def test_row_count_example(self):
        m = make_cartesian_mask(128, 128, 4, 0.08, seed=3)
        assert count_rows(m.grid) == 32
        c = 64
        # ceil(0.08 * 128) = 11 central rows, so the 10-row central band is certainly covered
        assert m.grid[c - 5 : c + 6].all()
        assert m.grid[c - 5 : c + 5].all()

    def test_rows_fully_sampled(self):
        g = make_cartesian_mask(64, 48, 3.3, seed=1).grid
        rows = g.any(axis=1)
        assert g[rows].all() and not g[~rows].any()

    def test_determinism(self):
        a = make_cartesian_mask(128, 128, 4, seed=5).grid
        b = make_cartesian_mask(128, 128, 4, seed=5).grid
        c = make_cartesian_mask(128, 128, 4, seed=6).grid
        np.testing.assert_array_equal(a, b)
        assert (a != c).any() and count_rows(a) == count_rows(c)

    def test_infeasible(self):
        with pytest.raises(InfeasibleRateError):
            make_cartesian_mask(16, 16, 8, 0.1)
        with pytest.raises(InfeasibleRateError):
            make_cartesian_mask(64, 64, 4, 0.3)
        with pytest.raises(InfeasibleRateError):
            make_cartesian_mask(64, 64, 0.5)


class TestGaussian:
    def test_r1_all_ones(self):
        assert make_gaussian_mask(64, 64, 1.0).grid.all()

    def test_count_example(self):
        assert make_gaussian_mask(128, 128, 5, seed=2).grid.sum() == round(16384 / 5) == 3277

    def test_central_disc_sampled(self):
        h = 64
        g = make_gaussian_mask(h, h, 8, 0.04, seed=0).grid
        yy, xx = np.mgrid[:h, :h] - h // 2
        disc = yy**2 + xx**2 <= 0.04 * h * h / math.pi
        assert g[disc].all()

    def test_concentrated_near_centre(self):
        h = 128
        g = make_gaussian_mask(h, h, 4, seed=11).grid
        yy, xx = np.mgrid[:h, :h] - h // 2
        rad = np.hypot(yy, xx)
        n = int(g.sum())
        r = np.random.default_rng(0)
        uniform = np.mean([rad.ravel()[r.choice(h * h, n, replace=False)].mean() for _ in range(50)])
        assert rad[g == 1].mean() < uniform

    def test_determinism(self):
        np.testing.assert_array_equal(make_gaussian_mask(64, 64, 4, seed=9).grid, make_gaussian_mask(64, 64, 4, seed=9).grid)
        assert (make_gaussian_mask(64, 64, 4, seed=9).grid != make_gaussian_mask(64, 64, 4, seed=10).grid).any()

    def test_infeasible(self):
        with pytest.raises(InfeasibleRateError):
            make_gaussian_mask(64, 64, 4, 0.5)


@pytest.mark.parametrize("pattern", ["cartesian", "gaussian"])
@pytest.mark.parametrize("r", RATES)
def test_rates_within_five_percent(pattern, r):
    for seed in range(100):
        m = make_mask(pattern, 128, 128, r, seed=seed)
        assert abs(m.achieved_acceleration - r) / r < 0.05


@pytest.mark.parametrize("pattern", ["cartesian", "gaussian"])
@pytest.mark.parametrize("shape", [(64, 64), (65, 63), (96, 80)])
def test_binary_and_conjugate_symmetric(pattern, shape):
    h, w = shape
    g = make_mask(pattern, h, w, 4, seed=4).grid
    assert set(np.unique(g)) <= {0.0, 1.0}
    np.testing.assert_array_equal(g, g[np.ix_(mirror_index(np.arange(h), h), mirror_index(np.arange(w), w))])


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), r=st.floats(1.5, 8), pattern=st.sampled_from(["cartesian", "gaussian"]))
def test_mask_pure_function(seed, r, pattern):
    np.testing.assert_array_equal(make_mask(pattern, 64, 64, r, seed=seed).grid, make_mask(pattern, 64, 64, r, seed=seed).grid)


def test_mask_persistence(tmp_path):
    m = make_mask("cartesian", 32, 32, 4, seed=7)
    m.save(tmp_path / "m.mact")
    meta = json.loads((tmp_path / "m.json").read_text())
    assert meta == {"type": "cartesian", "R": 4.0, "center_fraction": 0.08, "seed": 7, "phase_axis": 0}
    back = SamplingMask.load(tmp_path / "m.mact")
    np.testing.assert_array_equal(back.grid, m.grid)
    assert back.metadata() == m.metadata()


class TestUndersample:
    def test_full_mask_reproduces_image(self, rng):
        x = rng.random((16, 16))
        _, xu = undersample(x, np.ones((16, 16)))
        assert np.max(np.abs(xu.data - x)) < 1e-10

    def test_empty_mask(self, rng):
        y, xu = undersample(rng.random((8, 8)), np.zeros((8, 8)))
        assert not y.re.any() and not y.im.any() and not xu.data.any()

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**31), pattern=st.sampled_from(["cartesian", "gaussian"]), r=st.floats(2, 6))
    def test_consistent_on_mask(self, seed, pattern, r):
        rn = np.random.default_rng(seed)
        x = rn.random((64, 64))
        m = make_mask(pattern, 64, 64, r, seed=seed)
        y, xu = undersample(x, m)
        k = forward_dft(xu.data).complex()
        on = m.grid == 1
        assert np.max(np.abs(k[on] - y.complex()[on])) < 1e-10
        assert not y.re[~on].any() and not y.im[~on].any()

    def test_batch_broadcast(self, rng):
        x = rng.random((3, 1, 16, 16))
        m = make_mask("gaussian", 16, 16, 2, seed=0)
        y, xu = undersample(x, m)
        for i in range(3):
            np.testing.assert_allclose(xu.data[i, 0], undersample(x[i, 0], m)[1].data, atol=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            undersample(np.zeros((8, 8)), np.ones((8, 9)))


class TestContext:
    def test_pattern_encoding(self):
        np.testing.assert_array_equal(encode_context(AcquisitionContext(4, "gaussian")).data, [4.0, 2.0])
        np.testing.assert_array_equal(encode_context(AcquisitionContext(5, "cartesian")).data, [5.0, 1.0])

    def test_single_element(self):
        np.testing.assert_array_equal(encode_context(AcquisitionContext(3.3, encoding="r")).data, [3.3])

    def test_study_encoding(self):
        np.testing.assert_array_equal(encode_context(AcquisitionContext(2, study="brain", encoding="study")).data, [2.0, 2.0])

    @given(r=st.floats(1, 16), enc=st.sampled_from(["r", "pattern", "study"]))
    def test_lengths_and_codes(self, r, enc):
        v = encode_context(AcquisitionContext(r, encoding=enc)).data
        assert len(v) in (1, 2) and v[0] == r
        if len(v) == 2:
            assert v[1] in (1.0, 2.0)

    def test_invalid(self):
        with pytest.raises(ValueError):
            AcquisitionContext(0.5)
        with pytest.raises(ValueError):
            AcquisitionContext(2, pattern="radial")

    def test_context_masks_depend_on_pattern_and_rate(self):
        a = mask_for_context(AcquisitionContext(4, "gaussian"), 32, 32)
        b = mask_for_context(AcquisitionContext(4, "gaussian", study="brain"), 32, 32)
        c = mask_for_context(AcquisitionContext(4, "cartesian"), 32, 32)
        np.testing.assert_array_equal(a.grid, b.grid)
        assert a.pattern == "gaussian" and c.pattern == "cartesian"
