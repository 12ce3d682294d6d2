import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rayknight.sde_core import (LOCAL_TIME_PER_PUSH, GridSanityError, RngStream, TimeGrid,
                                gaussian_increments, step_reflected, step_sqrt_diffusion,
                                streams)

finite = st.floats(-5, 5, allow_nan=False)


class TestTimeGrid:
    def test_uniform_spacing(self):
        g = TimeGrid(0.125, 8)
        assert g.T == 1.0
        np.testing.assert_allclose(np.diff(g.times), 0.125)

    @pytest.mark.parametrize("dt,n", [(0.0, 4), (-0.1, 4), (math.inf, 4), (0.1, 0), (0.1, 2.5)])
    def test_rejects_bad_grid(self, dt, n):
        with pytest.raises(ValueError):
            TimeGrid(dt, n)

    def test_from_horizon_covers_T(self):
        g = TimeGrid.from_horizon(1.0, 2.0 ** -6)
        assert g.n_steps == 64
        assert g.index_of(0.5) == 32

    def test_index_outside_raises(self):
        with pytest.raises(ValueError):
            TimeGrid(0.1, 10).index_of(2.0)


class TestRngStream:
    def test_same_key_same_sequence(self):
        a = RngStream(7, 3).generator().standard_normal(100)
        b = RngStream(7, 3).generator().standard_normal(100)
        assert np.array_equal(a, b)

    def test_distinct_ids_and_channels_differ(self):
        a = RngStream(7, 3).generator().standard_normal(100)
        b = RngStream(7, 4).generator().standard_normal(100)
        c = RngStream(7, 3, channel=1).generator().standard_normal(100)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_distinct_streams_uncorrelated(self):
        # correlation of independent N(0,1) sequences has sd 1/sqrt(n)
        n = 20_000
        xs = [s.generator().standard_normal(n) for s in streams(11, 6)]
        c = np.corrcoef(xs)
        off = c[~np.eye(6, dtype=bool)]
        assert np.max(np.abs(off)) < 4.5 / math.sqrt(n)

    def test_negative_ids_rejected(self):
        with pytest.raises(ValueError):
            RngStream(1, -1)

    def test_gaussian_increments_scale(self):
        g = TimeGrid(0.01, 50_000)
        dw = gaussian_increments(RngStream(2, 0), g)
        assert dw.shape == (50_000,)
        assert abs(dw.var() / 0.01 - 1) < 0.03


class TestSqrtDiffusion:
    def test_zero_is_absorbing(self):
        assert step_sqrt_diffusion(0.0, 0.0, 1.3, 0.01) == 0.0

    def test_truncation_at_zero(self):
        assert step_sqrt_diffusion(0.01, 0.0, -1.0, 0.01) == 0.0

    def test_euler_arithmetic(self):
        # 1 + 0.5*0.1 + 2*sqrt(1)*0.2
        assert step_sqrt_diffusion(1.0, 0.5, 0.2, 0.1) == pytest.approx(1.45)

    def test_negative_level_rejected(self):
        with pytest.raises(ValueError):
            step_sqrt_diffusion(-0.1, 0.0, 0.0, 0.1)

    @given(st.floats(0, 10), finite, finite)
    def test_never_negative(self, z, drift, dw):
        assert step_sqrt_diffusion(z, drift, dw, 0.01) >= 0.0


class TestReflection:
    def test_interior_step(self):
        r = step_reflected(0.5, 0.0, 0.2, 0.01)
        assert r.new_position == pytest.approx(0.7)
        assert (r.push_lower, r.push_upper) == (0.0, 0.0)

    def test_lower_clamp(self):
        r = step_reflected(0.1, 0.0, -0.3, 0.01)
        assert r.new_position == 0.0
        assert r.push_lower == pytest.approx(0.2)
        assert r.push_upper == 0.0

    def test_upper_clamp(self):
        r = step_reflected(0.9, 0.0, 0.3, 0.01, K=1.0)
        assert r.new_position == 1.0
        assert r.push_upper == pytest.approx(0.2)
        assert r.push_lower == 0.0

    def test_overshoot_beyond_K_is_grid_error(self):
        with pytest.raises(GridSanityError):
            step_reflected(0.5, 0.0, -3.0, 0.01, K=1.0)

    def test_start_outside_rejected(self):
        with pytest.raises(ValueError):
            step_reflected(1.5, 0.0, 0.0, 0.01, K=1.0)

    def test_push_to_local_time_factor(self):
        assert LOCAL_TIME_PER_PUSH == 2.0

    @given(st.floats(0, 1), finite, st.floats(-0.9, 0.9))
    def test_skorokhod_identity(self, h, drift, dB):
        r = step_reflected(h, drift, dB, 0.01, K=1.0)
        free = h + drift * 0.01 + dB
        assert 0.0 <= r.new_position <= 1.0
        assert r.push_lower == 0.0 or r.push_upper == 0.0
        assert r.new_position == pytest.approx(free + r.push_lower - r.push_upper, abs=1e-12)

    @given(st.floats(0, 1), st.floats(0, 1), finite, st.floats(-0.9, 0.9))
    def test_monotone_in_start(self, h1, h2, drift, dB):
        lo, hi = sorted((h1, h2))
        a = step_reflected(lo, drift, dB, 0.01, K=1.0)
        b = step_reflected(hi, drift, dB, 0.01, K=1.0)
        assert a.new_position <= b.new_position
