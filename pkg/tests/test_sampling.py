import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deqpocs.errors import ConfigurationError, ShapeError
from deqpocs.rng import RandomStream
from deqpocs.sampling import (
    Measurement,
    add_noise,
    apply_sampling,
    default_acs_lines,
    make_mask,
    mask_complement_multiply,
    project_data_consistency,
    read_mk01_bytes,
    write_mk01_bytes,
)
from deqpocs.tensors import frob, gaussian_tensor


class TestMakeMask:
    def test_no_acceleration_gives_full_mask(self):
        m = make_mask("1d-calibrated", 32, 32, 1, acs=4, seed=0)
        assert m.grid.all()

    def test_2d_free_point_count(self):
        m = make_mask("2d-free", 32, 32, 4, seed=7)
        assert int(m.grid.sum()) == 256
        assert m.acs == (0, 0)

    def test_paper_scale_1d_calibrated(self):
        m = make_mask("1d-calibrated", 384, 384, 4, acs=16, seed=3)
        c0 = 384 // 2 - 8
        assert m.grid[:, c0 : c0 + 16].all()
        assert 0.225 <= m.fraction_sampled() <= 0.275

    def test_columns_fully_sampled_for_1d(self):
        m = make_mask("1d-free", 24, 24, 3, seed=1)
        col_any = m.grid.any(axis=0)
        col_all = m.grid.all(axis=0)
        assert np.array_equal(col_any, col_all)

    def test_reproducible(self):
        a = make_mask("2d-calibrated", 32, 32, 4, seed=5)
        b = make_mask("2d-calibrated", 32, 32, 4, seed=5)
        assert np.array_equal(a.grid, b.grid)

    def test_acs_infeasible(self):
        with pytest.raises(ConfigurationError):
            make_mask("1d-calibrated", 32, 32, 32, acs=8, seed=0)

    def test_acceleration_below_one_rejected(self):
        with pytest.raises(ConfigurationError):
            make_mask("1d-free", 32, 32, 0.5, seed=0)

    def test_default_acs_scaling(self):
        assert default_acs_lines(384) == 16
        assert default_acs_lines(32) == 2

    def test_free_kind_has_no_forced_center(self):
        # free draws with different seeds should not always include the center
        hits = 0
        for seed in range(12):
            m = make_mask("1d-free", 32, 32, 4, seed=seed)
            hits += int(m.grid[:, 16].all())
        assert hits < 12

    @given(st.integers(min_value=0, max_value=500))
    @settings(max_examples=15, deadline=None)
    def test_fraction_close_to_budget(self, seed):
        m = make_mask("2d-free", 32, 32, 4, seed=seed)
        assert abs(m.fraction_sampled() - 0.25) <= 0.025


class TestApplySampling:
    def test_full_mask_identity(self, rand_tensor):
        x = rand_tensor((16, 16, 3), 1)
        m = make_mask("1d-calibrated", 16, 16, 1, acs=2, seed=0)
        y = apply_sampling(x, m)
        assert np.array_equal(y.y, x)
        assert y.delta == 0.0

    def test_single_column_mask(self, rand_tensor):
        x = rand_tensor((8, 8, 3), 2)
        grid = np.zeros((8, 8), dtype=bool)
        grid[:, 4] = True
        from deqpocs.sampling import SamplingMask

        m = SamplingMask(grid=grid, kind="1d-free", accel=8.0, acs=(0, 0))
        y = apply_sampling(x, m)
        assert int(np.count_nonzero(y.y)) == 8 * 3

    def test_idempotent_and_contractive(self, rand_tensor):
        x = rand_tensor((16, 16, 2), 3)
        m = make_mask("1d-calibrated", 16, 16, 4, acs=2, seed=9)
        y = apply_sampling(x, m)
        again = apply_sampling(y.y, m)
        assert np.array_equal(again.y, y.y)
        assert frob(y.y) <= frob(x)

    def test_shape_mismatch(self, rand_tensor):
        m = make_mask("1d-free", 8, 8, 2, seed=0)
        with pytest.raises(ShapeError):
            apply_sampling(rand_tensor((9, 8, 2), 0), m)


class TestAddNoise:
    def _meas(self, seed=0):
        x = gaussian_tensor((16, 16, 2), RandomStream(seed))
        m = make_mask("1d-calibrated", 16, 16, 2, acs=2, seed=4)
        return apply_sampling(x, m)

    def test_zero_level_unchanged(self):
        y = self._meas()
        out = add_noise(y, 0.0, seed=3)
        assert out is y

    def test_exact_relative_norm(self):
        y = self._meas()
        out = add_noise(y, 0.01, seed=3)
        assert frob(out.y - y.y) / frob(y.y) == pytest.approx(0.01, rel=1e-6)
        assert out.delta == pytest.approx(0.01 * frob(y.y), rel=1e-12)

    def test_off_mask_entries_stay_zero(self):
        y = self._meas()
        for level in (0.01, 0.5, 2.0):
            out = add_noise(y, level, seed=8)
            assert np.all(out.y[~y.mask.grid] == 0)

    def test_deterministic(self):
        y = self._meas()
        a = add_noise(y, 0.05, seed=6)
        b = add_noise(y, 0.05, seed=6)
        assert np.array_equal(a.y, b.y)


class TestProjection:
    def _setup(self, seed=0):
        s = RandomStream(seed)
        x = gaussian_tensor((16, 16, 2), s)
        full = gaussian_tensor((16, 16, 2), s)
        m = make_mask("1d-calibrated", 16, 16, 4, acs=2, seed=11)
        return x, apply_sampling(full, m), m

    def test_full_mask_returns_measurement(self, rand_tensor):
        x = rand_tensor((8, 8, 2), 1)
        full = rand_tensor((8, 8, 2), 2)
        m = make_mask("1d-calibrated", 8, 8, 1, acs=2, seed=0)
        y = apply_sampling(full, m)
        assert np.array_equal(project_data_consistency(x, m, y), full)

    def test_empty_mask_returns_input(self, rand_tensor):
        from deqpocs.sampling import SamplingMask

        grid = np.zeros((8, 8), dtype=bool)
        grid[0, 0] = True  # masks must sample something; nearly-empty
        m = SamplingMask(grid=grid, kind="2d-free", accel=64.0, acs=(0, 0))
        x = rand_tensor((8, 8, 1), 3)
        y = Measurement(y=np.zeros((8, 8, 1), dtype=complex), mask=m, delta=0.0)
        out = project_data_consistency(x, m, y)
        assert np.array_equal(out[~grid], x[~grid])

    def test_idempotent_bitwise(self):
        x, y, m = self._setup(5)
        once = project_data_consistency(x, m, y)
        twice = project_data_consistency(once, m, y)
        assert np.array_equal(once, twice)

    def test_nonexpansive_on_random_pairs(self):
        _, y, m = self._setup(6)
        s = RandomStream(77)
        for _ in range(100):
            a = gaussian_tensor((16, 16, 2), s)
            b = gaussian_tensor((16, 16, 2), s)
            da = project_data_consistency(a, m, y)
            db = project_data_consistency(b, m, y)
            assert frob(da - db) <= frob(a - b) * (1 + 1e-6)

    def test_complement_multiply(self):
        x, y, m = self._setup(7)
        out = mask_complement_multiply(x, m)
        assert np.all(out[m.grid] == 0)
        assert np.array_equal(out[~m.grid], x[~m.grid])


class TestMK01:
    def test_round_trip(self):
        m = make_mask("2d-calibrated", 24, 20, 4, seed=13)
        back = read_mk01_bytes(write_mk01_bytes(m))
        assert np.array_equal(back.grid, m.grid)
        assert back.kind == m.kind
        assert back.accel == pytest.approx(m.accel)
        assert back.acs == m.acs

    def test_layout_prefix(self):
        m = make_mask("1d-free", 8, 8, 2, seed=1)
        raw = write_mk01_bytes(m)
        assert raw[:4] == b"MK01"
        assert np.frombuffer(raw[4:12], dtype="<u4").tolist() == [8, 8]
        assert len(raw) == 12 + 64 + 1 + 4 + 4
