from __future__ import annotations

import numpy as np
import pytest

from app.application.services.metrics_service import (
    REGION_FULL,
    REGION_INPUT,
    REGION_OVERLAP,
    REGION_TARGET_ONLY,
    REGION_VOID,
    MetricsService,
    crps_mc,
    masked_mae,
    median_sensor_spacing,
    persistence_baseline,
    preinterp_nn,
    preinterp_rbf,
    zero_field_baseline,
)
from app.core.exceptions import ValidationException


def brute_force_crps(members: np.ndarray, target: np.ndarray, m_o: np.ndarray) -> float:
    k = members.shape[0]
    values = []
    for r, c in zip(*np.nonzero(m_o)):
        skill = sum(abs(members[a, r, c] - target[r, c]) for a in range(k)) / k
        spread = 0.0
        for a in range(k):
            for b in range(k):
                if a != b:
                    spread += abs(members[a, r, c] - members[b, r, c])
        values.append(skill - spread / (2 * k * (k - 1)))
    return float(np.mean(values))


class TestCRPS:
    def test_hand_case(self):
        members = np.array([0.0, 2.0]).reshape(2, 1, 1)
        assert crps_mc(members, np.ones((1, 1)), np.ones((1, 1), dtype=bool)) == 0.0

    def test_matches_double_loop(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            k = int(rng.integers(2, 9))
            side = int(rng.integers(1, 5))
            members = rng.standard_normal((k, side, side))
            target = rng.standard_normal((side, side))
            m_o = rng.random((side, side)) < 0.6
            m_o.flat[0] = True
            assert abs(crps_mc(members, target, m_o) - brute_force_crps(members, target, m_o)) < 1e-12

    def test_single_member_is_masked_mae(self, rng):
        member = rng.standard_normal((5, 5))
        target = rng.standard_normal((5, 5))
        m_o = rng.random((5, 5)) < 0.5
        m_o[0, 0] = True
        assert crps_mc(member[None], target, m_o) == masked_mae(member, target, m_o)

    def test_translation_and_scale(self, rng):
        members = rng.standard_normal((6, 4, 4))
        target = rng.standard_normal((4, 4))
        m_o = np.ones((4, 4), dtype=bool)
        base = crps_mc(members, target, m_o)
        assert crps_mc(members + 3.5, target + 3.5, m_o) == pytest.approx(base, rel=1e-12)
        assert crps_mc(2.5 * members, 2.5 * target, m_o) == pytest.approx(2.5 * base, rel=1e-12)

    def test_empty_target_mask(self, rng):
        with pytest.raises(ValidationException):
            crps_mc(rng.standard_normal((2, 3, 3)), np.zeros((3, 3)), np.zeros((3, 3), dtype=bool))

    @pytest.mark.slow
    def test_true_process_beats_shifted_ensemble(self):
        rng = np.random.default_rng(3)
        m_o = np.ones((4, 4), dtype=bool)
        sigma, honest, shifted = 1.5, [], []
        for _ in range(500):
            target = sigma * rng.standard_normal((4, 4))
            members = sigma * rng.standard_normal((10, 4, 4))
            honest.append(crps_mc(members, target, m_o))
            shifted.append(crps_mc(members + 2.0 * sigma, target, m_o))
        assert np.mean(honest) <= np.mean(shifted)


class TestPreInterpolation:
    def test_nearest_neighbour(self):
        x_c = np.zeros((3, 5))
        m_i = np.zeros((3, 5), dtype=bool)
        m_i[1, 0] = m_i[1, 4] = True
        x_c[1, 0], x_c[1, 4] = -1.0, 1.0
        out = preinterp_nn(x_c, m_i)
        assert out[1, 0] == -1.0 and out[1, 4] == 1.0
        assert out[0, 1] == -1.0 and out[2, 3] == 1.0
        assert out[1, 2] == -1.0  # equidistant: lowest linear index wins

    def test_rbf_recovers_kernel_in_span(self):
        n, length = 16, 2.0
        m_i = np.zeros((n, n), dtype=bool)
        for r, c in [(2, 2), (2, 12), (8, 7), (13, 3), (13, 13)]:
            m_i[r, c] = True
        rows, cols = np.indices((n, n))
        field = np.exp(-(((rows - 8) ** 2 + (cols - 7) ** 2) / length**2))
        out = preinterp_rbf(field * m_i, m_i, shape_param=length)
        off = ~m_i
        assert np.sqrt(np.mean((out[off] - field[off]) ** 2)) < 1e-6

    def test_rbf_interpolates_observed_values(self, rng):
        m_i = rng.random((8, 8)) < 0.2
        m_i[0, 0] = True
        x_c = rng.standard_normal((8, 8)) * m_i
        out = preinterp_rbf(x_c, m_i)
        np.testing.assert_allclose(out[m_i], x_c[m_i], atol=1e-6)

    def test_spacing(self):
        m_i = np.zeros((6, 6), dtype=bool)
        m_i[0, 0] = m_i[0, 3] = True
        assert median_sensor_spacing(m_i) == 3.0

    def test_empty_conditioning(self):
        with pytest.raises(ValidationException):
            preinterp_nn(np.zeros((3, 3)), np.zeros((3, 3), dtype=bool))

    def test_baselines(self):
        m_i = np.zeros((2, 2), dtype=bool)
        m_i[0, 0] = True
        x_c = np.array([[4.0, 0.0], [0.0, 0.0]])
        np.testing.assert_array_equal(persistence_baseline(x_c, m_i), np.full((2, 2), 4.0))
        np.testing.assert_array_equal(zero_field_baseline((2, 2), 1.5), np.full((2, 2), 1.5))


class TestReport:
    @staticmethod
    def _case(rng, n=3, k=4):
        members = [rng.standard_normal((k, 6, 6)) for _ in range(n)]
        targets = [rng.standard_normal((6, 6)) for _ in range(n)]
        m_i = [rng.random((6, 6)) < 0.3 for _ in range(n)]
        for mi in m_i:
            mi[0, 0], mi[5, 5] = True, False
        m_o = [(rng.random((6, 6)) < 0.3) & ~mi for mi in m_i]
        for mo in m_o:
            mo[5, 5] = True
        return members, targets, m_i, m_o

    def test_dense_regions_partition_the_grid(self, rng):
        members, targets, m_i, m_o = self._case(rng)
        report = MetricsService().crps_report(members, targets, m_i, m_o, dense_truth=True)
        regions = report.regions
        assert set(regions) <= {REGION_INPUT, REGION_TARGET_ONLY, REGION_VOID, REGION_FULL}
        parts = [regions[name] for name in (REGION_INPUT, REGION_TARGET_ONLY, REGION_VOID)]
        assert sum(p.pixels for p in parts) == regions[REGION_FULL].pixels == 3 * 36
        pooled = sum(p.crps * p.pixels for p in parts) / regions[REGION_FULL].pixels
        assert pooled == pytest.approx(regions[REGION_FULL].crps, rel=1e-12)

    def test_per_instance_and_aggregate(self, rng):
        members, targets, m_i, m_o = self._case(rng)
        report = MetricsService().crps_report(members, targets, m_i, m_o)
        expected = [crps_mc(e, t, mo) for e, t, mo in zip(members, targets, m_o)]
        assert report.per_instance == expected
        assert report.aggregate == pytest.approx(np.mean(expected))
        assert report.pixel_counts == [int(mo.sum()) for mo in m_o]
        assert REGION_FULL not in report.regions
        assert REGION_OVERLAP not in report.regions  # disjoint masks

    def test_full_grid_needs_dense_truth(self, rng):
        with pytest.raises(ValidationException):
            MetricsService.full_grid_crps(rng.standard_normal((2, 3, 3)), np.zeros((3, 3)), dense_truth=False)

    def test_mixed_ensemble_sizes(self, rng):
        members, targets, m_i, m_o = self._case(rng)
        members[1] = members[1][:2]
        with pytest.raises(ValidationException):
            MetricsService().crps_report(members, targets, m_i, m_o)
