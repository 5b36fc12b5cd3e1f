from __future__ import annotations

import numpy as np
import pytest

from app.application.services.mask_service import MaskService, pixel_budget, restrict
from app.core.exceptions import MaskPlacementException, ShapeMismatchException, ValidationException
from app.domain.models.masks import Pattern, Regime, ScenarioSpec


class TestBudgets:
    @pytest.mark.parametrize("density,expected", [(0.04, 163), (0.10, 409), (0.40, 1638)])
    def test_random_budget_uses_floor(self, density, expected):
        assert pixel_budget(density, 64) == expected

    @pytest.mark.parametrize("n_blocks,expected", [(2, 128), (6, 384), (26, 1664)])
    def test_block_budget(self, n_blocks, expected):
        spec = ScenarioSpec(pattern=Pattern.BLOCK, n_blocks=n_blocks)
        assert MaskService(spec, 64).budget() == expected

    def test_density_out_of_range(self):
        with pytest.raises(ValidationException):
            pixel_budget(0.0, 64)


class TestRandomPairs:
    def test_disjoint_split(self):
        pair = MaskService(ScenarioSpec(density=0.10), 64).make_pair(0)
        assert pair.counts() == {"m_i": 205, "m_o": 204, "overlap": 0, "union": 409}

    def test_overlap_fraction(self):
        pair = MaskService(ScenarioSpec(density=0.10, overlap_fraction=0.3), 64).make_pair(0)
        counts = pair.counts()
        assert counts["overlap"] == 123  # round-half-up(0.3 * 409)
        assert counts["union"] == 409

    def test_global_regime_reuses_layout(self):
        service = MaskService(ScenarioSpec(density=0.1, regime=Regime.GLOBAL), 32)
        first = service.make_pair(0)
        for pair in service.make_pairs(100):
            np.testing.assert_array_equal(pair.m_i, first.m_i)
            np.testing.assert_array_equal(pair.m_o, first.m_o)

    def test_instance_regime_is_distinct_and_stable(self):
        service = MaskService(ScenarioSpec(density=0.1, regime=Regime.INSTANCE), 32)
        pairs = service.make_pairs(100)
        layouts = {pair.m_i.tobytes() + pair.m_o.tobytes() for pair in pairs}
        assert len(layouts) == 100
        np.testing.assert_array_equal(service.make_pair(17).m_i, pairs[17].m_i)

    def test_too_few_pixels(self):
        with pytest.raises(ValidationException):
            MaskService(ScenarioSpec(density=0.01), 8)


class TestBlockPairs:
    @pytest.mark.parametrize("n_blocks", [2, 6])
    def test_blocks_split_evenly_without_overlap(self, n_blocks):
        pair = MaskService(ScenarioSpec(pattern=Pattern.BLOCK, n_blocks=n_blocks), 64).make_pair(3)
        half = n_blocks // 2 * 64
        assert pair.counts() == {"m_i": half, "m_o": half, "overlap": 0, "union": n_blocks * 64}

    def test_odd_block_count_rejected(self):
        with pytest.raises(ValueError):
            ScenarioSpec(pattern=Pattern.BLOCK, n_blocks=3)

    def test_blocks_must_fit(self):
        with pytest.raises(ValidationException):
            MaskService(ScenarioSpec(pattern=Pattern.BLOCK, n_blocks=2), 4)

    def test_placement_failure_reports_anchors(self):
        spec = ScenarioSpec(pattern=Pattern.BLOCK, n_blocks=64, max_retries=5)
        with pytest.raises(MaskPlacementException) as info:
            MaskService(spec, 64).make_pair(0)
        assert info.value.attempted


def test_restrict_zeroes_unobserved(rng):
    field = rng.standard_normal((4, 4))
    mask = np.zeros((4, 4), dtype=bool)
    mask[1, 2] = True
    out = restrict(field, mask)
    assert out[1, 2] == field[1, 2]
    assert np.count_nonzero(out) == 1
    with pytest.raises(ShapeMismatchException):
        restrict(field, mask[:2])
