import numpy as np
import pytest

from hsimae import masking
from hsimae import tensorcore as tc


class TestSampling:
    def test_counts_4x4x4(self):
        plan = masking.sample_mask_plan(4, 4, 4, 0.5, 0.5, seed=0)
        assert len(plan.masked_spatial) == 8
        assert len(plan.masked_spectral) == 2
        assert len(plan.visible) == 16
        assert len(plan.visible) + len(plan.masked_tokens) == 64

    def test_zero_ratios_all_visible(self):
        plan = masking.sample_mask_plan(3, 3, 3, 0.0, 0.0, seed=1)
        assert len(plan.visible) == 27
        assert not plan.masked_tokens

    def test_determinism_and_seed_variation(self):
        a = masking.sample_mask_plan(4, 4, 4, 0.5, 0.5, seed=7)
        b = masking.sample_mask_plan(4, 4, 4, 0.5, 0.5, seed=7)
        assert a.masked_spatial == b.masked_spatial
        assert a.masked_spectral == b.masked_spectral
        assert a.visible == b.visible
        distinct = {
            (frozenset(masking.sample_mask_plan(4, 4, 4, 0.5, 0.5, seed=s).masked_spatial))
            for s in range(100)}
        assert len(distinct) > 90

    def test_visibility_rule(self):
        plan = masking.sample_mask_plan(4, 3, 5, 0.5, 0.4, seed=3)
        for p in range(4):
            for q in range(3):
                for k in range(5):
                    vis = (p, q) not in plan.masked_spatial and \
                        k not in plan.masked_spectral
                    assert ((p, q, k) in plan.visible) == vis

    def test_nothing_visible(self):
        with pytest.raises(masking.NothingVisibleError):
            masking.sample_mask_plan(2, 2, 2, 1.0, 0.5, seed=0)

    def test_bad_ratio(self):
        with pytest.raises(ValueError):
            masking.sample_mask_plan(2, 2, 2, 1.5, 0.5, seed=0)

    def test_round_half_up(self):
        assert masking.round_half_up(2.5) == 3
        assert masking.round_half_up(2.4) == 2
        assert masking.round_half_up(0.5) == 1

    def test_uniformity_over_seeds(self):
        counts = np.zeros((4, 4))
        n = 1000
        for s in range(n):
            plan = masking.sample_mask_plan(4, 4, 1, 0.5, 0.0, seed=s)
            for (p, q) in plan.masked_spatial:
                counts[p, q] += 1
        freq = counts / n
        assert np.all(np.abs(freq - 0.5) < 0.05)


class TestApplyMask:
    def test_no_mask_is_identity(self):
        plan = masking.sample_mask_plan(2, 2, 2, 0.0, 0.0, seed=0)
        emb = tc.Tensor(np.arange(8.0 * 3).reshape(8, 3))
        rows, ids = masking.apply_mask(emb, plan)
        np.testing.assert_array_equal(rows.data, emb.data)
        np.testing.assert_array_equal(ids, np.arange(8))

    def test_row_count(self):
        plan = masking.sample_mask_plan(4, 4, 4, 0.5, 0.5, seed=5)
        emb = tc.Tensor(np.random.default_rng(0).normal(size=(64, 3)))
        rows, _ = masking.apply_mask(emb, plan)
        assert rows.data.shape == (len(plan.visible), 3)

    def test_scatter_gather_inverse_on_visible(self):
        plan = masking.sample_mask_plan(4, 4, 4, 0.5, 0.5, seed=5)
        emb = np.random.default_rng(1).normal(size=(64, 3))
        rows, ids = masking.apply_mask(tc.Tensor(emb), plan)
        restored = np.zeros_like(emb)
        restored[ids] = rows.data
        np.testing.assert_array_equal(restored[ids], emb[ids])

    def test_extent_mismatch(self):
        plan = masking.sample_mask_plan(2, 2, 2, 0.0, 0.0, seed=0)
        with pytest.raises(ValueError):
            masking.apply_mask(tc.Tensor(np.zeros((7, 3))), plan)


class TestVoxelMask:
    def test_counts_36_cube(self):
        plan = masking.sample_mask_plan(4, 4, 4, 0.5, 0.5, seed=2)
        m = masking.voxel_mask(plan, 36, 36, 32)
        assert m.sum() == (64 - 16) * 648
        assert m.sum() / (4 * 4 * 4 * 648) == 0.75

    def test_empty(self):
        plan = masking.sample_mask_plan(3, 3, 3, 0.0, 0.0, seed=0)
        m = masking.voxel_mask(plan, 27, 27, 24)
        assert not m.any()

    def test_brute_force_scan(self):
        plan = masking.sample_mask_plan(3, 3, 3, 0.5, 0.5, seed=4)
        m = masking.voxel_mask(plan, 27, 27, 24)
        for p in range(3):
            for q in range(3):
                for k in range(3):
                    block = m[9 * p:9 * (p + 1), 9 * q:9 * (q + 1),
                              8 * k:8 * (k + 1)]
                    if (p, q, k) in plan.masked_tokens:
                        assert block.all()
                    else:
                        assert not block.any()

    def test_cropped_voxels_excluded(self):
        plan = masking.sample_mask_plan(2, 1, 1, 0.5, 0.0, seed=0)
        m = masking.voxel_mask(plan, 19, 10, 9)
        assert not m[18, :, :].any()
        assert not m[:, 9, :].any()
        assert not m[:, :, 8].any()


def test_plan_json_round_trip():
    plan = masking.sample_mask_plan(4, 3, 5, 0.5, 0.4, seed=11)
    back = masking.MaskPlan.from_json(plan.to_json())
    assert back.masked_spatial == plan.masked_spatial
    assert back.masked_spectral == plan.masked_spectral
    assert back.visible == plan.visible
    assert back.seed == plan.seed


def test_derive_seed_stable_and_distinct():
    a = masking.derive_seed(42, "epoch", 0, "step", 1)
    assert a == masking.derive_seed(42, "epoch", 0, "step", 1)
    assert a != masking.derive_seed(42, "epoch", 0, "step", 2)
    assert 0 <= a < 2 ** 64
