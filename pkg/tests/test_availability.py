import numpy as np
import pytest

from modkd import autodiff as ad
from modkd.availability import AvailabilityMask, all_combinations, generate_missing, sample_mask
from modkd.backbone import FeatureBundle

from conftest import random_bundle


class TestMask:
    def test_rejects_all_missing(self):
        with pytest.raises(ValueError, match="at least one"):
            AvailabilityMask(4, frozenset({1, 2, 3, 4}))

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            AvailabilityMask(4, frozenset({0}))
        with pytest.raises(ValueError, match="out of range"):
            AvailabilityMask(4, frozenset({5}))

    def test_bitstring_semantics(self):
        mask = AvailabilityMask(4, frozenset({2, 3}))
        assert mask.to_bitstring() == "1001"  # 1 = available
        assert mask.available == (1, 4)
        assert AvailabilityMask.from_bitstring("1001") == mask
        with pytest.raises(ValueError):
            AvailabilityMask.from_bitstring("10x1")
        with pytest.raises(ValueError):
            AvailabilityMask.from_bitstring("")

    def test_only_helper(self):
        mask = AvailabilityMask.only(4, 3)
        assert mask.available == (3,)
        assert mask.to_bitstring() == "0010"

    def test_all_combinations(self):
        combos = all_combinations(2)
        assert [m.to_bitstring() for m in combos] == ["10", "01", "11"]
        assert len(all_combinations(4)) == 15


class TestSampler:
    def test_support_n2(self):
        rng = np.random.default_rng(0)
        seen = {sample_mask(2, rng).missing for _ in range(200)}
        assert seen == {frozenset(), frozenset({1}), frozenset({2})}

    def test_never_drops_everything(self):
        rng = np.random.default_rng(1)
        for _ in range(2000):
            assert len(sample_mask(4, rng).missing) < 4

    def test_drop_count_uniform(self):
        rng = np.random.default_rng(2)
        counts = np.zeros(4)
        n = 40000
        for _ in range(n):
            counts[len(sample_mask(4, rng).missing)] += 1
        freq = counts / n
        assert np.all(np.abs(freq - 0.25) < 0.02)

    def test_subsets_uniform_within_count(self):
        rng = np.random.default_rng(3)
        hits = {}
        n = 30000
        for _ in range(n):
            m = sample_mask(4, rng).missing
            if len(m) == 2:
                hits[m] = hits.get(m, 0) + 1
        freqs = np.array(list(hits.values())) / sum(hits.values())
        assert len(hits) == 6
        assert np.all(np.abs(freqs - 1 / 6) < 0.02)

    def test_requires_two_modalities(self):
        with pytest.raises(ValueError):
            sample_mask(1, np.random.default_rng(0))


class TestGenerateMissing:
    def test_hand_example(self):
        bundle = FeatureBundle(
            n_modalities=4,
            bottleneck=[ad.Tensor(np.array(v, float)) for v in ([1, 2], [3, 4], [5, 6], [0, 0])],
        )
        bundle.bottleneck[3] = None
        out = generate_missing(bundle, AvailabilityMask(4, frozenset({4})))
        assert np.array_equal(out.bottleneck[3].data, [3.0, 4.0])

    def test_empty_missing_returns_same_bundle(self):
        rng = np.random.default_rng(4)
        bundle = random_bundle(rng, 3, depth=1)
        out = generate_missing(bundle, AvailabilityMask.none_missing(3))
        assert out is bundle

    def test_single_available_broadcast(self):
        rng = np.random.default_rng(5)
        bundle = random_bundle(rng, 4)
        for i in (1, 2, 3):
            bundle.bottleneck[i] = None
        out = generate_missing(bundle, AvailabilityMask(4, frozenset({2, 3, 4})))
        for i in (1, 2, 3):
            assert np.array_equal(out.bottleneck[i].data, bundle.bottleneck[0].data)

    def test_mean_property_and_idempotence(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            n = int(rng.integers(2, 5))
            bundle = random_bundle(rng, n, depth=int(rng.integers(0, 3)))
            c = int(rng.integers(1, n))
            missing = frozenset(int(i) + 1 for i in rng.choice(n, size=c, replace=False))
            mask = AvailabilityMask(n, missing)
            avail = [i - 1 for i in mask.available]
            out = generate_missing(bundle, mask)
            expected = np.mean([bundle.bottleneck[i].data for i in avail], axis=0)
            for i in missing:
                assert np.abs(out.bottleneck[i - 1].data - expected).max() < 1e-7
            for stage_in, stage_out in zip(bundle.skips, out.skips):
                exp_stage = np.mean([stage_in[i].data for i in avail], axis=0)
                for i in missing:
                    assert np.abs(stage_out[i - 1].data - exp_stage).max() < 1e-7
            twice = generate_missing(out, mask)
            for a, b in zip(out.bottleneck, twice.bottleneck):
                assert np.array_equal(a.data, b.data)

    def test_available_slots_untouched(self):
        rng = np.random.default_rng(7)
        bundle = random_bundle(rng, 3, depth=2)
        mask = AvailabilityMask(3, frozenset({2}))
        out = generate_missing(bundle, mask)
        for i in (0, 2):
            assert out.bottleneck[i] is bundle.bottleneck[i]
            for s in range(2):
                assert out.skips[s][i] is bundle.skips[s][i]

    def test_unfilled_available_slot_rejected(self):
        rng = np.random.default_rng(8)
        bundle = random_bundle(rng, 3)
        bundle.bottleneck[0] = None
        with pytest.raises(ValueError, match="unfilled"):
            generate_missing(bundle, AvailabilityMask(3, frozenset({2})))

    def test_gradient_flows_through_mean(self):
        a = ad.Tensor(np.array([1.0, 2.0]), requires_grad=True)
        b = ad.Tensor(np.array([3.0, 4.0]), requires_grad=True)
        bundle = FeatureBundle(n_modalities=3, bottleneck=[a, b, None])
        out = generate_missing(bundle, AvailabilityMask(3, frozenset({3})))
        ad.ssum(out.bottleneck[2]).backward()
        assert np.allclose(a.grad, [0.5, 0.5])
        assert np.allclose(b.grad, [0.5, 0.5])
