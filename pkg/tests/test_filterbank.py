"""Filter bank construction: counts, normalization, symmetry properties."""

import math

import numpy as np
import pytest

from anonet import filterbank as fb


@pytest.mark.parametrize("family,count", [("LM", 48), ("S", 13), ("RFS", 38)])
@pytest.mark.parametrize("k", [7, 11])
class TestCounts:
    def test_size_and_shape(self, family, count, k):
        bank = fb.build_bank(family, k)
        assert len(bank) == count
        assert bank.filters.shape == (count, k, k)
        assert bank.kernel_size == k
        assert bank.family == family
        assert len(bank.metadata) == count

    def test_unit_l1(self, family, count, k):
        bank = fb.build_bank(family, k)
        l1 = np.abs(bank.filters).sum(axis=(1, 2))
        np.testing.assert_allclose(l1, 1.0, atol=1e-12)

    def test_deterministic(self, family, count, k):
        a = fb.build_bank(family, k).filters
        b = fb.build_bank(family, k).filters
        np.testing.assert_array_equal(a, b)


class TestZeroDC:
    @pytest.mark.parametrize("k", [7, 11])
    def test_schmid_dc(self, k):
        bank = fb.build_schmid(k)
        assert np.max(np.abs(bank.filters.sum(axis=(1, 2)))) < 1e-9

    @pytest.mark.parametrize("family", ["LM", "RFS"])
    def test_non_gaussian_dc(self, family):
        bank = fb.build_bank(family, 11)
        for f, m in zip(bank.filters, bank.metadata):
            if m["kind"] == "Gaussian":
                assert f.sum() > 0
            else:
                assert abs(f.sum()) < 1e-9


class TestSchmidIsotropy:
    def test_equal_radius_equal_value(self):
        # the Schmid profile depends only on the distance from center
        bank = fb.build_schmid(11)
        half = 5
        coords = np.arange(-half, half + 1, dtype=np.float64)
        y, x = np.meshgrid(coords, coords, indexing="ij")
        r = np.sqrt(x * x + y * y)
        checked = 0
        for f in bank.filters:
            flat_r = np.round(r.reshape(-1), 9)
            flat_v = f.reshape(-1)
            for rv in np.unique(flat_r):
                vals = flat_v[flat_r == rv]
                assert np.max(np.abs(vals - vals[0])) < 1e-6
                checked += len(vals) - 1
        assert checked > 1000


class TestOrientedFilters:
    def test_rfs_pi_rotation_parity(self):
        # rotating an edge filter by pi flips its sign; a bar filter is even
        for order, sign in ((1, -1.0), (2, 1.0)):
            a = fb._oriented_derivative(11, 2.0, 0.3, order)
            b = fb._oriented_derivative(11, 2.0, 0.3 + math.pi, order)
            np.testing.assert_allclose(b, sign * a, atol=1e-12)

    def test_quarter_turn_is_transpose(self):
        a = fb._oriented_derivative(11, 1.0, 0.0, 2)
        b = fb._oriented_derivative(11, 1.0, math.pi / 2.0, 2)
        np.testing.assert_allclose(b, a.T, atol=1e-12)

    def test_orientations_distinct(self):
        bank = fb.build_rfs(11)
        edge = bank.filters[:6]
        for i in range(6):
            for j in range(i + 1, 6):
                assert np.max(np.abs(edge[i] - edge[j])) > 1e-4


class TestValidation:
    def test_even_k_rejected(self):
        with pytest.raises(ValueError):
            fb.build_lm(8)

    def test_tiny_k_rejected(self):
        with pytest.raises(ValueError):
            fb.build_schmid(3)

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            fb.build_bank("GABOR", 7)

    def test_all_zero_kernel_rejected(self):
        with pytest.raises(ValueError):
            fb.normalize_filter(np.zeros((5, 5)))

    def test_constant_kernel_rejected_after_mean_removal(self):
        with pytest.raises(ValueError):
            fb.normalize_filter(np.full((5, 5), 2.0))


class TestRoundTrip:
    def test_save_load(self, tmp_path):
        bank = fb.build_lm(7)
        path = tmp_path / "lm7.bank"
        fb.save_bank(bank, path)
        back = fb.load_bank(path)
        assert back.family == "LM" and back.kernel_size == 7
        np.testing.assert_allclose(back.filters, bank.filters, atol=1e-7)
        assert back.metadata[0]["kind"] == bank.metadata[0]["kind"]

    def test_wrong_type_rejected(self, tmp_path):
        from anonet.serial import write_blob
        path = tmp_path / "other.blob"
        write_blob(path, {"type": "weights"}, [("x", np.zeros(2, dtype=np.float32))])
        with pytest.raises(ValueError):
            fb.load_bank(path)
