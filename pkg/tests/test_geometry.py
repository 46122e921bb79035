import json
import math

import numpy as np
import pytest

from gmdiff.geometry import (
    PackingConfig,
    encoder_sigma,
    load_packing,
    min_pair_sq_dist,
    pack_sphere,
    packing_energy,
    perturb,
    save_packing,
)


def brute_force_energy(means):
    """Independent pairwise-loop oracle for the squared-distance sum."""
    total = 0.0
    K = len(means)
    for i in range(K):
        for j in range(i + 1, K):
            total += sum((means[i][c] - means[j][c]) ** 2 for c in range(len(means[i])))
    return total


class TestPackingEnergy:
    def test_antipodal_pair(self):
        assert packing_energy(np.array([[1.0, 0.0], [-1.0, 0.0]])) == pytest.approx(4.0)

    def test_equilateral_triangle(self):
        angles = np.array([0.0, 2 * np.pi / 3, 4 * np.pi / 3])
        means = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        assert packing_energy(means) == pytest.approx(9.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_pairwise_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        means = rng.standard_normal((4, 3))
        means /= np.linalg.norm(means, axis=1, keepdims=True)
        assert packing_energy(means) == pytest.approx(brute_force_energy(means), abs=1e-12)

    def test_rejects_single_mean(self):
        with pytest.raises(ValueError):
            packing_energy(np.array([[1.0, 0.0]]))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            packing_energy(np.array([[1.0, 0.0], [np.nan, 0.0]]))


class _HalfRng:
    """Stub generator whose random() always returns 0.5 (so eps = 0.5)."""

    def random(self, n):
        return np.full(n, 0.5)


class TestPerturb:
    def test_eps_half_leaves_mean_unchanged(self):
        means = np.eye(3)
        out = perturb(means, 1, _HalfRng())
        np.testing.assert_array_equal(out, means)

    def test_result_has_unit_norm(self):
        rng = np.random.default_rng(0)
        means = np.eye(4)
        out = perturb(means, 2, rng)
        assert np.linalg.norm(out[2]) == pytest.approx(1.0, abs=1e-12)

    def test_only_selected_index_changes(self):
        rng = np.random.default_rng(1)
        means = np.eye(5)
        out = perturb(means, 3, rng)
        for i in range(5):
            if i == 3:
                continue
            assert out[i] is not means[i]
            assert (out[i] == means[i]).all()  # bitwise identical

    def test_index_out_of_range(self):
        with pytest.raises(ValueError):
            perturb(np.eye(3), 3, np.random.default_rng(0))


class TestPackSphere:
    def test_k2_near_antipodal(self):
        res = pack_sphere(PackingConfig(2, 2, rng_seed=0))
        assert res.min_pair_sq_dist >= 3.96

    def test_k3_near_triangle(self):
        res = pack_sphere(PackingConfig(3, 2, rng_seed=0))
        assert res.min_pair_sq_dist >= 0.95 * 3.0

    def test_unit_norms(self):
        res = pack_sphere(PackingConfig(5, 4, rng_seed=2))
        np.testing.assert_allclose(np.linalg.norm(res.means, axis=1), 1.0, atol=1e-9)

    def test_reproducible_bitwise(self):
        cfg = PackingConfig(4, 3, rng_seed=42)
        a, b = pack_sphere(cfg), pack_sphere(cfg)
        assert (a.means == b.means).all()
        assert a.min_pair_sq_dist == b.min_pair_sq_dist
        assert a.sigma == b.sigma

    def test_sigma_matches_encoder_sigma(self):
        res = pack_sphere(PackingConfig(4, 4, rng_seed=5))
        assert res.sigma == pytest.approx(encoder_sigma(res.min_pair_sq_dist, 4, 4))

    @pytest.mark.slow
    def test_monotone_improvement_k8_d8(self):
        """Final separation beats the random initialization in >= 95% of 100 runs."""
        wins = 0
        for seed in range(100):
            cfg = PackingConfig(8, 8, rng_seed=seed, max_steps=3000)
            rng = np.random.default_rng(seed)
            init = rng.standard_normal((8, 8))
            init /= np.linalg.norm(init, axis=1, keepdims=True)
            res = pack_sphere(cfg)
            wins += res.min_pair_sq_dist >= min_pair_sq_dist(init)
        assert wins >= 95

    @pytest.mark.slow
    def test_k21_d18_evens_out_separation(self):
        """The annealer shrinks the spread of pairwise distances vs random init."""
        cfg = PackingConfig(21, 18, rng_seed=11)
        rng = np.random.default_rng(11)
        init = rng.standard_normal((21, 18))
        init /= np.linalg.norm(init, axis=1, keepdims=True)
        res = pack_sphere(cfg)

        def pair_dists(m):
            diff = m[:, None, :] - m[None, :, :]
            d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
            return d[np.triu_indices(len(m), k=1)]

        before, after = pair_dists(init), pair_dists(res.means)
        assert after.std() < before.std()
        assert after.min() > before.min()


class TestEncoderSigma:
    def test_direct_substitution_d1(self):
        assert encoder_sigma(4.0, 2, 1) == pytest.approx(4.0 / 12.0)

    def test_direct_substitution_d2(self):
        assert encoder_sigma(3.0, 3, 2) == pytest.approx(1.0 / (2.0 * math.sqrt(3.0)))

    def test_substitution_k21(self):
        expected = 0.5 / (42.0 * 3.0 ** (1.0 / 18.0))
        assert encoder_sigma(0.5, 21, 18) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("d_min,K,d", [(0.0, 2, 2), (-1.0, 2, 2), (1.0, 0, 2), (1.0, 2, 0)])
    def test_rejects_non_positive(self, d_min, K, d):
        with pytest.raises(ValueError):
            encoder_sigma(d_min, K, d)


class TestPackingIO:
    def test_json_round_trip_bit_exact(self, tmp_path):
        res = pack_sphere(PackingConfig(3, 3, rng_seed=9))
        path = tmp_path / "packing.json"
        save_packing(path, res)
        loaded = load_packing(path)
        assert (loaded.means == res.means).all()
        assert loaded.sigma == res.sigma
        assert loaded.min_pair_sq_dist == res.min_pair_sq_dist
        assert loaded.seed == res.seed
        # re-serializing reproduces the file byte for byte
        path2 = tmp_path / "again.json"
        save_packing(path2, loaded)
        assert path.read_bytes() == path2.read_bytes()

    def test_schema_fields(self, tmp_path):
        res = pack_sphere(PackingConfig(2, 2, rng_seed=0))
        path = tmp_path / "packing.json"
        save_packing(path, res)
        doc = json.loads(path.read_text())
        assert set(doc) == {"K", "d", "means", "min_pair_sq_dist", "sigma", "seed"}
        assert doc["K"] == 2 and doc["d"] == 2
        assert len(doc["means"]) == 2 and len(doc["means"][0]) == 2


class TestPackingConfigValidation:
    def test_rejects_k1(self):
        with pytest.raises(ValueError):
            PackingConfig(1, 2)

    def test_rejects_bad_cooling(self):
        with pytest.raises(ValueError):
            PackingConfig(2, 2, cooling_factor=1.0)
