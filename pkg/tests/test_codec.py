import math

import numpy as np
import pytest

from gmdiff.codec import (
    Alphabet,
    decode_map,
    decode_probs,
    encode,
    load_alphabet,
    load_dataset,
    save_alphabet,
    save_dataset,
)
from gmdiff.geometry import PackingResult


class TestAlphabet:
    def test_order_defines_indices(self):
        a = Alphabet(["A", "C", "G", "T"])
        assert a.index("G") == 2
        assert a.token(0) == "A"
        assert len(a) == 4

    def test_rejects_duplicates(self):
        with pytest.raises(ValueError):
            Alphabet(["A", "A"])

    def test_rejects_whitespace_token(self):
        with pytest.raises(ValueError):
            Alphabet(["A", "B C"])

    def test_unknown_token(self):
        with pytest.raises(ValueError):
            Alphabet(["A"]).index("B")

    def test_integers_helper(self):
        a = Alphabet.integers(10)
        assert a.symbols[0] == "1" and a.symbols[9] == "10"
        assert not a.width_one


class TestEncode:
    def test_sigma_zero_returns_means_exactly(self, pack_k6):
        x = np.array([0, 3, 5, 1])
        z = encode(x, pack_k6, np.random.default_rng(0), sigma=0.0)
        np.testing.assert_array_equal(z, pack_k6.means[x])

    def test_empirical_variance_matches_sigma(self, pack_k6):
        rng = np.random.default_rng(1)
        x = np.zeros(100_000, dtype=np.int64)
        z = encode(x, pack_k6, rng)
        per_coord_var = z.var(axis=0, ddof=1)
        np.testing.assert_allclose(per_coord_var, pack_k6.sigma**2, rtol=0.05)

    def test_deterministic_per_seed(self, pack_k6):
        x = np.array([2, 4, 0])
        z1 = encode(x, pack_k6, np.random.default_rng(7))
        z2 = encode(x, pack_k6, np.random.default_rng(7))
        assert (z1 == z2).all()

    def test_rejects_out_of_range_index(self, pack_k6):
        with pytest.raises(ValueError):
            encode(np.array([0, 6]), pack_k6, np.random.default_rng(0))


class TestDecodeProbs:
    def test_rows_sum_to_one_and_positive(self, pack_k6):
        rng = np.random.default_rng(2)
        z = rng.standard_normal((50, pack_k6.latent_dim))
        probs = decode_probs(z, pack_k6)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
        assert (probs > 0.0).all()

    def test_equidistant_point_gives_uniform(self):
        # two means symmetric about the origin: z = 0 is equidistant
        pack = PackingResult(np.array([[1.0, 0.0], [-1.0, 0.0]]), 4.0, 0.5)
        probs = decode_probs(np.zeros((1, 2)), pack)
        np.testing.assert_allclose(probs[0], [0.5, 0.5], atol=1e-12)

    def test_density_ratio_oracle_k2_d1(self, pack_k2_d1):
        # log-density gap at z=0.5 for means +/-1, sigma=1/3 is exactly 9
        probs = decode_probs(np.array([[0.5]]), pack_k2_d1)
        expected = 1.0 / (1.0 + math.exp(-9.0))
        assert probs[0, 0] == pytest.approx(expected, rel=1e-12)

    def test_argmax_at_mean(self, pack_k6):
        z = pack_k6.means[np.array([4, 1])]
        assert (decode_map(z, pack_k6) == [4, 1]).all()

    def test_finite_far_from_all_means(self, pack_k6):
        # > 40 sigma from every mean: raw densities underflow, log domain must not
        z = np.full((1, pack_k6.latent_dim), 100.0)
        probs = decode_probs(z, pack_k6)
        assert np.isfinite(probs).all()
        assert probs.sum() == pytest.approx(1.0, abs=1e-9)

    def test_shape_mismatch(self, pack_k6):
        with pytest.raises(ValueError):
            decode_probs(np.zeros((3, pack_k6.latent_dim + 1)), pack_k6)


class TestDecodeMap:
    def test_round_trip_at_means(self, pack_k6):
        x = np.array([0, 2, 1])
        z = pack_k6.means[x]
        assert (decode_map(z, pack_k6) == x).all()

    def test_tie_breaks_to_lowest_index(self):
        pack = PackingResult(np.array([[1.0], [-1.0]]), 4.0, 0.5)
        assert decode_map(np.array([[0.0]]), pack)[0] == 0

    def test_matches_argmax_of_probs(self, pack_k6):
        rng = np.random.default_rng(3)
        z = rng.standard_normal((200, pack_k6.latent_dim))
        assert (decode_map(z, pack_k6) == decode_probs(z, pack_k6).argmax(axis=1)).all()


class TestRoundTrip:
    def test_encode_decode_accuracy(self, pack_k6):
        """At the derived sigma, >= 99.9% of 1e5 encoded positions decode back."""
        rng = np.random.default_rng(4)
        x = rng.integers(0, pack_k6.num_categories, size=100_000)
        z = encode(x, pack_k6, rng)
        recovered = decode_map(z, pack_k6)
        assert (recovered == x).mean() >= 0.999


class TestDatasetIO:
    def test_round_trip(self, tmp_path):
        alphabet = Alphabet(["1", "2", "3"])
        data = np.array([[0, 1, 2], [2, 1, 0]])
        path = tmp_path / "data.txt"
        save_dataset(path, data, alphabet)
        assert path.read_text() == "1 2 3\n3 2 1\n"
        assert (load_dataset(path, alphabet) == data).all()

    def test_width_one_alphabet_without_separators(self, tmp_path):
        alphabet = Alphabet(list("ACGT"))
        path = tmp_path / "compact.txt"
        path.write_text("ACGT\nTGCA\n")
        data = load_dataset(path, alphabet)
        assert (data == [[0, 1, 2, 3], [3, 2, 1, 0]]).all()

    def test_rejects_mixed_lengths(self, tmp_path):
        alphabet = Alphabet(["a", "b"])
        path = tmp_path / "bad.txt"
        path.write_text("a b\na\n")
        with pytest.raises(ValueError):
            load_dataset(path, alphabet)

    def test_rejects_unknown_token(self, tmp_path):
        alphabet = Alphabet(["a", "b"])
        path = tmp_path / "bad.txt"
        path.write_text("a z\n")
        with pytest.raises(ValueError, match="bad.txt:1"):
            load_dataset(path, alphabet)

    def test_alphabet_file_round_trip(self, tmp_path):
        alphabet = Alphabet(["Ala", "Cys", "-"])
        path = tmp_path / "alphabet.txt"
        save_alphabet(path, alphabet)
        assert load_alphabet(path) == alphabet
