import numpy as np
import pytest

from hashdistill.codes import (
    BinaryCode,
    cosine,
    cosine_grad,
    hamming,
    hamming_from_cosine,
    hamming_to_all,
    pack_signs,
    quantize,
    read_codes,
    unpack_signs,
    write_codes,
)
from hashdistill.errors import DegenerateInputError, FormatError, InvalidInputError


def naive_hamming(a_signs, b_signs):
    """Independent per-element mismatch count, no bit tricks."""
    count = 0
    for x, y in zip(a_signs, b_signs):
        if x != y:
            count += 1
    return count


class TestQuantize:
    def test_sign_of_each_element(self):
        b = quantize(np.array([0.3, -0.7, 0.01, -0.99]))
        np.testing.assert_array_equal(b.to_signs(), [1.0, -1.0, 1.0, -1.0])

    def test_zero_ties_break_positive(self):
        b = quantize(np.array([0.0, 0.0]))
        np.testing.assert_array_equal(b.to_signs(), [1.0, 1.0])

    def test_idempotent_on_binary_inputs(self):
        rng = np.random.default_rng(7)
        for k in (8, 13, 64, 100):
            signs = rng.choice([-1.0, 1.0], size=k)
            again = quantize(quantize(signs).to_signs())
            np.testing.assert_array_equal(again.to_signs(), signs)

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidInputError):
            quantize(np.array([0.1, np.nan]))
        with pytest.raises(InvalidInputError):
            quantize(np.array([np.inf, 0.0]))


class TestHamming:
    def test_identity(self):
        b = quantize(np.array([0.5, -0.5, 0.5, 0.5]))
        assert hamming(b, b) == 0

    def test_complement(self):
        rng = np.random.default_rng(3)
        h = rng.uniform(-1, 1, size=16)
        h[h == 0] = 0.5
        assert hamming(quantize(h), quantize(-h)) == 16

    def test_direct_count(self):
        a = quantize(np.array([1.0, 1.0, 1.0, 1.0]))
        b = quantize(np.array([1.0, 1.0, -1.0, -1.0]))
        assert hamming(a, b) == 2

    def test_length_mismatch(self):
        a = quantize(np.ones(8))
        b = quantize(np.ones(16))
        with pytest.raises(InvalidInputError):
            hamming(a, b)

    def test_matches_naive_loop_on_random_pairs(self):
        """Packed XOR+popcount agrees with an element-by-element scan."""
        rng = np.random.default_rng(11)
        for _ in range(200):
            k = int(rng.integers(1, 200))
            a = rng.choice([-1.0, 1.0], size=k)
            b = rng.choice([-1.0, 1.0], size=k)
            assert hamming(quantize(a), quantize(b)) == naive_hamming(a, b)

    def test_bulk_matches_naive_loop(self):
        """10^4 random pairs, vectorized path vs naive loop."""
        rng = np.random.default_rng(12)
        k = 70  # not a multiple of 64, exercises the tail mask
        a = rng.choice([-1.0, 1.0], size=(10_000, k))
        b = rng.choice([-1.0, 1.0], size=(10_000, k))
        dists = hamming_to_all(pack_signs(a), pack_signs(b), pairwise=False)
        naive = (a != b).sum(axis=1)
        np.testing.assert_array_equal(dists, naive)

    def test_metric_properties_on_random_triples(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            k = int(rng.integers(2, 96))
            a, b, c = (quantize(rng.choice([-1.0, 1.0], size=k)) for _ in range(3))
            assert hamming(a, b) == hamming(b, a)
            assert (hamming(a, b) == 0) == (a == b)
            assert hamming(a, c) <= hamming(a, b) + hamming(b, c)


class TestCosine:
    def test_parallel(self):
        u = np.array([0.2, -0.4, 0.6])
        assert cosine(u, u) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert cosine(np.array([1.0, 0.0]), np.array([0.0, 2.0])) == 0.0

    def test_binary_orthogonal_pair(self):
        u = np.array([1.0, 1.0, 1.0, 1.0])
        v = np.array([1.0, 1.0, -1.0, -1.0])
        assert cosine(u, v) == 0.0

    def test_clamped_to_unit_interval(self):
        rng = np.random.default_rng(5)
        for _ in range(500):
            u = rng.normal(size=8)
            s = cosine(u, 3.0 * u)
            assert -1.0 <= s <= 1.0

    def test_degenerate_norm_raises(self):
        with pytest.raises(DegenerateInputError):
            cosine(np.zeros(4), np.ones(4))
        with pytest.raises(DegenerateInputError):
            cosine(np.ones(4), np.full(4, 1e-200))

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            cosine(np.ones(3), np.ones(4))

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(21)
        step = 1e-6
        for _ in range(50):
            k = int(rng.integers(2, 24))
            u = rng.normal(size=k)
            v = rng.normal(size=k)
            _, du, dv = cosine_grad(u, v)
            for vec, grad in ((u, du), (v, dv)):
                for i in range(k):
                    bumped = vec.copy()
                    bumped[i] += step
                    plus = cosine(bumped, v) if vec is u else cosine(u, bumped)
                    bumped[i] -= 2 * step
                    minus = cosine(bumped, v) if vec is u else cosine(u, bumped)
                    fd = (plus - minus) / (2 * step)
                    assert grad[i] == pytest.approx(fd, rel=1e-4, abs=1e-7)


class TestHammingFromCosine:
    def test_identical_codes(self):
        assert hamming_from_cosine(1.0, 64) == 0.0

    def test_complementary_codes(self):
        assert hamming_from_cosine(-1.0, 64) == 64.0

    def test_matches_direct_hamming_at_orthogonality(self):
        a = quantize(np.array([1.0, 1.0, 1.0, 1.0]))
        b = quantize(np.array([1.0, 1.0, -1.0, -1.0]))
        assert hamming_from_cosine(0.0, 4) == 2.0 == hamming(a, b)

    def test_out_of_range_similarity(self):
        with pytest.raises(InvalidInputError):
            hamming_from_cosine(1.5, 8)

    def test_exact_identity_on_binary_codes(self):
        """hamming == K/2*(1-cosine) exactly for codes in {-1,+1}^K."""
        rng = np.random.default_rng(17)
        for k in (8, 16, 32, 64):
            for _ in range(500):
                a = rng.choice([-1.0, 1.0], size=k)
                b = rng.choice([-1.0, 1.0], size=k)
                direct = hamming(quantize(a), quantize(b))
                via_cosine = hamming_from_cosine(cosine(a, b), k)
                assert abs(direct - via_cosine) < 1e-9


class TestPacking:
    def test_roundtrip_is_identity(self):
        rng = np.random.default_rng(19)
        for k in (1, 7, 64, 65, 130):
            signs = rng.choice([-1.0, 1.0], size=(32, k))
            np.testing.assert_array_equal(unpack_signs(pack_signs(signs), k), signs)

    def test_pad_bits_are_zero(self):
        words = pack_signs(np.ones(70))
        assert words.shape == (2,)
        # bits 6..63 of the second word must stay clear
        assert int(words[1]) < (1 << 6)

    def test_known_word_value(self):
        # elements 0 and 3 positive -> bits 0 and 3 -> 0b1001
        words = pack_signs(np.array([1.0, -1.0, -1.0, 1.0]))
        assert int(words[0]) == 0b1001

    def test_binary_code_equality_and_hash(self):
        a = quantize(np.array([1.0, -1.0, 1.0]))
        b = quantize(np.array([0.5, -0.5, 0.5]))
        c = quantize(np.array([1.0, 1.0, 1.0]))
        assert a == b
        assert a != c
        assert len({a, b, c}) == 2


class TestCodeFile:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(23)
        k = 48
        words = pack_signs(rng.choice([-1.0, 1.0], size=(100, k)))
        path = tmp_path / "codes.dhdc"
        write_codes(path, words, k)
        loaded, loaded_k = read_codes(path)
        assert loaded_k == k
        np.testing.assert_array_equal(loaded, words)

    def test_write_read_write_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(29)
        words = pack_signs(rng.choice([-1.0, 1.0], size=(50, 100)))
        p1, p2 = tmp_path / "a.dhdc", tmp_path / "b.dhdc"
        write_codes(p1, words, 100)
        loaded, k = read_codes(p1)
        write_codes(p2, loaded, k)
        assert p1.read_bytes() == p2.read_bytes()

    def test_empty_file_roundtrip(self, tmp_path):
        path = tmp_path / "empty.dhdc"
        write_codes(path, np.zeros((0, 1), dtype=np.uint64), 16)
        loaded, k = read_codes(path)
        assert k == 16 and loaded.shape == (0, 1)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "codes.dhdc"
        write_codes(path, pack_signs(np.ones((3, 8))), 8)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            read_codes(path)

    def test_truncated_body_rejected(self, tmp_path):
        path = tmp_path / "codes.dhdc"
        write_codes(path, pack_signs(np.ones((3, 8))), 8)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FormatError):
            read_codes(path)

    def test_dirty_pad_bits_rejected(self, tmp_path):
        words = pack_signs(np.ones((2, 10)))
        words[0, 0] |= np.uint64(1) << np.uint64(40)  # beyond K=10
        with pytest.raises(InvalidInputError):
            write_codes(tmp_path / "bad.dhdc", words, 10)


def test_binary_code_from_quantize_reports_length():
    b = quantize(np.linspace(-1, 1, 37))
    assert isinstance(b, BinaryCode)
    assert b.length == 37
    assert b.words.shape == (1,)
