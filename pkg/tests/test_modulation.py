import itertools

import numpy as np
import pytest

from cellfree_ota.modulation import (
    SymbolFrame,
    constellation,
    demodulate_hard,
    modulate,
    random_bits,
)


class TestFourQam:
    def test_gray_table_anchor(self):
        const = constellation("4qam")
        frame = modulate(np.array([[0, 0]], dtype=np.uint8), const)
        assert frame.symbols[0, 0] == pytest.approx((1 + 1j) / np.sqrt(2))

    def test_unit_average_energy(self):
        const = constellation("4qam")
        assert np.mean(np.abs(const.points) ** 2) == pytest.approx(1.0)

    def test_roundtrip_all_patterns(self):
        const = constellation("4qam")
        bits = np.array(list(itertools.product([0, 1], repeat=2)), dtype=np.uint8)
        frame = modulate(bits.reshape(1, -1), const)
        back = demodulate_hard(frame.symbols, const)
        assert np.array_equal(back, bits.reshape(1, -1))

    def test_gray_neighbors_differ_one_bit(self):
        const = constellation("4qam")
        pts, tbl = const.points, const.bit_table
        for i, j in itertools.combinations(range(4), 2):
            d = np.abs(pts[i] - pts[j])
            hamming = np.sum(tbl[i] != tbl[j])
            if d == pytest.approx(np.sqrt(2)):  # adjacent quadrants
                assert hamming == 1

    def test_sign_convention(self):
        # first bit flips the real part, second the imaginary part
        const = constellation("4qam")
        f = modulate(np.array([[1, 0]], dtype=np.uint8), const)
        assert f.symbols[0, 0].real < 0 and f.symbols[0, 0].imag > 0


class TestModulate:
    def test_shape_and_mapping(self, rng):
        const = constellation("4qam")
        bits = random_bits(rng, (3, 10))
        frame = modulate(bits, const)
        assert isinstance(frame, SymbolFrame)
        assert frame.symbols.shape == (3, 5)
        assert np.array_equal(frame.bits, bits)

    def test_bad_length_rejected(self, rng):
        const = constellation("4qam")
        with pytest.raises(ValueError, match="not divisible"):
            modulate(random_bits(rng, (2, 5)), const)

    def test_roundtrip_random(self, rng):
        const = constellation("4qam")
        bits = random_bits(rng, (4, 64))
        frame = modulate(bits, const)
        assert np.array_equal(demodulate_hard(frame.symbols, const), bits)

    def test_bpsk(self):
        const = constellation("bpsk")
        frame = modulate(np.array([[0, 1]], dtype=np.uint8), const)
        assert np.allclose(frame.symbols, [[1, -1]])

    def test_unknown_name(self):
        with pytest.raises(ValueError, match="unknown constellation"):
            constellation("1024apsk")


class TestHardDecide:
    def test_noisy_decisions(self, rng):
        const = constellation("4qam")
        idx = rng.integers(0, 4, size=1000)
        noisy = const.points[idx] + 0.05 * (
            rng.standard_normal(1000) + 1j * rng.standard_normal(1000)
        )
        assert np.array_equal(const.hard_decide(noisy), idx)
