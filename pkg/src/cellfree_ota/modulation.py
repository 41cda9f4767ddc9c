"""Constellations, Gray mapping, and hard symbol decisions.

4-QAM Gray table (bit pair -> quadrant), fixed so soft-bit tests have a
stable convention:

    b0 b1   symbol
    0  0    (+1 + 1j)/sqrt(2)
    0  1    (+1 - 1j)/sqrt(2)
    1  0    (-1 + 1j)/sqrt(2)
    1  1    (-1 - 1j)/sqrt(2)

i.e. b0 selects the sign of the real part and b1 the sign of the imaginary
part; adjacent quadrants differ in exactly one bit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Constellation:
    name: str
    points: np.ndarray  # (P,) complex, unit average energy
    bit_table: np.ndarray  # (P, bits_per_symbol) uint8

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def bits_per_symbol(self) -> int:
        return self.bit_table.shape[1]

    def hard_decide(self, symbols: np.ndarray) -> np.ndarray:
        """Nearest-point indices for an arbitrary-shape symbol array."""
        s = np.asarray(symbols)
        d = np.abs(s[..., None] - self.points) ** 2
        return np.argmin(d, axis=-1)

    def bits_of(self, indices: np.ndarray) -> np.ndarray:
        return self.bit_table[indices]


def _build_4qam() -> Constellation:
    pts = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2.0)
    bits = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=np.uint8)
    return Constellation("4qam", pts, bits)


def _build_bpsk() -> Constellation:
    pts = np.array([1.0 + 0j, -1.0 + 0j])
    bits = np.array([[0], [1]], dtype=np.uint8)
    return Constellation("bpsk", pts, bits)


_REGISTRY = {"4qam": _build_4qam(), "bpsk": _build_bpsk()}


def constellation(name: str) -> Constellation:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown constellation {name!r}") from None


@dataclass(frozen=True)
class SymbolFrame:
    """Unit-power symbols for one block, plus the bits behind them."""

    symbols: np.ndarray  # (K, tau)
    bits: np.ndarray  # (K, tau * bits_per_symbol)


def modulate(bits: np.ndarray, const: Constellation) -> SymbolFrame:
    """Gray-map a (K, n_bits) bit matrix into a symbol frame.

    n_bits must be divisible by the constellation's bits per symbol; symbol t
    of a row consumes bits [t*bps, (t+1)*bps) of that row.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.ndim != 2:
        raise ValueError("bits must be 2-D (users x bits)")
    bps = const.bits_per_symbol
    if bits.shape[1] % bps != 0:
        raise ValueError(
            f"bit count {bits.shape[1]} not divisible by bits/symbol {bps}"
        )
    groups = bits.reshape(bits.shape[0], -1, bps)
    weights = 1 << np.arange(bps - 1, -1, -1, dtype=np.uint8)
    idx = np.tensordot(groups, weights, axes=([2], [0]))
    # bit_table rows are ordered so that the packed bit group is the index
    return SymbolFrame(symbols=const.points[idx], bits=bits)


def demodulate_hard(symbols: np.ndarray, const: Constellation) -> np.ndarray:
    """Nearest-neighbor bit decisions, inverse of :func:`modulate`."""
    idx = const.hard_decide(symbols)
    bits = const.bits_of(idx)
    return bits.reshape(symbols.shape[0], -1)


def random_bits(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.integers(0, 2, size=shape, dtype=np.uint8)
