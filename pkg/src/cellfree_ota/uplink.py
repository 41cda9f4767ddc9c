"""Per-AP uplink reception and local sufficient statistics.

Each AP turns its received block into two quantities whose sums across APs
are all any centralized detector needs: the channel Gramian T_l = H_l^H H_l
and the matched-filter outputs t_{l,t} = H_l^H y_{l,t}.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import complex_normal


@dataclass(frozen=True)
class LocalStatistics:
    """One AP's sufficient statistics for a coherence block."""

    T: np.ndarray  # (K, K) Hermitian PSD Gramian
    t: np.ndarray  # (K, tau) matched-filter outputs


def ap_receive(
    H_l: np.ndarray,
    s: np.ndarray,
    rho_ul: float,
    rng: np.random.Generator | None = None,
    *,
    noise: bool = True,
) -> np.ndarray:
    """Received signal sqrt(rho_ul) * H_l s + n at one AP.

    ``s`` may be a single (K,) symbol vector or a (K, tau) block; the noise
    is unit-variance circularly-symmetric complex Gaussian per antenna.
    """
    H_l = np.asarray(H_l)
    s = np.asarray(s)
    y = np.sqrt(rho_ul) * (H_l @ s)
    if noise:
        if rng is None:
            raise ValueError("rng is required when noise is enabled")
        y = y + complex_normal(rng, y.shape)
    return y


def local_stats(H_l: np.ndarray, y_l: np.ndarray) -> LocalStatistics:
    """Gramian and matched-filter outputs of one AP."""
    H_l = np.asarray(H_l)
    y = np.asarray(y_l)
    if y.ndim == 1:
        y = y[:, None]
    return LocalStatistics(T=H_l.conj().T @ H_l, t=H_l.conj().T @ y)


def sum_stats(stats: list[LocalStatistics]) -> tuple[np.ndarray, np.ndarray]:
    """Across-AP sums (T, t) that feed the centralized detectors."""
    T = sum(s.T for s in stats)
    t = sum(s.t for s in stats)
    return T, t


def stacked_stats(H: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Centralized statistics from the stacked system, for oracle checks.

    ``H`` is (L, N, K) and ``Y`` is (L, N, tau); stacking APs along the
    antenna axis gives the single-big-array Gramian and matched filter.
    """
    L, N, K = H.shape
    Hs = H.reshape(L * N, K)
    Ys = Y.reshape(L * N, -1)
    return Hs.conj().T @ Hs, Hs.conj().T @ Ys
