"""Quasi-static block-fading channel sampling for both network segments."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CorrelationSet, NetworkLayout, ap_cpu_betas

_PSD_TOL = 1e-12


@dataclass(frozen=True)
class ChannelBlock:
    """One coherence block: UE->AP channels H and AP->CPU channels G."""

    H: np.ndarray  # (L, N, K)
    G: np.ndarray  # (L, N, M)
    block_index: int


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard circularly-symmetric complex Gaussian draws."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def psd_sqrt(R: np.ndarray, tol: float = _PSD_TOL) -> np.ndarray:
    """Hermitian square root of PSD matrices (last two axes).

    Eigenvalues in [-tol, 0) are clipped to zero; anything more negative is a
    genuinely indefinite input and raises.
    """
    w, U = np.linalg.eigh(R)
    if np.any(w < -tol):
        raise ValueError(f"matrix is not PSD (min eigenvalue {w.min():.3e})")
    w = np.clip(w, 0.0, None)
    return (U * np.sqrt(w)[..., None, :]) @ np.swapaxes(U.conj(), -1, -2)


def sample_ue_ap(corr: CorrelationSet, rng: np.random.Generator) -> np.ndarray:
    """Draw the UE->AP channels, shape (L, N, K).

    Column (k, l) is R_kl^{1/2} g with g standard complex Gaussian;
    columns are independent across users and APs.
    """
    sq = psd_sqrt(corr.R)  # (K, L, N, N)
    g = complex_normal(rng, (corr.K, corr.L, corr.N))
    h = np.einsum("klnm,klm->kln", sq, g)
    return np.ascontiguousarray(h.transpose(1, 2, 0))  # (L, N, K)


def sample_ap_cpu(
    layout: NetworkLayout, N: int, M: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw the AP->CPU channels G, shape (L, N, M).

    Entries of G_l are i.i.d. CN(0, beta_l) with beta_l the path loss of the
    AP-CPU link.  Full column rank (needed by the ZF precoder downstream)
    holds almost surely; the degenerate case is still guarded.
    """
    if N < M:
        raise ValueError(f"need N >= M for a full-column-rank fronthaul, got N={N}, M={M}")
    betas = ap_cpu_betas(layout)
    L = betas.shape[0]
    G = np.sqrt(betas)[:, None, None] * complex_normal(rng, (L, N, M))
    ranks = np.linalg.matrix_rank(G)
    if np.any(ranks < M):
        raise ValueError("sampled a rank-deficient AP-CPU channel")
    return G


def draw_block(
    corr: CorrelationSet,
    layout: NetworkLayout,
    M: int,
    seed: int,
    block_index: int = 0,
) -> ChannelBlock:
    """Deterministic block draw keyed by (seed, block_index)."""
    rng = np.random.default_rng([seed, block_index])
    H = sample_ue_ap(corr, rng)
    G = sample_ap_cpu(layout, corr.N, M, rng)
    return ChannelBlock(H=H, G=G, block_index=block_index)
