"""Closed-form statistics of the summed sufficient statistics.

Phase 1 (Gramian upper triangle): entry (j, j') of AP l's packed vector has
mean trace(R_jl) when j == j' (zero otherwise) and variance
trace(R_jl R_j'l).  The covariance is exactly diagonal because the channel
columns are independent zero-mean Gaussians.

Phase 2 (matched filter at one channel use): zero mean; the covariance of
the across-AP sum is

    C = sum_l [ rho_ul E[(H_l^H H_l)^2] + E[H_l^H H_l] ]
        + rho_ul sum_{l != l'} E[H_l^H H_l] E[H_l'^H H_l']

with E[H^H H] = diag(tr R_1l, ..., tr R_Kl) and E[(H^H H)^2] diagonal with
k-th entry (tr R_kl)^2 + tr(R_kl sum_k' R_k'l).  Everything here is
therefore diagonal, which the estimator layer exploits.

The Monte Carlo oracle exists to validate those formulas empirically and is
deliberately independent of them: it just simulates and averages.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import complex_normal, psd_sqrt
from .geometry import CorrelationSet
from .modulation import Constellation, constellation


def upper_tri_maps(K: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row/col indices of the row-wise upper-triangle layout and the
    positions of the diagonal pairs within it."""
    rows, cols = np.triu_indices(K)
    diag_pos = np.flatnonzero(rows == cols)
    return rows, cols, diag_pos


def pair_position(K: int, j: int, jp: int) -> int:
    """0-based packed position of the (j, j') Gramian entry, j <= j'."""
    if not 0 <= j <= jp < K:
        raise ValueError("need 0 <= j <= jp < K")
    return j * K - j * (j - 1) // 2 + (jp - j)


def correlation_traces(corr: CorrelationSet) -> tuple[np.ndarray, np.ndarray]:
    """(tr R_kl, tr(R_jl R_j'l)) stacks: shapes (K, L) and (K, K, L)."""
    tr = np.einsum("klnn->kl", corr.R).real
    trrr = np.einsum("jlab,plba->jpl", corr.R, corr.R).real
    return tr, trrr


def phase1_entries(tr: np.ndarray, trrr: np.ndarray):
    """Per-AP packed mean/variance vectors from the trace stacks.

    Batched: ``tr`` is (..., K, L) and ``trrr`` (..., K, K, L); returns
    mean and variance arrays of shape (..., L, D1).
    """
    K = tr.shape[-2]
    rows, cols, diag_pos = upper_tri_maps(K)
    var = np.moveaxis(trrr[..., rows, cols, :], -1, -2)  # (..., L, D1)
    mean = np.zeros_like(var)
    mean[..., diag_pos] = np.moveaxis(tr, -1, -2)
    return mean, var


def phase2_entries(tr: np.ndarray, trrr: np.ndarray, rho_ul: float):
    """Per-AP and summed matched-filter covariance diagonals.

    Returns (per_ap, total): per_ap is (..., L, K) -- the k-th diagonal entry
    of one AP's own covariance -- and total (..., K) includes the cross terms
    between APs.
    """
    tr_l = np.moveaxis(tr, -1, -2)  # (..., L, K)
    row_sums = np.moveaxis(trrr.sum(axis=-2), -1, -2)  # (..., L, K)
    per_ap = rho_ul * (tr_l**2 + row_sums) + tr_l
    s = tr_l.sum(axis=-2)
    cross = rho_ul * (s**2 - (tr_l**2).sum(axis=-2))
    total = per_ap.sum(axis=-2) + cross
    return per_ap, total


@dataclass(frozen=True)
class MomentModel:
    """Analytic first/second-order statistics for both fronthaul phases."""

    K: int
    L: int
    tau_u: int
    rho_ul: float
    mu1: np.ndarray  # (D1,) mean of the summed phase-1 vector
    c1: np.ndarray  # (D1,) diagonal of its covariance
    mu1_ap: np.ndarray  # (L, D1) per-AP means
    c1_ap: np.ndarray  # (L, D1) per-AP variances
    c2: np.ndarray  # (K,) diagonal of the summed matched-filter covariance
    c2_ap: np.ndarray  # (L, K) per-AP diagonals

    def phase1_prior(self) -> tuple[np.ndarray, np.ndarray]:
        """(mean, variance) of the summed packed phase-1 vector."""
        return self.mu1, self.c1

    def phase2_prior(self) -> tuple[np.ndarray, np.ndarray]:
        """(mean, variance) of the summed packed phase-2 vector.

        Channel uses are i.i.d., so the covariance diagonal just tiles."""
        D2 = self.tau_u * self.K
        return np.zeros(D2), np.tile(self.c2, self.tau_u)

    def phase1_second_moment(self, l: int) -> np.ndarray:
        """Full correlation E[x x^H] of AP l's phase-1 vector."""
        mu = self.mu1_ap[l].astype(complex)
        return np.diag(self.c1_ap[l]).astype(complex) + np.outer(mu, mu.conj())

    def phase2_second_moment(self, l: int) -> np.ndarray:
        """Full correlation of AP l's phase-2 vector (zero mean, block diag)."""
        return np.diag(np.tile(self.c2_ap[l], self.tau_u)).astype(complex)

    def phase1_moment_vectors(self, l: int):
        return self.mu1_ap[l], self.c1_ap[l]

    def phase2_moment_vectors(self, l: int):
        D2 = self.tau_u * self.K
        return np.zeros(D2), np.tile(self.c2_ap[l], self.tau_u)

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "L": self.L,
            "tau_u": self.tau_u,
            "rho_ul": self.rho_ul,
            "mu1": self.mu1.tolist(),
            "c1": self.c1.tolist(),
            "mu1_ap": self.mu1_ap.tolist(),
            "c1_ap": self.c1_ap.tolist(),
            "c2": self.c2.tolist(),
            "c2_ap": self.c2_ap.tolist(),
        }

    def dump_json(self, path) -> None:
        """Write the model to a JSON file for offline inspection."""
        import json
        from pathlib import Path

        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")


def phase1_moments(corr: CorrelationSet):
    """Mean, covariance diagonal and per-AP pieces of the summed Gramian
    vector: (mu1, c1, mu1_ap, c1_ap)."""
    tr, trrr = correlation_traces(corr)
    mean_ap, var_ap = phase1_entries(tr, trrr)
    return mean_ap.sum(axis=0), var_ap.sum(axis=0), mean_ap, var_ap


def phase2_moments(corr: CorrelationSet, rho_ul: float):
    """Summed matched-filter covariance diagonal and per-AP diagonals."""
    tr, trrr = correlation_traces(corr)
    per_ap, total = phase2_entries(tr, trrr, rho_ul)
    return total, per_ap


def build_moment_model(
    corr: CorrelationSet, rho_ul: float, tau_u: int
) -> MomentModel:
    mu1, c1, mu1_ap, c1_ap = phase1_moments(corr)
    c2, c2_ap = phase2_moments(corr, rho_ul)
    return MomentModel(
        K=corr.K,
        L=corr.L,
        tau_u=tau_u,
        rho_ul=rho_ul,
        mu1=mu1,
        c1=c1,
        mu1_ap=mu1_ap,
        c1_ap=c1_ap,
        c2=c2,
        c2_ap=c2_ap,
    )


@dataclass(frozen=True)
class EmpiricalMoments:
    """Monte Carlo estimates of the same quantities, with standard errors."""

    draws: int
    mean1: np.ndarray  # (D1,)
    se_mean1: np.ndarray
    cov1: np.ndarray  # (D1, D1)
    se_cov1: np.ndarray
    cov2: np.ndarray  # (n_probe, K, K) covariance of sum_l t at probed uses
    se_cov2: np.ndarray
    cross_t: np.ndarray  # (K, K) cross-covariance between two channel uses


def mc_moment_oracle(
    corr: CorrelationSet,
    rho_ul: float,
    draws: int,
    seed: int = 0,
    batch: int = 20_000,
    const: Constellation | None = None,
) -> EmpiricalMoments:
    """Empirical moments of the summed statistics by direct simulation.

    Draws channels, symbols and noise; forms x1 = packed Gramian sum and the
    matched-filter sums at two channel uses; averages.  Two passes over the
    same (seeded, hence reproducible) stream: means first, then centered
    second/fourth order products for the covariances and their errors.
    """
    if draws < 1:
        raise ValueError("draws must be positive")
    K, L, N = corr.K, corr.L, corr.N
    rows, cols, _ = upper_tri_maps(K)
    D1 = rows.shape[0]
    const = constellation("4qam") if const is None else const
    sq = psd_sqrt(corr.R)  # (K, L, N, N)
    n_probe = 2

    def batches(pass_seed_salt: int):
        rng = np.random.default_rng([seed, pass_seed_salt])
        done = 0
        while done < draws:
            b = min(batch, draws - done)
            g = complex_normal(rng, (b, K, L, N))
            h = np.einsum("klnm,bklm->bkln", sq, g)  # (b, K, L, N)
            T = np.einsum("bjln,bkln->bljk", h.conj(), h)  # (b, L, K, K)
            x1 = T[:, :, rows, cols].sum(axis=1)  # (b, D1)
            sym_idx = rng.integers(0, const.size, size=(b, K, n_probe))
            s = const.points[sym_idx]  # (b, K, n_probe)
            noise = complex_normal(rng, (b, L, N, n_probe))
            y = np.sqrt(rho_ul) * np.einsum("bkln,bkt->blnt", h, s) + noise
            t = np.einsum("bkln,blnt->bkt", h.conj(), y)  # (b, K, n_probe)
            yield x1, t
            done += b

    # pass 1: means
    sum1 = np.zeros(D1, dtype=complex)
    sum2 = np.zeros((K, n_probe), dtype=complex)
    for x1, t in batches(0):
        sum1 += x1.sum(axis=0)
        sum2 += t.sum(axis=0)
    mean1 = sum1 / draws
    mean2 = sum2 / draws

    # pass 2: centered products (same stream -> same draws)
    c1 = np.zeros((D1, D1), dtype=complex)
    p1 = np.zeros((D1, D1))  # E|y_i|^2 |y_j|^2 for error bars
    c2 = np.zeros((n_probe, K, K), dtype=complex)
    p2 = np.zeros((n_probe, K, K))
    cross = np.zeros((K, K), dtype=complex)
    var_mean1 = np.zeros(D1)
    for x1, t in batches(0):
        y1 = x1 - mean1
        c1 += y1.conj().T @ y1
        a1 = np.abs(y1) ** 2
        p1 += a1.T @ a1
        var_mean1 += a1.sum(axis=0)
        yt = t - mean2
        for i in range(n_probe):
            c2[i] += yt[:, :, i].conj().T @ yt[:, :, i]
            a2 = np.abs(yt[:, :, i]) ** 2
            p2[i] += a2.T @ a2
        cross += yt[:, :, 0].conj().T @ yt[:, :, 1]
    # accumulators hold sum_b conj(y_i) y_j, i.e. the transpose of E[y y^H]
    c1 = c1.T / draws
    p1 /= draws
    c2 = np.swapaxes(c2, -1, -2) / draws
    p2 /= draws
    cross = cross.conj() / draws  # E[y(t0) y(t1)^H]
    se_cov1 = np.sqrt(np.maximum(p1 - np.abs(c1) ** 2, 0.0) / draws)
    se_cov2 = np.sqrt(np.maximum(p2 - np.abs(c2) ** 2, 0.0) / draws)
    se_mean1 = np.sqrt(var_mean1 / draws / draws)
    return EmpiricalMoments(
        draws=draws,
        mean1=mean1,
        se_mean1=se_mean1,
        cov1=c1,
        se_cov1=se_cov1,
        cov2=c2,
        se_cov2=se_cov2,
        cross_t=cross,
    )
