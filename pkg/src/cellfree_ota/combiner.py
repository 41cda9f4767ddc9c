"""CPU-side recovery of the summed statistics from the received chunks.

Two linear estimators per chunk: a Bayesian one using the analytic prior of
the summed statistic, and the prior-free scaled observation (the minimum
variance unbiased choice).  Afterwards the packed vectors are reassembled
into the Gramian estimate (Hermitian by construction, real diagonal) and the
matched-filter columns.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fronthaul import num_chunks

NMSE_FLOOR_DB = -300.0


@dataclass(frozen=True)
class EstimatedStatistics:
    """CPU-side estimates of the across-AP statistic sums."""

    T_hat: np.ndarray  # (K, K) Hermitian
    t_hat: np.ndarray  # (K, tau)
    estimator_kind: str


def lmmse_chunk_estimate(
    z_m: np.ndarray,
    mu_m: np.ndarray,
    C_m: np.ndarray,
    rho_c: float,
    noise_var: float = 1.0,
) -> np.ndarray:
    """Bayesian estimate of one chunk of the summed statistic.

    x_hat = mu + sqrt(rho_c) C (rho_c C + noise_var I)^{-1} (z - sqrt(rho_c) mu).
    ``noise_var`` parametrizes the receiver noise so a noise-free fronthaul
    (noise_var = 0) recovers the sum exactly.
    """
    z = np.asarray(z_m, dtype=complex)
    mu = np.asarray(mu_m, dtype=complex)
    C = np.asarray(C_m, dtype=complex)
    sr = np.sqrt(rho_c)
    innov = z - sr * mu
    A = rho_c * C + noise_var * np.eye(C.shape[0])
    if noise_var > 0:
        w = np.linalg.solve(A, innov)
    else:
        w = np.linalg.pinv(A) @ innov
    return mu + sr * (C @ w)


def ls_chunk_estimate(z_m: np.ndarray, rho_c: float) -> np.ndarray:
    """Prior-free (minimum variance unbiased) estimate z / sqrt(rho_c)."""
    if rho_c <= 0:
        raise ValueError("rho_c must be positive")
    return np.asarray(z_m) / np.sqrt(rho_c)


def estimate_frame(
    Z: np.ndarray,
    mean: np.ndarray,
    var: np.ndarray,
    rho_c,
    kind: str,
    noise_var: float = 1.0,
) -> np.ndarray:
    """Estimate a whole packed vector from its received chunk matrix.

    ``Z`` is (..., M, M_i); ``mean``/``var`` are the unpadded prior vectors of
    the summed statistic (diagonal prior covariance, which is exact for both
    phases here).  Zero-padding positions carry no information and are
    discarded up front.  Supports a leading batch axis on ``Z`` and
    ``rho_c``; chunk boundaries never split a statistic entry, so the
    per-chunk estimators decouple entrywise.
    """
    Z = np.asarray(Z)
    mean = np.asarray(mean)
    D = mean.shape[-1]
    M, mi = Z.shape[-2], Z.shape[-1]
    if num_chunks(D, M) != mi:
        raise ValueError(f"chunk count {mi} does not match statistic length {D}")
    zflat = np.swapaxes(Z, -1, -2).reshape(*Z.shape[:-2], mi * M)[..., :D]
    rc = np.asarray(rho_c, dtype=float)
    if rc.ndim:
        rc = rc.reshape(rc.shape + (1,))
    sr = np.sqrt(rc)
    if kind == "ls":
        return zflat / sr
    if kind == "lmmse":
        v = np.asarray(var, dtype=float)
        denom = rc * v + noise_var
        gain = np.where(denom > 0, sr * v / np.where(denom > 0, denom, 1.0), 0.0)
        return mean + gain * (zflat - sr * mean)
    raise ValueError(f"unknown estimator kind {kind!r}")


def unpack(
    x1_hat: np.ndarray, x2_hat: np.ndarray, K: int, tau_u: int, kind: str = "ls"
) -> EstimatedStatistics:
    """Reassemble the Gramian and matched-filter estimates.

    The Gramian's upper triangle is filled from the phase-1 vector, the lower
    triangle by conjugation, and the diagonal is realified: the true diagonal
    holds squared norms, so dropping the imaginary part can only reduce
    error.
    """
    x1 = np.asarray(x1_hat)
    x2 = np.asarray(x2_hat)
    if x1.shape[-1] != K * (K + 1) // 2:
        raise ValueError("phase-1 vector has the wrong length")
    if x2.shape[-1] != tau_u * K:
        raise ValueError("phase-2 vector has the wrong length")
    T = unpack_gramian(x1, K)
    t = np.swapaxes(x2.reshape(*x2.shape[:-1], tau_u, K), -1, -2)
    return EstimatedStatistics(T_hat=T, t_hat=t, estimator_kind=kind)


def unpack_gramian(x1: np.ndarray, K: int) -> np.ndarray:
    """Hermitian matrix from its packed upper triangle (batched)."""
    x1 = np.asarray(x1)
    rows, cols = np.triu_indices(K)
    T = np.zeros(x1.shape[:-1] + (K, K), dtype=complex)
    T[..., rows, cols] = x1
    lr, lc = np.tril_indices(K, -1)
    T[..., lr, lc] = T[..., lc, lr].conj()
    d = np.arange(K)
    T[..., d, d] = T[..., d, d].real
    return T


def nmse_db(x_true: np.ndarray, x_hat: np.ndarray) -> float:
    """10 log10( E||x - x_hat||^2 / E||x||^2 ) over the leading axis."""
    x = np.asarray(x_true)
    xh = np.asarray(x_hat)
    if x.shape != xh.shape:
        raise ValueError("shape mismatch")
    err = float(np.sum(np.abs(x - xh) ** 2))
    ref = float(np.sum(np.abs(x) ** 2))
    if ref == 0:
        raise ZeroDivisionError("reference power is zero")
    if err == 0:
        return NMSE_FLOOR_DB
    return 10.0 * np.log10(err / ref)


class NmseAccumulator:
    """Streaming NMSE over trials, with a delta-method error bar in dB."""

    def __init__(self):
        self.n = 0
        self.se_sum = 0.0  # sum of per-trial squared-error norms
        self.se_sq = 0.0
        self.ref_sum = 0.0
        self.ref_sq = 0.0
        self.cross = 0.0

    def update(self, x_true: np.ndarray, x_hat: np.ndarray) -> None:
        """Accumulate a batch; the leading axis indexes trials."""
        e = np.sum(np.abs(np.asarray(x_true) - np.asarray(x_hat)) ** 2, axis=-1)
        r = np.sum(np.abs(np.asarray(x_true)) ** 2, axis=-1)
        e = np.atleast_1d(e)
        r = np.atleast_1d(r)
        self.n += e.shape[0]
        self.se_sum += float(e.sum())
        self.se_sq += float((e**2).sum())
        self.ref_sum += float(r.sum())
        self.ref_sq += float((r**2).sum())
        self.cross += float((e * r).sum())

    @property
    def db(self) -> float:
        if self.n == 0:
            raise ValueError("no trials accumulated")
        if self.ref_sum == 0:
            raise ZeroDivisionError("reference power is zero")
        if self.se_sum == 0:
            return NMSE_FLOOR_DB
        return 10.0 * np.log10(self.se_sum / self.ref_sum)

    @property
    def stderr_db(self) -> float:
        """Error bar on the dB value via the ratio-estimator delta method."""
        n = self.n
        if n < 2 or self.se_sum == 0:
            return float("nan")
        a = self.se_sum / n
        b = self.ref_sum / n
        va = self.se_sq / n - a**2
        vb = self.ref_sq / n - b**2
        cab = self.cross / n - a * b
        rel_var = va / a**2 + vb / b**2 - 2 * cab / (a * b)
        rel_var = max(rel_var, 0.0) / n
        return 10.0 / np.log(10.0) * np.sqrt(rel_var)
