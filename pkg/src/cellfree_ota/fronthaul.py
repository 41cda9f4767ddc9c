"""Analog over-the-air fronthaul: packing, ZF precoding, power protocol.

Each AP serializes its local statistics into a vector, chops it into
length-M chunks, precodes with a local zero-forcing matrix that inverts its
own AP->CPU channel, and all APs transmit simultaneously so the CPU receives
the (scaled, noisy) entrywise sum of the chunks.  A per-phase scalar rho_c,
agreed through a feedback round, keeps every AP inside its average transmit
power budget.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import ceil

import numpy as np

from .channel import complex_normal
from .uplink import LocalStatistics

_COND_LIMIT = 1e12


class SingularChannelError(np.linalg.LinAlgError):
    """AP->CPU channel too ill-conditioned for zero-forcing."""


@dataclass(frozen=True)
class PackedVector:
    """Serialized per-AP statistic: phase 1 is the Gramian's upper triangle
    (row-wise), phase 2 the stacked matched-filter outputs."""

    phase: int
    x: np.ndarray


@dataclass(frozen=True)
class OtaFrame:
    """One OTA round: the chunked transmit matrices, the common scaling
    factor, and the received superposition at the CPU."""

    phase: int
    xbars: np.ndarray  # (L, M, M_i)
    rho_c: float
    z: np.ndarray  # (M, M_i)


def packed_length(phase: int, K: int, tau_u: int) -> int:
    return K * (K + 1) // 2 if phase == 1 else tau_u * K


def num_chunks(length: int, M: int) -> int:
    """Channel uses needed to send ``length`` entries M at a time."""
    return ceil(length / M)


def pack(stats: LocalStatistics, phase: int) -> PackedVector:
    """Serialize one AP's statistic for the given phase.

    Phase 1 keeps only the Gramian's upper triangle (the matrix is Hermitian)
    in row-wise order: ||h_1||^2, h_1^H h_2, ..., h_1^H h_K, ||h_2||^2, ...
    Phase 2 stacks the matched-filter columns t_1, ..., t_tau in time order.
    """
    if phase == 1:
        T = np.asarray(stats.T)
        iu = np.triu_indices(T.shape[0])
        return PackedVector(1, T[iu])
    if phase == 2:
        t = np.asarray(stats.t)
        return PackedVector(2, t.T.reshape(-1))
    raise ValueError(f"phase must be 1 or 2, got {phase}")


def chunk(x, M: int) -> np.ndarray:
    """Arrange a packed vector into an (M, M_i) matrix, zero-padding the tail.

    Column m holds entries m*M ... (m+1)*M - 1 of the vector.
    """
    v = x.x if isinstance(x, PackedVector) else np.asarray(x)
    if M < 1:
        raise ValueError("M must be >= 1")
    mi = num_chunks(v.shape[0], M)
    padded = np.zeros(mi * M, dtype=complex)
    padded[: v.shape[0]] = v
    return padded.reshape(mi, M).T


def unchunk(X: np.ndarray, length: int) -> np.ndarray:
    """Inverse of :func:`chunk`: drop the padding, restore the vector."""
    return X.T.reshape(-1)[:length]


def zf_precoder(G_l: np.ndarray) -> np.ndarray:
    """Local zero-forcing precoder W = G (G^H G)^{-1} for one AP.

    Guarantees G^H W = I_M so the simultaneous transmissions superpose into
    an unscaled sum at the CPU.
    """
    G = np.asarray(G_l)
    gram = G.conj().T @ G
    if np.linalg.cond(gram) > _COND_LIMIT:
        raise SingularChannelError(
            "AP-CPU channel is (numerically) rank deficient; cannot zero-force"
        )
    return G @ np.linalg.inv(gram)


def expected_precoder_gram(
    beta: float,
    N: int,
    M: int,
    method: str = "closed_form",
    draws: int = 100_000,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """E[W^H W] = E[(G^H G)^{-1}] for i.i.d. CN(0, beta) channel entries.

    For N > M the mean of the inverse of the complex Wishart Gramian is
    I_M / (beta * (N - M)).  The Monte Carlo path covers models without a
    closed form and backs the closed form in tests.
    """
    if method == "closed_form":
        if N <= M:
            raise ValueError("closed form needs N > M (mean does not exist at N == M)")
        return np.eye(M) / (beta * (N - M))
    if method == "mc":
        rng = np.random.default_rng(0) if rng is None else rng
        acc = np.zeros((M, M), dtype=complex)
        batch = 50_000
        done = 0
        while done < draws:
            b = min(batch, draws - done)
            G = np.sqrt(beta) * complex_normal(rng, (b, N, M))
            gram = np.einsum("bnm,bnp->bmp", G.conj(), G)
            acc += np.linalg.inv(gram).sum(axis=0)
            done += b
        return acc / draws
    raise ValueError(f"unknown method {method!r}")


def phase_energy(second_moment: np.ndarray, eww: np.ndarray, rho_c: float) -> float:
    """Expected energy rho_c * tr((I kron E[W^H W]) E[x x^H]) of one AP-phase.

    ``second_moment`` is the full correlation (covariance plus mean outer
    product) of the packed vector; it is zero-padded up to a multiple of M so
    the Kronecker-block trace is well defined for any length.
    """
    exx = np.asarray(second_moment)
    M = eww.shape[0]
    D = exx.shape[0]
    mi = num_chunks(D, M)
    total = 0.0
    for m in range(mi):
        lo, hi = m * M, min((m + 1) * M, D)
        blk = np.zeros((M, M), dtype=complex)
        blk[: hi - lo, : hi - lo] = exx[lo:hi, lo:hi]
        total += np.trace(eww @ blk).real
    return rho_c * total


def phase_energy_diag(
    mean: np.ndarray, var: np.ndarray, eww: np.ndarray, rho_c: float
) -> float:
    """Same as :func:`phase_energy` for E[xx^H] = diag(var) + mean mean^H.

    Avoids materializing the (possibly huge) correlation matrix; used by the
    power protocol where the analytic covariances are diagonal.
    """
    mean = np.asarray(mean, dtype=complex)
    var = np.asarray(var, dtype=float)
    M = eww.shape[0]
    D = var.shape[0]
    mi = num_chunks(D, M)
    pad = mi * M - D
    if pad:
        mean = np.concatenate([mean, np.zeros(pad, dtype=complex)])
        var = np.concatenate([var, np.zeros(pad)])
    dvar = var.reshape(mi, M) @ np.diag(eww).real
    mu = mean.reshape(mi, M)
    quad = np.einsum("ci,ij,cj->", mu.conj(), eww, mu).real
    return rho_c * (dvar.sum() + quad)


def average_power(second_moment: np.ndarray, eww: np.ndarray, rho_c: float) -> float:
    """Average transmit power: the phase energy spread over its M_i uses."""
    M = eww.shape[0]
    mi = num_chunks(np.asarray(second_moment).shape[0], M)
    return phase_energy(second_moment, eww, rho_c) / mi


def scale_factor(powers, p_max: float) -> float:
    """Common scaling factor rho_c = P_max / max_l P_l.

    ``powers`` are the per-AP average powers reported with rho_c = 1.  The
    ratio is applied whether or not any AP exceeds the budget, i.e. the APs
    are also boosted up to the constraint boundary when there is headroom.
    """
    p = np.asarray(powers, dtype=float)
    top = p.max()
    if top <= 0:
        raise ValueError("all reported powers are zero; scaling is undefined")
    return p_max / top


def ota_transmit(
    xbars: np.ndarray,
    precoders: np.ndarray,
    channels: np.ndarray,
    rho_c: float,
    rng: np.random.Generator | None = None,
    *,
    noise: bool = True,
) -> np.ndarray:
    """Simultaneous uplink of all APs through their fronthaul channels.

    Z = sum_l sqrt(rho_c) G_l^H W_l Xbar_l + E with unit-variance noise
    columns.  With exact zero-forcing this reduces to
    sqrt(rho_c) sum_l Xbar_l + E.
    """
    xbars = np.asarray(xbars)
    link = np.einsum("lnm,lnp->lmp", np.asarray(channels).conj(), np.asarray(precoders))
    z = np.sqrt(rho_c) * np.einsum("lmn,lnc->mc", link, xbars)
    if noise:
        if rng is None:
            raise ValueError("rng is required when noise is enabled")
        z = z + complex_normal(rng, z.shape)
    return z


def ota_round(
    stats: list[LocalStatistics],
    precoders: np.ndarray,
    channels: np.ndarray,
    phase: int,
    rho_c: float,
    M: int,
    rng: np.random.Generator | None = None,
    *,
    noise: bool = True,
) -> OtaFrame:
    """Pack, chunk and transmit one phase for all APs; returns the frame."""
    xbars = np.stack([chunk(pack(s, phase), M) for s in stats])
    z = ota_transmit(xbars, precoders, channels, rho_c, rng, noise=noise)
    return OtaFrame(phase=phase, xbars=xbars, rho_c=rho_c, z=z)
