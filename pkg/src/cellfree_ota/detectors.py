"""Symbol detection from (exact or estimated) summed statistics.

Linear detectors operate directly on the Gramian/matched-filter pair.  The
maximum-likelihood and soft-output paths first whiten: with H_bar = T^{1/2}
and y_bar = T^{-1/2} t the effective model is y_bar = sqrt(rho) H_bar s + w
with identity-covariance noise, so minimum distance over the constellation
lattice is optimal.  The tree search enumerates that lattice depth-first
with distance-sorted children and a shrinking radius, which makes it exact:
it returns the same minimizer as brute-force enumeration.

Estimated Gramians can be slightly indefinite; every path clips eigenvalues
at a small floor before square roots or inverses and reports how many were
clipped (zero when the statistics are exact and the system is tall).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np
from scipy.special import logsumexp

from .modulation import Constellation

EIG_FLOOR = 1e-12
_COND_LIMIT = 1e12
EXHAUSTIVE_BUDGET = 2**20
# below this many hypotheses, vectorized enumeration beats the tree search
_ENUM_FAST_PATH = 4096


class SingularGramianError(np.linalg.LinAlgError):
    """Gramian estimate too ill-conditioned for the prior-free detector."""


def clip_psd(T: np.ndarray, floor: float = EIG_FLOOR):
    """Project (batched) Hermitian matrices onto eigenvalues >= floor.

    Returns (clipped matrix, eigenvalues, eigenvectors, clip count); the
    factors are handed back so callers can reuse the decomposition.
    """
    T = np.asarray(T)
    Th = 0.5 * (T + np.swapaxes(T.conj(), -1, -2))
    w, U = np.linalg.eigh(Th)
    n_clipped = int(np.count_nonzero(w < floor))
    wc = np.maximum(w, floor)
    Tc = (U * wc[..., None, :]) @ np.swapaxes(U.conj(), -1, -2)
    return Tc, wc, U, n_clipped


def lmmse_detect(T: np.ndarray, t: np.ndarray, rho_ul: float) -> np.ndarray:
    """Soft symbol estimate sqrt(rho) (rho T + I)^{-1} t (batched)."""
    Tc, _, _, _ = clip_psd(T)
    K = Tc.shape[-1]
    A = rho_ul * Tc + np.eye(K)
    return np.sqrt(rho_ul) * np.linalg.solve(A, np.asarray(t))


def ls_detect(T: np.ndarray, t: np.ndarray, rho_ul: float) -> np.ndarray:
    """Zero-forcing estimate T^{-1} t / sqrt(rho) for a single block."""
    Tc, w, _, _ = clip_psd(T)
    if w.max() / w.min() > _COND_LIMIT:
        raise SingularGramianError(
            f"Gramian condition number {w.max() / w.min():.2e} exceeds limit"
        )
    return np.linalg.solve(Tc, np.asarray(t)) / np.sqrt(rho_ul)


@dataclass(frozen=True)
class WhitenedModel:
    """Square-root channel and whitened observations for one block."""

    H_bar: np.ndarray  # (K, K) = T^{1/2}
    y_bar: np.ndarray  # (K,) or (K, tau) = T^{-1/2} t
    clip_count: int


def whiten(T: np.ndarray, t: np.ndarray, floor: float = EIG_FLOOR) -> WhitenedModel:
    """Whitening transform of one block's statistics."""
    _, w, U, n_clipped = clip_psd(T, floor)
    H_bar = (U * np.sqrt(w)[..., None, :]) @ U.conj().T
    y_bar = (U * (1.0 / np.sqrt(w))[..., None, :]) @ (U.conj().T @ np.asarray(t))
    return WhitenedModel(H_bar=H_bar, y_bar=y_bar, clip_count=n_clipped)


@lru_cache(maxsize=8)
def _lattice(size: int, K: int) -> np.ndarray:
    """All |S|^K index combinations, shape (K, |S|^K)."""
    combos = np.array(list(product(range(size), repeat=K)), dtype=np.int64)
    return np.ascontiguousarray(combos.T)


def _qr_phase(A: np.ndarray):
    """QR factors with the triangular diagonal rotated real-nonnegative."""
    Q, R = np.linalg.qr(A)
    d = np.diagonal(R)
    mag = np.abs(d)
    phase = np.where(mag > 0, d.conj() / np.where(mag > 0, mag, 1.0), 1.0)
    return Q, phase[:, None] * R, phase


def _reduce_y(Q: np.ndarray, phase: np.ndarray, y: np.ndarray) -> np.ndarray:
    yt = Q.conj().T @ np.asarray(y)
    return phase[:, None] * yt if yt.ndim == 2 else phase * yt


def _canonical_metrics(R: np.ndarray, ytil: np.ndarray, S: np.ndarray) -> np.ndarray:
    """||ytil - R s||^2 per hypothesis column; the single shared float path
    that makes tree-search and enumeration outputs agree bit for bit."""
    diff = ytil[:, None] - R @ S
    return np.sum(np.abs(diff) ** 2, axis=0)


class SphereSearch:
    """Depth-first minimum-distance search over the constellation lattice.

    Children at each level are visited in order of distance from the
    per-level center, so the first leaf is the Babai point; the search radius
    then shrinks to the best leaf and partial metrics prune strictly.  Since
    siblings are distance-sorted, one violation prunes the whole sibling
    list.  The returned minimizer is exactly the global one.
    """

    def __init__(self, A: np.ndarray, points: np.ndarray):
        self.K = A.shape[1]
        self.points = np.asarray(points)
        self.Q, self.R, self.phase = _qr_phase(np.asarray(A))

    def reduce(self, y: np.ndarray) -> np.ndarray:
        return _reduce_y(self.Q, self.phase, y)

    def argmin(
        self,
        ytil: np.ndarray,
        fixed_level: int | None = None,
        allowed: np.ndarray | None = None,
    ) -> tuple[np.ndarray, float]:
        """Best index vector for one reduced observation (see ``reduce``).

        ``fixed_level``/``allowed`` restrict one user's candidate points,
        which is how per-bit counter-hypotheses are searched.
        """
        R = self.R
        K = self.K
        pts = self.points
        P = pts.shape[0]
        rdiag = np.diagonal(R).real

        best_metric = np.inf
        best_idx: np.ndarray | None = None
        order = np.zeros((K, P), dtype=np.int64)
        n_cand = np.zeros(K, dtype=np.int64)
        ptr = np.zeros(K, dtype=np.int64)
        partial = np.zeros(K + 1)
        chosen = np.zeros(K, dtype=np.int64)
        # interf[k] = sum_{j>k} R[:, j] s_j along the current path
        interf = np.zeros((K, K), dtype=complex)

        def enter(level: int) -> None:
            resid = ytil[level] - interf[level][level]
            if fixed_level == level and allowed is not None:
                cand = allowed
            else:
                cand = np.arange(P)
            terms = np.abs(resid - rdiag[level] * pts[cand]) ** 2
            o = np.argsort(terms, kind="stable")
            order[level, : cand.shape[0]] = cand[o]
            n_cand[level] = cand.shape[0]
            ptr[level] = 0

        level = K - 1
        enter(level)
        while True:
            if ptr[level] >= n_cand[level]:
                level += 1
                if level >= K:
                    break
                ptr[level] += 1
                continue
            p = order[level, ptr[level]]
            term = np.abs(ytil[level] - interf[level][level] - rdiag[level] * pts[p]) ** 2
            metric = partial[level + 1] + term
            if metric >= best_metric:
                # siblings are sorted by this term: nothing further can win
                ptr[level] = n_cand[level]
                continue
            chosen[level] = p
            if level == 0:
                best_metric = metric
                best_idx = chosen.copy()
                ptr[level] += 1
                continue
            partial[level] = metric
            interf[level - 1] = interf[level] + R[:, level] * pts[p]
            level -= 1
            enter(level)
        if best_idx is None:
            raise RuntimeError("tree search found no candidates")
        return best_idx, best_metric


def _search_space(const: Constellation, K: int) -> int:
    return const.size**K


def ml_detect(
    model: WhitenedModel,
    rho_ul: float,
    const: Constellation,
    method: str = "auto",
    budget: int = EXHAUSTIVE_BUDGET,
) -> np.ndarray:
    """Minimum-distance symbol decision over the whole constellation lattice.

    ``method`` is "sphere", "exhaustive" or "auto" (enumerate when the
    hypothesis count is small enough to vectorize, tree-search otherwise).
    """
    y = np.asarray(model.y_bar)
    if y.ndim != 1:
        raise ValueError("ml_detect handles one channel use at a time")
    K = model.H_bar.shape[0]
    space = _search_space(const, K)
    if method == "auto":
        method = "exhaustive" if space <= _ENUM_FAST_PATH else "sphere"
    if method == "exhaustive" and space > budget:
        raise ValueError(
            f"{space} hypotheses exceed the exhaustive budget {budget}; "
            "use the sphere search"
        )
    A = np.sqrt(rho_ul) * model.H_bar
    if method == "exhaustive":
        Q, R, phase = _qr_phase(A)
        ytil = _reduce_y(Q, phase, y)
        S_idx = _lattice(const.size, K)
        metrics = _canonical_metrics(R, ytil, const.points[S_idx])
        return const.points[S_idx[:, np.argmin(metrics)]]
    if method == "sphere":
        search = SphereSearch(A, const.points)
        idx, _ = search.argmin(search.reduce(y))
        return const.points[idx]
    raise ValueError(f"unknown method {method!r}")


def soft_llrs(
    model: WhitenedModel,
    rho_ul: float,
    const: Constellation,
    mode: str = "maxlog",
    method: str = "auto",
    budget: int = EXHAUSTIVE_BUDGET,
) -> np.ndarray:
    """Per-bit log-likelihood ratios ln P(b=1)/P(b=0), shape (K, bits/symbol).

    ``mode="exact"`` sums the Gaussian likelihood over each bit coset in the
    log domain; ``mode="maxlog"`` keeps only the best hypothesis per coset,
    i.e. the LLR becomes the difference of coset minimum distances.  The
    minima are located by enumeration or by per-bit constrained tree searches
    with counter-hypothesis completion; both locate the same hypotheses and
    evaluate their metrics through the same float path.
    """
    y = np.asarray(model.y_bar)
    if y.ndim != 1:
        raise ValueError("soft_llrs handles one channel use at a time")
    K = model.H_bar.shape[0]
    space = _search_space(const, K)
    bps = const.bits_per_symbol
    if method == "auto":
        if mode == "exact":
            method = "exhaustive"
        else:
            method = "exhaustive" if space <= _ENUM_FAST_PATH else "sphere"
    if mode == "exact" and method == "sphere":
        raise ValueError("exact LLRs require enumeration")
    if method == "exhaustive" and space > budget:
        raise ValueError(f"{space} hypotheses exceed the exhaustive budget {budget}")

    A = np.sqrt(rho_ul) * model.H_bar

    if method == "exhaustive":
        Q, R, phase = _qr_phase(A)
        ytil = _reduce_y(Q, phase, y)
        S_idx = _lattice(const.size, K)
        S = const.points[S_idx]
        metrics = _canonical_metrics(R, ytil, S)
        bits = const.bit_table[S_idx]  # (K, P, bps)
        llrs = np.empty((K, bps))
        for k in range(K):
            for b in range(bps):
                one = bits[k, :, b] == 1
                if mode == "exact":
                    llrs[k, b] = logsumexp(-metrics[one]) - logsumexp(-metrics[~one])
                else:
                    # batch metrics pick the coset winners; the winners are
                    # then re-evaluated one column at a time so the value
                    # takes the same float path as the tree search
                    j0 = np.flatnonzero(~one)[np.argmin(metrics[~one])]
                    j1 = np.flatnonzero(one)[np.argmin(metrics[one])]
                    d0 = _canonical_metrics(R, ytil, S[:, [j0]])[0]
                    d1 = _canonical_metrics(R, ytil, S[:, [j1]])[0]
                    llrs[k, b] = d0 - d1
        return llrs

    # tree-search path (max-log): unconstrained best, then one constrained
    # search per bit for the counter hypothesis
    search = SphereSearch(A, const.points)
    ytil = search.reduce(y)
    best_idx, _ = search.argmin(ytil)
    m_best = float(_canonical_metrics(search.R, ytil, const.points[best_idx][:, None])[0])
    best_bits = const.bit_table[best_idx]  # (K, bps)
    llrs = np.empty((K, bps))
    for k in range(K):
        for b in range(bps):
            flip = 1 - best_bits[k, b]
            allowed = np.flatnonzero(const.bit_table[:, b] == flip)
            idx, _ = search.argmin(ytil, fixed_level=k, allowed=allowed)
            m_ctr = float(
                _canonical_metrics(search.R, ytil, const.points[idx][:, None])[0]
            )
            d0, d1 = (m_best, m_ctr) if best_bits[k, b] == 0 else (m_ctr, m_best)
            llrs[k, b] = d0 - d1
    return llrs


def block_maxlog_llrs(
    model: WhitenedModel,
    rho_ul: float,
    const: Constellation,
    budget: int = EXHAUSTIVE_BUDGET,
) -> np.ndarray:
    """Max-log LLRs for a whole block at once, shape (K, tau, bits/symbol).

    Vectorized enumeration over channel uses; same minima and metric path as
    calling :func:`soft_llrs` per use, but far faster for the coded pipeline.
    """
    Y = np.asarray(model.y_bar)
    if Y.ndim == 1:
        Y = Y[:, None]
    K = model.H_bar.shape[0]
    space = _search_space(const, K)
    if space > budget:
        raise ValueError("hypothesis count exceeds the enumeration budget")
    A = np.sqrt(rho_ul) * model.H_bar
    Q, R, phase = _qr_phase(A)
    Ytil = _reduce_y(Q, phase, Y)
    S_idx = _lattice(const.size, K)
    G = R @ const.points[S_idx]  # (K, P)
    diff = Ytil.T[:, :, None] - G[None, :, :]
    metrics = np.sum(np.abs(diff) ** 2, axis=1)  # (tau, P)
    bits = const.bit_table[S_idx]  # (K, P, bps)
    tau = Y.shape[1]
    bps = const.bits_per_symbol
    llrs = np.empty((K, tau, bps))
    for k in range(K):
        for b in range(bps):
            one = bits[k, :, b] == 1
            llrs[k, :, b] = metrics[:, ~one].min(axis=1) - metrics[:, one].min(axis=1)
    return llrs
