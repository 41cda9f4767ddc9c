"""Quasi-cyclic LDPC encoding and normalized min-sum decoding.

The shipped code is the rate-1/2, n = 1944 WLAN code, defined by a 12 x 24
base matrix of circulant shifts with lifting factor z = 81 (entry -1 marks
an all-zero block, entry s >= 0 an identity cyclically shifted by s).  The
base matrix lives in ``data/wlan_n1944_r12_z81.csv`` and any other code can
be supplied through the same prototype CSV or an alist file.

Encoding is systematic, c = [u | p]: the parity part of H is inverted over
GF(2) once (cached) and p = (B^{-1} A) u follows by a boolean product.

Decoding is flooding normalized min-sum (scale 0.75, 50 iterations default)
with per-iteration syndrome checks for early exit; the message updates are
vectorized over the edge list with segment reductions, and a whole batch of
frames decodes in one call.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.sparse as sp

MINSUM_SCALE = 0.75
MAX_ITERS = 50

WLAN_N1944_R12 = "wlan_n1944_r12_z81.csv"


class AlistParseError(ValueError):
    """Malformed alist file; message carries the offending line number."""


@dataclass
class ParityCheckMatrix:
    """Sparse binary parity-check matrix plus cached decode/encode tables."""

    n: int  # codeword length (columns)
    m: int  # checks (rows)
    row_cols: list  # list of np.int64 arrays, columns of each row
    base: np.ndarray | None = None  # prototype of circulant shifts, if QC
    z: int | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def k(self) -> int:
        return self.n - self.m

    def as_csr(self) -> sp.csr_matrix:
        if "csr" not in self._cache:
            rows = np.concatenate(
                [np.full(len(c), r, dtype=np.int64) for r, c in enumerate(self.row_cols)]
            )
            cols = np.concatenate(self.row_cols)
            data = np.ones(cols.shape[0], dtype=np.int8)
            self._cache["csr"] = sp.csr_matrix((data, (rows, cols)), shape=(self.m, self.n))
        return self._cache["csr"]

    def as_dense(self) -> np.ndarray:
        return np.asarray(self.as_csr().todense(), dtype=np.uint8)

    def check(self, codeword: np.ndarray) -> bool:
        """Whether every parity equation is satisfied (mod 2)."""
        c = np.asarray(codeword, dtype=np.uint8)
        syn = self.as_csr().dot(c.astype(np.int32)) % 2
        return not np.any(syn)


def from_row_cols(row_cols: list, n: int, base=None, z=None) -> ParityCheckMatrix:
    rc = [np.asarray(sorted(set(map(int, c))), dtype=np.int64) for c in row_cols]
    for r, cols in enumerate(rc):
        if len(cols) and (cols[0] < 0 or cols[-1] >= n):
            raise ValueError(f"row {r} has column indices outside [0, {n})")
    return ParityCheckMatrix(n=n, m=len(rc), row_cols=rc, base=base, z=z)


def expand_prototype(base: np.ndarray, z: int) -> ParityCheckMatrix:
    """Lift a base matrix of circulant shifts into the full binary matrix.

    Entry -1 becomes a z x z zero block; entry s in [0, z) becomes the
    identity with rows cyclically shifted so that block-row i has its one in
    column (i + s) mod z.
    """
    base = np.asarray(base, dtype=np.int64)
    if base.ndim != 2:
        raise ValueError("base matrix must be 2-D")
    if np.any(base < -1) or np.any(base >= z):
        raise ValueError(f"shifts must lie in {{-1}} or [0, {z})")
    mb, nb = base.shape
    row_cols = [[] for _ in range(mb * z)]
    for i in range(mb):
        for j in range(nb):
            s = base[i, j]
            if s < 0:
                continue
            rows = i * z + np.arange(z)
            cols = j * z + (np.arange(z) + s) % z
            for r, c in zip(rows, cols):
                row_cols[r].append(c)
    return from_row_cols(row_cols, nb * z, base=base, z=z)


def load_prototype_csv(path) -> tuple[np.ndarray, int]:
    """Read a prototype CSV: first line ``z=<int>``, then shift rows."""
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("z="):
        raise ValueError("prototype file must start with 'z=<lift>'")
    z = int(lines[0][2:])
    base = np.array([[int(v) for v in ln.split(",")] for ln in lines[1:]], dtype=np.int64)
    return base, z


def load_wlan_code(name: str = WLAN_N1944_R12) -> ParityCheckMatrix:
    """The packaged rate-1/2 n=1944 WLAN code."""
    ref = resources.files("cellfree_ota").joinpath("data", name)
    with resources.as_file(ref) as path:
        base, z = load_prototype_csv(path)
    return expand_prototype(base, z)


def parse_alist(path) -> ParityCheckMatrix:
    """Parse the plain-text alist sparse-matrix interchange format.

    Layout: "n m", "max_col_deg max_row_deg", column degrees, row degrees,
    then per-column and per-row 1-based index lists (0 entries are padding).
    Degree lists and both index sections are cross-validated.
    """
    tokens: list[tuple[int, str]] = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        for tok in line.split():
            tokens.append((lineno, tok))
    pos = 0

    def take(count: int) -> list[int]:
        nonlocal pos
        if pos + count > len(tokens):
            lineno = tokens[-1][0] if tokens else 0
            raise AlistParseError(f"file truncated near line {lineno}")
        out = []
        for lineno, tok in tokens[pos : pos + count]:
            try:
                out.append(int(tok))
            except ValueError:
                raise AlistParseError(f"line {lineno}: not an integer: {tok!r}") from None
        pos += count
        return out

    n, m = take(2)
    if n < 1 or m < 1:
        raise AlistParseError("line 1: dimensions must be positive")
    max_col, max_row = take(2)
    col_deg = take(n)
    row_deg = take(m)
    if max(col_deg, default=0) > max_col or max(row_deg, default=0) > max_row:
        raise AlistParseError("declared maximum degree exceeded by degree list")

    col_lists = []
    for j in range(n):
        entries = take(max_col)
        nz = [e - 1 for e in entries if e != 0]
        if len(nz) != col_deg[j]:
            raise AlistParseError(f"column {j + 1}: degree mismatch")
        if any(e < 0 or e >= m for e in nz):
            raise AlistParseError(f"column {j + 1}: row index out of range")
        col_lists.append(nz)

    row_cols: list[list[int]] = [[] for _ in range(m)]
    for i in range(m):
        entries = take(max_row)
        nz = [e - 1 for e in entries if e != 0]
        if len(nz) != row_deg[i]:
            raise AlistParseError(f"row {i + 1}: degree mismatch")
        if any(e < 0 or e >= n for e in nz):
            raise AlistParseError(f"row {i + 1}: column index out of range")
        row_cols[i] = nz

    # the two sections must describe the same matrix
    from_cols: list[list[int]] = [[] for _ in range(m)]
    for j, rows in enumerate(col_lists):
        for r in rows:
            from_cols[r].append(j)
    for i in range(m):
        if sorted(from_cols[i]) != sorted(row_cols[i]):
            raise AlistParseError(f"row {i + 1}: column and row sections disagree")
    return from_row_cols(row_cols, n)


def write_alist(pcm: ParityCheckMatrix, path) -> None:
    """Serialize to alist (fixed-width sections padded with zeros)."""
    col_rows: list[list[int]] = [[] for _ in range(pcm.n)]
    for r, cols in enumerate(pcm.row_cols):
        for c in cols:
            col_rows[c].append(r)
    max_col = max((len(v) for v in col_rows), default=0)
    max_row = max((len(v) for v in pcm.row_cols), default=0)
    lines = [f"{pcm.n} {pcm.m}", f"{max_col} {max_row}"]
    lines.append(" ".join(str(len(v)) for v in col_rows))
    lines.append(" ".join(str(len(v)) for v in pcm.row_cols))
    for v in col_rows:
        padded = [i + 1 for i in v] + [0] * (max_col - len(v))
        lines.append(" ".join(map(str, padded)))
    for v in pcm.row_cols:
        padded = [int(i) + 1 for i in v] + [0] * (max_row - len(v))
        lines.append(" ".join(map(str, padded)))
    Path(path).write_text("\n".join(lines) + "\n")


def _encoder_tables(pcm: ParityCheckMatrix) -> np.ndarray:
    """Solve the parity part over GF(2): returns S with p = S @ u mod 2.

    Requires the last m columns of H to form an invertible block (true for
    the shipped staircase-structured code); raises otherwise.
    """
    if "encoder" in pcm._cache:
        return pcm._cache["encoder"]
    H = pcm.as_dense().astype(bool)
    k = pcm.k
    A = H[:, :k].copy()
    B = H[:, k:].copy()
    m = pcm.m
    # invert B by Gauss-Jordan over GF(2), applying the same ops to [A | I]
    aug = np.concatenate([B, A, np.eye(m, dtype=bool)], axis=1)
    for col in range(m):
        pivots = np.flatnonzero(aug[col:, col]) + col
        if pivots.size == 0:
            raise np.linalg.LinAlgError(
                "parity part of H is singular over GF(2); cannot encode systematically"
            )
        piv = pivots[0]
        if piv != col:
            aug[[col, piv]] = aug[[piv, col]]
        hits = np.flatnonzero(aug[:, col])
        hits = hits[hits != col]
        aug[hits] ^= aug[col]
    S = aug[:, m : m + k]  # B^{-1} A
    pcm._cache["encoder"] = S
    return S


def encode(bits: np.ndarray, pcm: ParityCheckMatrix) -> np.ndarray:
    """Systematic encoding: c = [u | p] with H c = 0 (mod 2)."""
    u = np.asarray(bits, dtype=np.uint8)
    squeeze = u.ndim == 1
    u = np.atleast_2d(u)
    if u.shape[1] != pcm.k:
        raise ValueError(f"message length must be {pcm.k}, got {u.shape[1]}")
    S = _encoder_tables(pcm)
    p = (u.astype(np.int32) @ S.T.astype(np.int32)) % 2
    c = np.concatenate([u, p.astype(np.uint8)], axis=1)
    return c[0] if squeeze else c


def _decode_tables(pcm: ParityCheckMatrix):
    if "decode" in pcm._cache:
        return pcm._cache["decode"]
    degrees = [len(c) for c in pcm.row_cols]
    if min(degrees, default=0) < 2:
        raise ValueError("min-sum decoding needs every check degree >= 2")
    edge_row = np.concatenate(
        [np.full(len(c), r, dtype=np.int64) for r, c in enumerate(pcm.row_cols)]
    )
    edge_col = np.concatenate(pcm.row_cols).astype(np.int64)
    row_starts = np.concatenate([[0], np.cumsum(degrees)[:-1]])
    n_edges = edge_col.shape[0]
    col_sum = sp.csr_matrix(
        (np.ones(n_edges), (np.arange(n_edges), edge_col)),
        shape=(n_edges, pcm.n),
    )
    H32 = pcm.as_csr().astype(np.int32)
    tables = (edge_row, edge_col, row_starts.astype(np.int64), col_sum, H32)
    pcm._cache["decode"] = tables
    return tables


def decode_minsum(
    llrs: np.ndarray,
    pcm: ParityCheckMatrix,
    max_iters: int = MAX_ITERS,
    scale: float = MINSUM_SCALE,
):
    """Normalized min-sum decoding; positive LLR favors bit 0.

    ``llrs`` is (n,) or (frames, n).  Returns (bits, converged, iterations)
    with matching leading shape; ``iterations`` is the count at which the
    syndrome first vanished (or ``max_iters`` if it never did), and each
    frame's output freezes at its first valid codeword.
    """
    L0 = np.asarray(llrs, dtype=np.float64)
    squeeze = L0.ndim == 1
    L0 = np.atleast_2d(L0)
    if L0.shape[1] != pcm.n:
        raise ValueError(f"LLR length must be {pcm.n}, got {L0.shape[1]}")
    if not np.all(np.isfinite(L0)):
        raise ValueError("LLRs must be finite")
    F = L0.shape[0]
    edge_row, edge_col, row_starts, col_sum, H = _decode_tables(pcm)
    E = edge_col.shape[0]
    eidx = np.arange(E)

    q = L0[:, edge_col].copy()  # variable-to-check messages
    out_bits = np.zeros((F, pcm.n), dtype=np.uint8)
    out_iter = np.full(F, max_iters, dtype=np.int64)
    done = np.zeros(F, dtype=bool)

    for it in range(1, max_iters + 1):
        # check update: extrinsic min magnitude and sign product per row
        a = np.abs(q)
        sgn = np.where(q < 0, -1.0, 1.0)
        min1 = np.minimum.reduceat(a, row_starts, axis=1)
        cand = np.where(a == min1[:, edge_row], eidx[None, :], E)
        first = np.minimum.reduceat(cand, row_starts, axis=1)
        b = a.copy()
        np.put_along_axis(b, first, np.inf, axis=1)
        min2 = np.minimum.reduceat(b, row_starts, axis=1)
        ext_min = np.where(eidx[None, :] == first[:, edge_row], min2[:, edge_row], min1[:, edge_row])
        rowprod = np.multiply.reduceat(sgn, row_starts, axis=1)
        ext_sgn = rowprod[:, edge_row] * sgn
        r = scale * ext_sgn * ext_min

        # variable update and posterior
        post = L0 + col_sum.T.dot(r.T).T
        q = post[:, edge_col] - r

        bits = (post < 0).astype(np.uint8)
        syn = H.dot(bits.T.astype(np.int32)).T % 2
        ok = ~np.asarray(syn).any(axis=1)
        newly = ok & ~done
        if np.any(newly):
            out_bits[newly] = bits[newly]
            out_iter[newly] = it
            done |= newly
        if done.all():
            break
    out_bits[~done] = (post[~done] < 0).astype(np.uint8)
    converged = done.copy()
    if squeeze:
        return out_bits[0], bool(converged[0]), int(out_iter[0])
    return out_bits, converged, out_iter
