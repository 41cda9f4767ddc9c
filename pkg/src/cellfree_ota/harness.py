"""Monte Carlo experiment drivers, metrics and CSV output.

Every experiment is a sweep; every sweep point runs vectorized batches of
independent trials.  A trial draws a fresh user drop (the infrastructure
ring is deterministic), fresh fading, symbols and noise, runs the two
fronthaul phases with the per-drop analytic power protocol, estimates the
summed statistics at the CPU and feeds them to the requested detector.  The
AP->CPU fading is drawn once per experiment run and held (the precoders are
computed once and reused), which is immaterial to the received signal since
zero-forcing removes it exactly, and the power protocol works with
expectations anyway.

Reproducibility: every batch owns a Philox-family substream keyed by
(master seed, experiment id, point index, batch index), so results are
byte-identical for identical (config, seed) regardless of stopping points.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import combiner, detectors, fronthaul, ldpc
from .channel import complex_normal
from .config import SystemConfig
from .geometry import ap_cpu_betas, generate_layout, path_loss_db
from .modulation import Constellation, constellation
from .moments import phase1_entries, phase2_entries, upper_tri_maps

EXPERIMENT_IDS = {
    "nmse": 1,
    "ser_vs_snr": 2,
    "ser_vs_pmax": 3,
    "coded_ber": 4,
    "validate_moments": 5,
    "power_check": 6,
}

_FRONTHAUL_SALT = 0x47
_DROP_SALT = 0xD0


def substream(seed: int, exp_id: int, point: int, batch: int) -> np.random.Generator:
    return np.random.default_rng([seed, exp_id, point, batch])


@dataclass(frozen=True)
class ResultRow:
    value: float
    metric: float
    stderr: float
    trials: int
    label: str


@dataclass
class ExperimentResult:
    rows: list
    config_fingerprint: str
    seed: int

    def write_csv(self, path) -> None:
        lines = [
            f"# config_sha256={self.config_fingerprint} seed={self.seed}",
            "value,metric,stderr,trials,label",
        ]
        for r in self.rows:
            # plain shortest-roundtrip floats: numpy scalar reprs would leak
            lines.append(
                f"{float(r.value)!r},{float(r.metric)!r},{float(r.stderr)!r},"
                f"{int(r.trials)},{r.label}"
            )
        with open(path, "w", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")

    def by_label(self) -> dict:
        out: dict = {}
        for r in self.rows:
            out.setdefault(r.label, []).append(r)
        return out

    def find(self, value: float, label: str) -> ResultRow:
        for r in self.rows:
            if r.label == label and np.isclose(r.value, value):
                return r
        raise KeyError((value, label))


@dataclass(frozen=True)
class FronthaulLink:
    """One run's AP->CPU channel draw plus everything derived from it."""

    G: np.ndarray  # (L, N, M)
    W: np.ndarray  # (L, N, M) zero-forcing precoders
    link: np.ndarray  # (L, M, M) = G^H W, identity up to float error
    eww: np.ndarray  # (L, M, M) analytic E[W^H W]

    @classmethod
    def draw(cls, cfg: SystemConfig, rng: np.random.Generator) -> "FronthaulLink":
        from .channel import sample_ap_cpu

        layout = generate_layout(cfg, rng)  # only the deterministic ring is used
        G = sample_ap_cpu(layout, cfg.N, cfg.M, rng)
        W = np.stack([fronthaul.zf_precoder(G[l]) for l in range(cfg.L)])
        link = np.einsum("lnm,lnp->lmp", G.conj(), W)
        betas = ap_cpu_betas(layout)
        if cfg.N > cfg.M:
            eww = np.stack(
                [fronthaul.expected_precoder_gram(b, cfg.N, cfg.M) for b in betas]
            )
        else:
            eww = np.stack(
                [
                    fronthaul.expected_precoder_gram(
                        b, cfg.N, cfg.M, method="mc", rng=rng
                    )
                    for b in betas
                ]
            )
        return cls(G=G, W=W, link=link, eww=eww)


@dataclass
class SimBatch:
    """Everything one batch of trials produces, fronthaul included."""

    B: int
    sym_idx: np.ndarray  # (B, K, tau) transmitted constellation indices
    T_sum: np.ndarray  # (B, K, K) exact Gramian sum
    t_sum: np.ndarray  # (B, K, tau) exact matched-filter sum
    x1: np.ndarray  # (B, D1) exact packed phase-1 sum
    x2: np.ndarray  # (B, D2)
    mu1: np.ndarray  # (B, D1) prior mean of x1
    c1: np.ndarray  # (B, D1) prior variance of x1
    c2: np.ndarray  # (B, K) prior variance of x2 per channel use
    rho1: dict  # p_max_norm -> (B,) phase-1 scaling factors
    rho2: dict
    xeff1: np.ndarray  # (B, M, M1) received superposition before scaling/noise
    xeff2: np.ndarray
    e1: np.ndarray  # (B, M, M1) fronthaul noise
    e2: np.ndarray
    x1_ap: np.ndarray | None = None  # (B, L, D1) per-AP vectors, kept on request
    x2_ap: np.ndarray | None = None
    q1: np.ndarray | None = None  # (B, L) per-AP unit-scaling powers, on request
    q2: np.ndarray | None = None


class LinkSimulator:
    """Vectorized trial engine for one sweep point."""

    def __init__(
        self,
        cfg: SystemConfig,
        rho_ul: float,
        fh: FronthaulLink,
        p_max_norms: tuple,
        tau_u: int | None = None,
        fixed_gamma: np.ndarray | None = None,
    ):
        self.cfg = cfg
        self.rho_ul = float(rho_ul)
        self.fh = fh
        self.p_max_norms = tuple(p_max_norms)
        self.tau = cfg.tau_u if tau_u is None else tau_u
        self.const = constellation(cfg.modulation)
        self.fixed_gamma = fixed_gamma

        K, L, M = cfg.K, cfg.L, cfg.M
        self.rows, self.cols, self.diag_pos = upper_tri_maps(K)
        self.D1 = K * (K + 1) // 2
        self.D2 = self.tau * K
        self.M1 = fronthaul.num_chunks(self.D1, M)
        self.M2 = fronthaul.num_chunks(self.D2, M)

        # deterministic infrastructure ring (independent of the UE drop)
        self._layout = generate_layout(cfg, np.random.default_rng(0))
        self.ap_xy = self._layout.ap_pos[:, :2]
        self.ap_height = cfg.ap_height_m

        w_diag = np.einsum("lmm->lm", fh.eww).real  # (L, M)
        idx1 = np.arange(self.D1) % M
        self.wvec1 = w_diag[:, idx1]  # (L, D1)
        pos2 = (np.arange(self.D2) % M).reshape(self.tau, K)
        self.wsum2 = w_diag[:, pos2].sum(axis=1)  # (L, K)

    # -- drawing ---------------------------------------------------------

    def _gamma(self, B: int, rng: np.random.Generator) -> np.ndarray:
        """Per-trial normalized large-scale gains, shape (B, K, L)."""
        if self.fixed_gamma is not None:
            return np.broadcast_to(self.fixed_gamma, (B,) + self.fixed_gamma.shape)
        cfg = self.cfg
        ue_xy = rng.uniform(0.0, cfg.area_side_m, size=(B, cfg.K, 2))
        d2 = np.sum((ue_xy[:, :, None, :] - self.ap_xy[None, None, :, :]) ** 2, axis=-1)
        d = np.sqrt(d2 + self.ap_height**2)
        beta = 10.0 ** (path_loss_db(d) / 10.0)
        return beta / beta.mean(axis=(1, 2))[:, None, None]

    def draw(
        self,
        B: int,
        rng: np.random.Generator,
        sym_idx: np.ndarray | None = None,
        keep_per_ap: bool = False,
    ) -> SimBatch:
        cfg = self.cfg
        K, L, N, M = cfg.K, cfg.L, cfg.N, cfg.M
        tau = self.tau
        rho = self.rho_ul

        gamma = self._gamma(B, rng)  # (B, K, L)
        g = complex_normal(rng, (B, L, N, K))
        H = g * np.sqrt(gamma).transpose(0, 2, 1)[:, :, None, :]

        if sym_idx is None:
            sym_idx = rng.integers(0, self.const.size, size=(B, K, tau))
        s = self.const.points[sym_idx]  # (B, K, tau)

        noise = complex_normal(rng, (B, L, N, tau))
        Y = np.sqrt(rho) * np.einsum("blnk,bkt->blnt", H, s) + noise
        T = np.einsum("blni,blnj->blij", H.conj(), H)  # (B, L, K, K)
        t = np.einsum("blni,blnt->blit", H.conj(), Y)  # (B, L, K, tau)

        x1l = T[:, :, self.rows, self.cols]  # (B, L, D1)
        x2l = t.transpose(0, 1, 3, 2).reshape(B, L, self.D2)

        # per-drop analytic moments (what the protocol and priors use)
        tr = N * gamma  # (B, K, L) traces of R_kl
        trrr = N * gamma[:, :, None, :] * gamma[:, None, :, :]
        mu1_ap, c1_ap = phase1_entries(tr, trrr)  # (B, L, D1)
        c2_ap, c2_tot = phase2_entries(tr, trrr, rho)  # (B, L, K), (B, K)

        q1 = (
            np.einsum("bld,ld->bl", c1_ap, self.wvec1)
            + self._mean_quad(mu1_ap)
        ) / self.M1
        q2 = np.einsum("blk,lk->bl", c2_ap, self.wsum2) / self.M2
        rho1 = {p: p / q1.max(axis=1) for p in self.p_max_norms}
        rho2 = {p: p / q2.max(axis=1) for p in self.p_max_norms}

        xeff1 = self._superpose(x1l, self.M1)
        xeff2 = self._superpose(x2l, self.M2)
        e1 = complex_normal(rng, (B, M, self.M1))
        e2 = complex_normal(rng, (B, M, self.M2))

        return SimBatch(
            B=B,
            sym_idx=sym_idx,
            T_sum=T.sum(axis=1),
            t_sum=t.sum(axis=1),
            x1=x1l.sum(axis=1),
            x2=x2l.sum(axis=1),
            mu1=mu1_ap.sum(axis=1),
            c1=c1_ap.sum(axis=1),
            c2=c2_tot,
            rho1=rho1,
            rho2=rho2,
            xeff1=xeff1,
            xeff2=xeff2,
            e1=e1,
            e2=e2,
            x1_ap=x1l if keep_per_ap else None,
            x2_ap=x2l if keep_per_ap else None,
            q1=q1 if keep_per_ap else None,
            q2=q2 if keep_per_ap else None,
        )

    def _mean_quad(self, mu_ap: np.ndarray) -> np.ndarray:
        """sum over chunks of mu_c^H E[W^H W] mu_c, vectorized (B, L)."""
        B, L, D = mu_ap.shape
        M = self.cfg.M
        pad = self.M1 * M - D
        mu = np.pad(mu_ap, ((0, 0), (0, 0), (0, pad))).reshape(B, L, self.M1, M)
        return np.einsum("blci,lij,blcj->bl", mu.conj(), self.fh.eww, mu).real

    def _superpose(self, xl: np.ndarray, mi: int) -> np.ndarray:
        """Chunk the per-AP vectors and push them through G^H W (~identity)."""
        B, L, D = xl.shape
        M = self.cfg.M
        pad = mi * M - D
        xb = np.pad(xl, ((0, 0), (0, 0), (0, pad))).reshape(B, L, mi, M)
        xbar = xb.transpose(0, 1, 3, 2)  # (B, L, M, mi)
        return np.einsum("lmn,blnc->bmc", self.fh.link, xbar)

    # -- estimation ------------------------------------------------------

    def received(self, batch: SimBatch, phase: int, p_norm: float) -> np.ndarray:
        if phase == 1:
            return np.sqrt(batch.rho1[p_norm])[:, None, None] * batch.xeff1 + batch.e1
        return np.sqrt(batch.rho2[p_norm])[:, None, None] * batch.xeff2 + batch.e2

    def estimate(
        self, batch: SimBatch, phase: int, p_norm: float, kind: str
    ) -> np.ndarray:
        Z = self.received(batch, phase, p_norm)
        if phase == 1:
            return combiner.estimate_frame(
                Z, batch.mu1, batch.c1, batch.rho1[p_norm], kind
            )
        var2 = np.repeat(batch.c2[:, None, :], self.tau, axis=1).reshape(batch.B, -1)
        mu2 = np.zeros_like(var2)
        return combiner.estimate_frame(Z, mu2, var2, batch.rho2[p_norm], kind)

    def estimated_stats(self, batch: SimBatch, p_norm: float, kind: str):
        x1h = self.estimate(batch, 1, p_norm, kind)
        x2h = self.estimate(batch, 2, p_norm, kind)
        est = combiner.unpack(x1h, x2h, self.cfg.K, self.tau, kind)
        return est.T_hat, est.t_hat


# -- detection helpers ----------------------------------------------------


def _hard_ser_counts(
    shat: np.ndarray, sym_idx: np.ndarray, const: Constellation
) -> np.ndarray:
    """Per-trial symbol error counts from soft estimates."""
    dec = const.hard_decide(shat)
    return np.sum(dec != sym_idx, axis=(1, 2))


def _detect_errors(
    sim: LinkSimulator,
    T: np.ndarray,
    t: np.ndarray,
    batch: SimBatch,
    detector: str,
):
    """(per-trial symbol error counts, per-trial valid flags)."""
    const = sim.const
    rho = sim.rho_ul
    B = batch.B
    if detector == "lmmse":
        shat = detectors.lmmse_detect(T, t, rho)
        return _hard_ser_counts(shat, batch.sym_idx, const), np.ones(B, bool)
    if detector == "ls":
        errs = np.zeros(B)
        ok = np.ones(B, bool)
        for b in range(B):
            try:
                shat = detectors.ls_detect(T[b], t[b], rho)
            except detectors.SingularGramianError:
                ok[b] = False
                continue
            dec = const.hard_decide(shat)
            errs[b] = np.sum(dec != batch.sym_idx[b])
        return errs, ok
    if detector in ("ml", "soft"):
        errs = np.zeros(B)
        for b in range(B):
            model = detectors.whiten(T[b], t[b])
            if detector == "ml":
                idx = _block_ml_indices(model, rho, const)
            else:
                llr = detectors.block_maxlog_llrs(model, rho, const)
                bits = (llr > 0).astype(np.uint8)  # (K, tau, bps)
                weights = 1 << np.arange(const.bits_per_symbol - 1, -1, -1)
                idx = np.tensordot(bits, weights, axes=([2], [0]))
            errs[b] = np.sum(idx != batch.sym_idx[b])
        return errs, np.ones(B, bool)
    raise ValueError(f"unknown detector {detector!r}")


def _block_ml_indices(
    model: detectors.WhitenedModel, rho_ul: float, const: Constellation
) -> np.ndarray:
    """Vectorized minimum-distance indices for a whole block, (K, tau)."""
    from .detectors import _canonical_metrics, _lattice, _qr_phase, _reduce_y

    A = np.sqrt(rho_ul) * model.H_bar
    K = A.shape[0]
    if const.size**K > detectors.EXHAUSTIVE_BUDGET:
        raise ValueError("hypothesis count exceeds the enumeration budget")
    Q, R, phase = _qr_phase(A)
    Ytil = _reduce_y(Q, phase, model.y_bar)
    if Ytil.ndim == 1:
        Ytil = Ytil[:, None]
    S_idx = _lattice(const.size, K)
    G = R @ const.points[S_idx]
    diff = Ytil.T[:, :, None] - G[None, :, :]
    metrics = np.sum(np.abs(diff) ** 2, axis=1)
    best = np.argmin(metrics, axis=1)
    return S_idx[:, best]


# -- experiments ----------------------------------------------------------


class _SerCounter:
    def __init__(self):
        self.err = 0.0
        self.err_sq = 0.0
        self.trials = 0
        self.skipped = 0
        self.symbols_per_trial = 0

    def update(self, errs: np.ndarray, ok: np.ndarray, spt: int) -> None:
        self.symbols_per_trial = spt
        e = errs[ok]
        self.err += float(e.sum())
        self.err_sq += float((e**2).sum())
        self.trials += int(ok.sum())
        self.skipped += int((~ok).sum())

    @property
    def ser(self) -> float:
        return self.err / (self.trials * self.symbols_per_trial)

    @property
    def stderr(self) -> float:
        """Cluster-robust normal-approximation error bar (trial = cluster)."""
        n = self.trials
        if n < 2:
            return float("nan")
        mean = self.err / n
        var = max(self.err_sq / n - mean**2, 0.0)
        return float(np.sqrt(var / n) / self.symbols_per_trial)


def _resolve(cfg: SystemConfig, seed, trials):
    return (cfg.seed if seed is None else seed, cfg.trials if trials is None else trials)


def run_nmse(
    cfg: SystemConfig,
    rho_ul_db_values,
    p_max_w=(1.0, 5.0),
    estimators=("ls", "lmmse"),
    trials: int | None = None,
    seed: int | None = None,
    batch: int = 4096,
) -> ExperimentResult:
    """Fronthaul estimation quality (dB) per phase, estimator and budget."""
    seed, trials = _resolve(cfg, seed, trials)
    exp = EXPERIMENT_IDS["nmse"]
    fh = FronthaulLink.draw(cfg, substream(seed, exp, 0, _FRONTHAUL_SALT))
    p_norms = {p: p / cfg.noise_power_w for p in p_max_w}
    rows = []
    for pt, rho_db in enumerate(rho_ul_db_values):
        sim = LinkSimulator(cfg, 10 ** (rho_db / 10.0), fh, tuple(p_norms.values()))
        accs = {
            (phase, est, p): combiner.NmseAccumulator()
            for phase in (1, 2)
            for est in estimators
            for p in p_max_w
        }
        done, bi = 0, 0
        while done < trials:
            B = min(batch, trials - done)
            sb = sim.draw(B, substream(seed, exp, pt, bi))
            for p in p_max_w:
                pn = p_norms[p]
                for est in estimators:
                    accs[(1, est, p)].update(sb.x1, sim.estimate(sb, 1, pn, est))
                    accs[(2, est, p)].update(sb.x2, sim.estimate(sb, 2, pn, est))
            done += B
            bi += 1
        for (phase, est, p), acc in accs.items():
            name = "gramian" if phase == 1 else "mf"
            rows.append(
                ResultRow(
                    value=float(rho_db),
                    metric=acc.db,
                    stderr=acc.stderr_db,
                    trials=acc.n,
                    label=f"nmse:{name}:{est}:pmax{p:g}w",
                )
            )
    return ExperimentResult(rows, cfg.fingerprint(), seed)


def _ser_point(
    cfg: SystemConfig,
    sim: LinkSimulator,
    seed: int,
    exp: int,
    pt: int,
    p_max_w,
    p_norms,
    estimators,
    detector: str,
    wired: bool,
    err_target: int,
    max_trials: int,
    batch: int,
    label_suffix: str = "",
):
    counters = {}
    for p in p_max_w:
        for est in estimators:
            counters[f"ser:{detector}:{est}:pmax{p:g}w{label_suffix}"] = (p, est, _SerCounter())
    if wired:
        counters[f"ser:{detector}:wired{label_suffix}"] = (None, None, _SerCounter())

    spt = cfg.K * sim.tau
    done, bi = 0, 0
    while done < max_trials:
        B = min(batch, max_trials - done)
        sb = sim.draw(B, substream(seed, exp, pt, bi))
        for label, (p, est, ctr) in counters.items():
            if p is None:
                T, t = sb.T_sum, sb.t_sum
            else:
                T, t = sim.estimated_stats(sb, p_norms[p], est)
            errs, ok = _detect_errors(sim, T, t, sb, detector)
            ctr.update(errs, ok, spt)
        done += B
        bi += 1
        if all(c.err >= err_target for _, _, c in counters.values()):
            break
    return counters


def run_ser(
    cfg: SystemConfig,
    rho_ul_db_values,
    p_max_w=(1.0, 5.0),
    estimators=("lmmse",),
    detector: str | None = None,
    wired_baseline: bool = True,
    err_target: int = 100,
    max_trials: int | None = None,
    seed: int | None = None,
    batch: int = 4096,
) -> ExperimentResult:
    """Uncoded symbol error rate against the uplink SNR sweep."""
    seed, max_trials = _resolve(cfg, seed, max_trials)
    detector = cfg.detector if detector is None else detector
    exp = EXPERIMENT_IDS["ser_vs_snr"]
    fh = FronthaulLink.draw(cfg, substream(seed, exp, 0, _FRONTHAUL_SALT))
    p_norms = {p: p / cfg.noise_power_w for p in p_max_w}
    rows = []
    for pt, rho_db in enumerate(rho_ul_db_values):
        sim = LinkSimulator(cfg, 10 ** (rho_db / 10.0), fh, tuple(p_norms.values()))
        counters = _ser_point(
            cfg, sim, seed, exp, pt, p_max_w, p_norms, estimators, detector,
            wired_baseline, err_target, max_trials, batch,
        )
        for label, (_, _, ctr) in counters.items():
            rows.append(
                ResultRow(
                    value=float(rho_db),
                    metric=ctr.ser,
                    stderr=ctr.stderr,
                    trials=ctr.trials,
                    label=label,
                )
            )
    return ExperimentResult(rows, cfg.fingerprint(), seed)


def run_ser_vs_pmax(
    cfg: SystemConfig,
    p_max_dbm_values,
    rho_ul_db_values=(-4.0, -3.0),
    estimators=("ls", "lmmse"),
    detector: str | None = None,
    wired_baseline: bool = True,
    err_target: int = 100,
    max_trials: int | None = None,
    seed: int | None = None,
    batch: int = 4096,
) -> ExperimentResult:
    """Uncoded SER against the per-AP power budget (dBm sweep)."""
    seed, max_trials = _resolve(cfg, seed, max_trials)
    detector = cfg.detector if detector is None else detector
    exp = EXPERIMENT_IDS["ser_vs_pmax"]
    fh = FronthaulLink.draw(cfg, substream(seed, exp, 0, _FRONTHAUL_SALT))
    p_max_w = tuple(10.0 ** ((dbm - 30.0) / 10.0) for dbm in p_max_dbm_values)
    p_norms = {p: p / cfg.noise_power_w for p in p_max_w}
    rows = []
    for pt, rho_db in enumerate(rho_ul_db_values):
        sim = LinkSimulator(cfg, 10 ** (rho_db / 10.0), fh, tuple(p_norms.values()))
        counters = _ser_point(
            cfg, sim, seed, exp, pt, p_max_w, p_norms, estimators, detector,
            wired_baseline, err_target, max_trials, batch,
            label_suffix=f":rho{rho_db:g}db",
        )
        for label, (p, _, ctr) in counters.items():
            if p is None:
                # one wired row per swept power keeps the sweep rectangular
                for dbm in p_max_dbm_values:
                    rows.append(
                        ResultRow(float(dbm), ctr.ser, ctr.stderr, ctr.trials, label)
                    )
            else:
                dbm = 10.0 * np.log10(p) + 30.0
                rows.append(
                    ResultRow(float(dbm), ctr.ser, ctr.stderr, ctr.trials, label)
                )
    return ExperimentResult(rows, cfg.fingerprint(), seed)


def run_coded_ber(
    cfg: SystemConfig,
    ebn0_db_values,
    p_max_w=(5.0,),
    estimator: str = "lmmse",
    wired_baseline: bool = True,
    frame_err_target: int = 100,
    max_blocks: int | None = None,
    seed: int | None = None,
    batch: int = 32,
    pcm: ldpc.ParityCheckMatrix | None = None,
    coverage_margin_db: float = 10.0,
) -> ExperimentResult:
    """Coded BER with per-UE codewords, max-log LLRs and min-sum decoding.

    The x axis is Eb/N0 referenced to the average path loss; the per-symbol
    SNR follows as rho_ul = Eb/N0 * bits_per_symbol * code_rate.  Each UE
    carries one codeword per coherence block (tau_u = n / bits_per_symbol).

    Unlike the uncoded sweeps, the user drop is drawn once per run and held:
    with per-block drops the waterfall would be buried under drop outage
    (blocks containing a deeply shadowed user fail at any SNR), which is a
    coverage property, not a property of the coded link under test.  For the
    same reason the drop is subject to admission control: it is redrawn
    (deterministically) until every UE's aggregate large-scale gain is within
    ``coverage_margin_db`` of the drop average, the way a scheduler would not
    grant a full-rate codeword to an out-of-coverage user.
    """
    seed, max_blocks = _resolve(cfg, seed, max_blocks)
    exp = EXPERIMENT_IDS["coded_ber"]
    pcm = ldpc.load_wlan_code() if pcm is None else pcm
    const = constellation(cfg.modulation)
    bps = const.bits_per_symbol
    rate = pcm.k / pcm.n
    tau = pcm.n // bps
    fh = FronthaulLink.draw(cfg, substream(seed, exp, 0, _FRONTHAUL_SALT))
    p_norms = {p: p / cfg.noise_power_w for p in p_max_w}

    fixed_gamma = _admitted_drop(cfg, substream(seed, exp, 0, _DROP_SALT),
                                 coverage_margin_db)

    systems = [(f"pmax{p:g}w", p) for p in p_max_w]
    if wired_baseline:
        systems.append(("wired", None))

    rows = []
    for pt, ebn0_db in enumerate(ebn0_db_values):
        rho_ul = 10.0 ** (ebn0_db / 10.0) * bps * rate
        sim = LinkSimulator(
            cfg, rho_ul, fh, tuple(p_norms.values()), tau_u=tau,
            fixed_gamma=fixed_gamma,
        )
        stats = {
            name: {"bit_err": 0, "bits": 0, "raw_err": 0, "raw_bits": 0,
                   "frame_err": 0, "frames": 0, "be_sq": 0.0}
            for name, _ in systems
        }
        done, bi = 0, 0
        while done < max_blocks:
            B = min(batch, max_blocks - done)
            rng = substream(seed, exp, pt, bi)
            u = rng.integers(0, 2, size=(B, cfg.K, pcm.k), dtype=np.uint8)
            c = ldpc.encode(u.reshape(B * cfg.K, pcm.k), pcm).reshape(B, cfg.K, pcm.n)
            groups = c.reshape(B, cfg.K, tau, bps)
            weights = 1 << np.arange(bps - 1, -1, -1)
            sym_idx = np.tensordot(groups, weights, axes=([3], [0]))
            sb = sim.draw(B, rng, sym_idx=sym_idx)
            for name, p in systems:
                if p is None:
                    T, t = sb.T_sum, sb.t_sum
                else:
                    T, t = sim.estimated_stats(sb, p_norms[p], estimator)
                llrs = np.empty((B, cfg.K, pcm.n))
                for b in range(B):
                    model = detectors.whiten(T[b], t[b])
                    lb = detectors.block_maxlog_llrs(model, rho_ul, const)
                    llrs[b] = lb.reshape(cfg.K, pcm.n)
                raw_bits = (llrs > 0).astype(np.uint8)
                st = stats[name]
                st["raw_err"] += int(np.sum(raw_bits != c))
                st["raw_bits"] += c.size
                dec, conv, _ = ldpc.decode_minsum(-llrs.reshape(B * cfg.K, pcm.n), pcm)
                info = dec[:, : pcm.k].reshape(B, cfg.K, pcm.k)
                be = np.sum(info != u, axis=(1, 2))  # bit errors per block
                st["bit_err"] += int(be.sum())
                st["be_sq"] += float((be.astype(float) ** 2).sum())
                st["bits"] += u.size
                fe = np.any(info != u, axis=2).sum(axis=1)
                st["frame_err"] += int(fe.sum())
                st["frames"] += B * cfg.K
            done += B
            bi += 1
            if all(s["frame_err"] >= frame_err_target for s in stats.values()):
                break
        for name, _ in systems:
            st = stats[name]
            nb = st["frames"] // cfg.K
            bits_per_block = cfg.K * pcm.k
            mean_be = st["bit_err"] / nb
            var_be = max(st["be_sq"] / nb - mean_be**2, 0.0)
            ber_se = float(np.sqrt(var_be / nb) / bits_per_block)
            rows.append(
                ResultRow(
                    float(ebn0_db),
                    st["bit_err"] / st["bits"],
                    ber_se,
                    nb,
                    f"coded_ber:{estimator}:{name}",
                )
            )
            rows.append(
                ResultRow(
                    float(ebn0_db),
                    st["raw_err"] / st["raw_bits"],
                    float("nan"),
                    nb,
                    f"raw_ber:{estimator}:{name}",
                )
            )
            rows.append(
                ResultRow(
                    float(ebn0_db),
                    st["frame_err"] / st["frames"],
                    float("nan"),
                    nb,
                    f"fer:{estimator}:{name}",
                )
            )
    return ExperimentResult(rows, cfg.fingerprint(), seed)


def _admitted_drop(
    cfg: SystemConfig, rng: np.random.Generator, margin_db: float, attempts: int = 1000
) -> np.ndarray:
    """First user drop whose every UE is within ``margin_db`` of the drop's
    average aggregate large-scale gain; deterministic given the stream."""
    from .geometry import build_correlations

    for _ in range(attempts):
        gamma = build_correlations(generate_layout(cfg, rng), cfg).gamma
        g = gamma.sum(axis=1)
        if 10.0 * np.log10(g.min() / g.mean()) >= -margin_db:
            return gamma
    raise RuntimeError(
        f"no drop met the {margin_db} dB coverage margin in {attempts} attempts"
    )


def validate_moments(
    cfg: SystemConfig,
    draws: int = 100_000,
    seed: int | None = None,
    rel_tol: float = 0.02,
    zero_z: float = 5.0,
    batch: int = 10_000,
) -> tuple[ExperimentResult, bool]:
    """Closed-form moments against the Monte Carlo oracle, with pass/fail.

    The zero tests use a 5-sigma threshold: with O(10^3) simultaneous
    off-diagonal entries a 3-sigma bound would fail by chance alone.
    """
    from .geometry import build_correlations
    from .moments import build_moment_model, mc_moment_oracle

    seed = cfg.seed if seed is None else seed
    exp = EXPERIMENT_IDS["validate_moments"]
    layout = generate_layout(cfg, substream(seed, exp, 0, 0))
    corr = build_correlations(layout, cfg)
    mm = build_moment_model(corr, cfg.rho_ul, cfg.tau_u)
    emp = mc_moment_oracle(corr, cfg.rho_ul, draws, seed=seed, batch=batch)

    checks = []
    nz = np.flatnonzero(mm.mu1 != 0)
    checks.append(
        ("mean1_max_rel_err", float(np.max(np.abs(emp.mean1[nz].real - mm.mu1[nz]) / mm.mu1[nz])), rel_tol)
    )
    checks.append(
        ("cov1_diag_max_rel_err", float(np.max(np.abs(np.diag(emp.cov1).real - mm.c1) / mm.c1)), rel_tol)
    )
    off = ~np.eye(mm.c1.shape[0], dtype=bool)
    z1 = np.abs(emp.cov1[off]) / np.where(emp.se_cov1[off] > 0, emp.se_cov1[off], np.inf)
    checks.append(("cov1_offdiag_max_z", float(z1.max()), zero_z))
    for i in range(emp.cov2.shape[0]):
        checks.append(
            (
                f"cov2_t{i}_diag_max_rel_err",
                float(np.max(np.abs(np.diag(emp.cov2[i]).real - mm.c2) / mm.c2)),
                rel_tol,
            )
        )
    offK = ~np.eye(cfg.K, dtype=bool)
    z2 = np.abs(emp.cov2[0][offK]) / np.where(emp.se_cov2[0][offK] > 0, emp.se_cov2[0][offK], np.inf)
    checks.append(("cov2_offdiag_max_z", float(z2.max()), zero_z))

    # precoder Gram expectation: closed form vs simulation
    if cfg.N > cfg.M:
        beta = float(ap_cpu_betas(layout)[0])
        closed = fronthaul.expected_precoder_gram(beta, cfg.N, cfg.M)
        mc = fronthaul.expected_precoder_gram(
            beta, cfg.N, cfg.M, method="mc", draws=min(draws, 1_000_000),
            rng=substream(seed, exp, 0, 1),
        )
        rel = float(np.max(np.abs(np.diag(mc).real - np.diag(closed).real) / np.diag(closed).real))
        checks.append(("eww_diag_max_rel_err", rel, rel_tol))

    rows = []
    passed = True
    for name, value, tol in checks:
        ok = value <= tol
        passed &= ok
        rows.append(ResultRow(float(draws), value, float("nan"), draws, f"moments:{name}:tol{tol:g}"))
    return ExperimentResult(rows, cfg.fingerprint(), seed), passed


def measure_power_compliance(
    cfg: SystemConfig,
    rho_ul: float | None = None,
    trials: int = 10_000,
    seed: int | None = None,
    batch: int = 512,
) -> dict:
    """Empirical per-AP average transmit power after the scaling protocol.

    Redraws the AP->CPU fading every trial so the measured average matches
    the expectation the protocol budgets for (the precoder Gram is heavy
    tailed at N = M + 1; a single frozen draw would not have to comply).
    Returns per-phase (L,) arrays of empirical powers plus the budget, all
    in normalized units.
    """
    seed = cfg.seed if seed is None else seed
    rho_ul = cfg.rho_ul if rho_ul is None else rho_ul
    exp = EXPERIMENT_IDS["power_check"]
    fh = FronthaulLink.draw(cfg, substream(seed, exp, 0, _FRONTHAUL_SALT))
    p_norm = cfg.p_max_norm

    from .geometry import build_correlations

    drop_layout = generate_layout(cfg, substream(seed, exp, 0, _DROP_SALT))
    fixed_gamma = build_correlations(drop_layout, cfg).gamma
    sim = LinkSimulator(cfg, rho_ul, fh, (p_norm,), fixed_gamma=fixed_gamma)
    betas = ap_cpu_betas(drop_layout)
    L, N, M = cfg.L, cfg.N, cfg.M

    acc = {1: np.zeros(L), 2: np.zeros(L)}
    done, bi = 0, 0
    while done < trials:
        B = min(batch, trials - done)
        rng = substream(seed, exp, 0, bi)
        sb = sim.draw(B, rng, keep_per_ap=True)
        G = np.sqrt(betas)[None, :, None, None] * complex_normal(rng, (B, L, N, M))
        gram = np.einsum("blnm,blnp->blmp", G.conj(), G)
        W = np.einsum("blnm,blmp->blnp", G, np.linalg.inv(gram))
        for phase, xl, rho_c, mi in (
            (1, sb.x1_ap, sb.rho1[p_norm], sim.M1),
            (2, sb.x2_ap, sb.rho2[p_norm], sim.M2),
        ):
            pad = mi * M - xl.shape[2]
            xb = np.pad(xl, ((0, 0), (0, 0), (0, pad))).reshape(B, L, mi, M)
            V = np.einsum("blnm,blcm->blnc", W, xb)
            pw = rho_c[:, None] * np.sum(np.abs(V) ** 2, axis=(2, 3)) / mi
            acc[phase] += pw.sum(axis=0)
        done += B
        bi += 1
    return {
        "phase1": acc[1] / done,
        "phase2": acc[2] / done,
        "p_max_norm": p_norm,
        "trials": done,
    }
