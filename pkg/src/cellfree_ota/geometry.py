"""Network geometry, path loss and spatial correlation matrices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig

# Urban-microcell large-scale fading at 2 GHz: beta_dB(d) = -30.5 - 36.7 log10(d/1m)
_PL_INTERCEPT_DB = -30.5
_PL_SLOPE = 36.7


@dataclass(frozen=True)
class NetworkLayout:
    """3-D positions (meters) of UEs, APs and the CPU."""

    ue_pos: np.ndarray  # (K, 3)
    ap_pos: np.ndarray  # (L, 3)
    cpu_pos: np.ndarray  # (3,)


@dataclass(frozen=True)
class CorrelationSet:
    """Spatial correlation matrices of the UE-AP links.

    ``R[k, l]`` is the N x N correlation matrix of the link between UE k and
    AP l after normalizing by the average path loss, so that the uplink SNR
    knob refers to an average-path-loss link.  ``beta`` holds the raw linear
    path-loss coefficients; ``gamma = beta / beta_avg`` is the normalized
    version actually embedded in R.
    """

    R: np.ndarray  # (K, L, N, N) complex
    beta: np.ndarray  # (K, L) linear
    beta_avg: float

    @property
    def K(self) -> int:
        return self.R.shape[0]

    @property
    def L(self) -> int:
        return self.R.shape[1]

    @property
    def N(self) -> int:
        return self.R.shape[2]

    @property
    def gamma(self) -> np.ndarray:
        return self.beta / self.beta_avg


def path_loss_db(d_m):
    """Large-scale path loss in dB at 3-D distance ``d_m`` (meters)."""
    d = np.asarray(d_m, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    out = _PL_INTERCEPT_DB - _PL_SLOPE * np.log10(d)
    return float(out) if np.isscalar(d_m) else out


def generate_layout(cfg: SystemConfig, rng: np.random.Generator) -> NetworkLayout:
    """Draw UE positions uniformly on the square; place the infrastructure.

    The CPU sits at the square center and the L APs are equally spaced on a
    ring of ``cfg.ap_ring_radius_m`` around it.  AP and CPU antennas are
    ``cfg.ap_height_m`` above the UE plane.  Deterministic given ``rng``.
    """
    side = cfg.area_side_m
    ue_xy = rng.uniform(0.0, side, size=(cfg.K, 2))
    ue_pos = np.concatenate([ue_xy, np.zeros((cfg.K, 1))], axis=1)

    center = np.array([side / 2.0, side / 2.0, cfg.ap_height_m])
    angles = 2.0 * np.pi * np.arange(cfg.L) / cfg.L
    ap_pos = np.stack(
        [
            center[0] + cfg.ap_ring_radius_m * np.cos(angles),
            center[1] + cfg.ap_ring_radius_m * np.sin(angles),
            np.full(cfg.L, cfg.ap_height_m),
        ],
        axis=1,
    )
    return NetworkLayout(ue_pos=ue_pos, ap_pos=ap_pos, cpu_pos=center)


def ue_ap_distances(layout: NetworkLayout) -> np.ndarray:
    """3-D UE-to-AP distances, shape (K, L)."""
    diff = layout.ue_pos[:, None, :] - layout.ap_pos[None, :, :]
    return np.linalg.norm(diff, axis=2)


def ap_cpu_betas(layout: NetworkLayout) -> np.ndarray:
    """Linear path-loss coefficients of the AP-CPU links, shape (L,)."""
    d = np.linalg.norm(layout.ap_pos - layout.cpu_pos[None, :], axis=1)
    return 10.0 ** (path_loss_db(d) / 10.0)


def build_correlations(layout: NetworkLayout, cfg: SystemConfig) -> CorrelationSet:
    """Uncorrelated-fading correlation set for the given layout.

    beta_kl comes from the path-loss law on 3-D distances; beta_avg is the
    arithmetic mean of the linear betas over all (k, l) pairs.  R_kl is
    (beta_kl / beta_avg) * I_N so the SNR knob is referenced to an
    average-path-loss link.
    """
    beta = 10.0 ** (path_loss_db(ue_ap_distances(layout)) / 10.0)
    beta_avg = float(beta.mean())
    gamma = beta / beta_avg
    eye = np.eye(cfg.N, dtype=complex)
    R = gamma[:, :, None, None] * eye[None, None, :, :]
    return CorrelationSet(R=R, beta=beta, beta_avg=beta_avg)
