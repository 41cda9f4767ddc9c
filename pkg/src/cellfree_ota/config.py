"""Scenario configuration: schema, defaults, validation, file loading.

The config file is a flat JSON object.  Every key is optional; omitted keys
take the defaults below.  Recognized keys (units in the comments):

    L, K, N, M          -- network sizes (APs, UEs, AP antennas, CPU antennas)
    tau_u               -- uplink channel uses per UE per coherence block
    p_max_w             -- per-AP average fronthaul transmit power budget, Watts
    rho_ul_db           -- uplink SNR of an average-path-loss link, dB
    bandwidth_hz        -- system bandwidth, Hz
    noise_psd_dbm_hz    -- noise power spectral density, dBm/Hz
    noise_figure_db     -- receiver noise figure, dB
    carrier_freq_hz     -- carrier frequency, Hz (informational)
    area_side_m         -- side of the square service area, meters
    ap_ring_radius_m    -- radius of the AP ring around the CPU, meters
    ap_height_m         -- AP/CPU antenna height above the UE plane, meters
    seed                -- 64-bit master seed
    trials              -- Monte Carlo trial count
    modulation          -- constellation name ("4qam")
    estimator           -- fronthaul estimator: "ls" or "lmmse"
    detector            -- data detector: "lmmse", "ls", "ml" or "soft"
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

ESTIMATORS = ("ls", "lmmse")
DETECTORS = ("lmmse", "ls", "ml", "soft")
MODULATIONS = ("4qam", "bpsk")


class ConfigError(ValueError):
    """A configuration file or field violates the documented schema."""


@dataclass(frozen=True)
class SystemConfig:
    """All scenario parameters for one simulation run.

    Model equations use unit-variance receiver noise everywhere; the physical
    noise power (PSD x bandwidth x noise figure) only enters through
    ``p_max_norm``, which converts the Watt budget into the normalized units
    the fronthaul power protocol works in.
    """

    L: int = 16
    K: int = 8
    N: int = 5
    M: int = 4
    tau_u: int = 10
    p_max_w: float = 1.0
    rho_ul: float = 1.0  # linear; loader accepts "rho_ul_db"
    bandwidth_hz: float = 1e6
    noise_psd_dbm_hz: float = -174.0
    noise_figure_db: float = 5.0
    carrier_freq_hz: float = 2e9
    area_side_m: float = 200.0
    ap_ring_radius_m: float = 40.0
    ap_height_m: float = 5.0
    seed: int = 12345
    trials: int = 100_000
    modulation: str = "4qam"
    estimator: str = "lmmse"
    detector: str = "lmmse"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("L", "K", "N", "M", "tau_u", "trials"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.L * self.N <= self.K:
            raise ConfigError(
                f"L*N > K violated: L={self.L}, N={self.N}, K={self.K}"
            )
        if self.N < self.M:
            raise ConfigError(f"N >= M violated: N={self.N}, M={self.M}")
        if not self.p_max_w > 0:
            raise ConfigError(f"p_max_w must be positive, got {self.p_max_w}")
        if not self.rho_ul > 0:
            raise ConfigError(f"rho_ul must be positive, got {self.rho_ul}")
        for name in ("bandwidth_hz", "area_side_m", "ap_ring_radius_m"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.ap_height_m < 0:
            raise ConfigError("ap_height_m must be nonnegative")
        if self.modulation not in MODULATIONS:
            raise ConfigError(f"unknown modulation {self.modulation!r}")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"estimator must be one of {ESTIMATORS}")
        if self.detector not in DETECTORS:
            raise ConfigError(f"detector must be one of {DETECTORS}")

    @property
    def rho_ul_db(self) -> float:
        return 10.0 * math.log10(self.rho_ul)

    @property
    def noise_power_w(self) -> float:
        """Physical receiver noise power N0 * B * NF in Watts."""
        dbm = (
            self.noise_psd_dbm_hz
            + 10.0 * math.log10(self.bandwidth_hz)
            + self.noise_figure_db
        )
        return 10.0 ** ((dbm - 30.0) / 10.0)

    @property
    def p_max_norm(self) -> float:
        """Power budget normalized to the unit-variance noise convention."""
        return self.p_max_w / self.noise_power_w

    def with_(self, **kwargs) -> "SystemConfig":
        return replace(self, **kwargs)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def fingerprint(self) -> str:
        """Stable hash of the full parameter set, for result provenance."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_INT_KEYS = {"L", "K", "N", "M", "tau_u", "seed", "trials"}
_STR_KEYS = {"modulation", "estimator", "detector"}


def load_config(path: str | Path) -> SystemConfig:
    """Load and validate a scenario config file.

    An empty (or whitespace-only) file yields the default configuration.
    Unknown keys are rejected so typos do not silently fall back to defaults.
    """
    text = Path(path).read_text()
    if not text.strip():
        raw = {}
    else:
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"cannot parse {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be an object, got {type(raw).__name__}")

    known = {f.name for f in fields(SystemConfig)} | {"rho_ul_db"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "rho_ul_db" in raw and "rho_ul" in raw:
        raise ConfigError("give either rho_ul or rho_ul_db, not both")

    kwargs = {}
    for key, value in raw.items():
        if key == "rho_ul_db":
            kwargs["rho_ul"] = 10.0 ** (float(value) / 10.0)
        elif key in _INT_KEYS:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{key} must be an integer, got {value!r}")
            kwargs[key] = value
        elif key in _STR_KEYS:
            kwargs[key] = str(value)
        else:
            kwargs[key] = float(value)
    return SystemConfig(**kwargs)
