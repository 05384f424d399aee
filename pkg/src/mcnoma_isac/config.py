"""System configuration: scalar parameters, unit conversion, presets.

All powers are stored in watts and all angles in radians internally.  The
JSON file boundary uses dBm and degrees (see ``SystemConfig.from_json``).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path


def dbm_to_watt(p_dbm: float) -> float:
    """P_watt = 10^((P_dBm - 30)/10)."""
    return 10.0 ** ((p_dbm - 30.0) / 10.0)


def watt_to_dbm(p_watt: float) -> float:
    if p_watt <= 0:
        raise ValueError("power must be positive to express in dBm")
    return 10.0 * math.log10(p_watt) + 30.0


@dataclass(frozen=True)
class Geometry:
    """Node placement ranges. Angles measured from array broadside, radians."""

    user_angle_range: tuple[float, float] = (math.radians(-85), math.radians(85))
    user_distance_range_m: tuple[float, float] = (240.0, 390.0)
    target_angle_range: tuple[float, float] = (math.radians(-70), math.radians(70))
    target_distance_range_m: tuple[float, float] = (240.0, 390.0)
    eve_angle_range: tuple[float, float] = (math.radians(-30), math.radians(-30))
    eve_distance_range_m: tuple[float, float] = (360.0, 380.0)
    # exclusion zone around the Eve when dropping users (see build_scenario)
    eve_angle_guard: float = math.radians(15.0)
    eve_separation_min_m: float = 150.0


@dataclass(frozen=True)
class SystemConfig:
    # dimensions
    num_users: int = 5
    num_subcarriers: int = 2
    bs_antennas: int = 18
    eve_antennas: int = 2
    max_cluster_size: int = 3

    # powers / noise, watts
    bs_power_max: float = dbm_to_watt(30.0)
    eve_power: float = dbm_to_watt(10.0)
    bandwidth: float = 0.5e6
    noise_user: float = dbm_to_watt(-110.0)
    noise_eve: float = dbm_to_watt(-110.0)
    noise_radar: float = dbm_to_watt(-110.0)

    # rate / security / sensing requirements
    rate_min: float = 1.6
    leakage_thresholds: tuple[float, ...] = (0.5, 1.0, 1.5)
    security_level_of_user: tuple[int, ...] = (3, 3, 2, 2, 1)
    crb_limit: float = 0.01
    reflection_coefficient: complex = 5e3 + 0.0j

    # CSI uncertainty
    csi_error_fraction: float = 0.02
    eve_los_kappa: float = 10.0

    geometry: Geometry = field(default_factory=Geometry)

    # algorithm knobs
    penalty_rho: float = 100.0
    penalty_rho_c: float = 1e3
    max_outer_iterations: int = 30
    convergence_tol: float = 1e-3
    robust_sample_count: int = 8
    crb_mode: str = "sca-linearized"
    seed: int = 0

    def __post_init__(self):
        K, N = self.num_users, self.num_subcarriers
        if K < 1 or N < 1 or self.bs_antennas < 1 or self.eve_antennas < 1:
            raise ValueError("dimensions must be positive")
        if not (2 <= self.max_cluster_size <= K):
            raise ValueError("cluster size must satisfy 2 <= K_N <= K")
        if self.rate_min > 0 and N * self.max_cluster_size < K:
            raise ValueError(
                "N*K_N < K: cannot schedule every user while R_min > 0"
            )
        if any(
            a > b
            for a, b in zip(self.leakage_thresholds, self.leakage_thresholds[1:])
        ):
            raise ValueError("leakage thresholds must be nondecreasing")
        if len(self.security_level_of_user) != K:
            raise ValueError("security_level_of_user must map every user")
        L = len(self.leakage_thresholds)
        if any(not (1 <= lvl <= L) for lvl in self.security_level_of_user):
            raise ValueError(f"security levels must lie in 1..{L}")
        for name in (
            "bs_power_max",
            "bandwidth",
            "noise_user",
            "noise_eve",
            "noise_radar",
            "convergence_tol",
            "penalty_rho",
            "penalty_rho_c",
            "crb_limit",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.eve_power < 0 or self.csi_error_fraction < 0:
            raise ValueError("eve_power and csi_error_fraction must be >= 0")
        if self.rate_min < 0:
            raise ValueError("rate_min must be >= 0")
        if self.crb_mode not in ("sca-linearized", "penalty"):
            raise ValueError("crb_mode must be 'sca-linearized' or 'penalty'")
        if self.robust_sample_count < 0 or self.max_outer_iterations < 1:
            raise ValueError("bad algorithm knobs")

    # -- per-user helpers ------------------------------------------------

    def leakage_threshold_of_user(self, k: int) -> float:
        return self.leakage_thresholds[self.security_level_of_user[k] - 1]

    def enforced_leakage_threshold(self, k: int) -> float:
        """Design-time threshold: the audited one minus a robustness margin.

        The sampled uncertainty sets only cover finitely many error
        directions, so unseen errors can exceed the enforced level by a
        small amount that grows with the error-ball radius.  Backing off
        the enforced threshold proportionally to that radius keeps fresh
        out-of-sample audits within the honesty bound.
        """
        thr = self.leakage_threshold_of_user(k)
        return thr - min(0.5 * thr, 5.0 * self.csi_error_fraction)

    # -- JSON boundary (dBm / degrees) -----------------------------------

    def to_json_dict(self) -> dict:
        g = self.geometry
        return {
            "num_users": self.num_users,
            "num_subcarriers": self.num_subcarriers,
            "bs_antennas": self.bs_antennas,
            "eve_antennas": self.eve_antennas,
            "max_cluster_size": self.max_cluster_size,
            "bs_power_max_dbm": watt_to_dbm(self.bs_power_max),
            "eve_power_dbm": None
            if self.eve_power == 0
            else watt_to_dbm(self.eve_power),
            "bandwidth_hz": self.bandwidth,
            "noise_user_dbm": watt_to_dbm(self.noise_user),
            "noise_eve_dbm": watt_to_dbm(self.noise_eve),
            "noise_radar_dbm": watt_to_dbm(self.noise_radar),
            "rate_min": self.rate_min,
            "leakage_thresholds": list(self.leakage_thresholds),
            "security_level_of_user": list(self.security_level_of_user),
            "crb_limit": self.crb_limit,
            "reflection_coefficient": [
                self.reflection_coefficient.real,
                self.reflection_coefficient.imag,
            ],
            "csi_error_fraction": self.csi_error_fraction,
            "eve_los_kappa": self.eve_los_kappa,
            "geometry": {
                "user_angle_range_deg": [math.degrees(a) for a in g.user_angle_range],
                "user_distance_range_m": list(g.user_distance_range_m),
                "target_angle_range_deg": [
                    math.degrees(a) for a in g.target_angle_range
                ],
                "target_distance_range_m": list(g.target_distance_range_m),
                "eve_angle_range_deg": [math.degrees(a) for a in g.eve_angle_range],
                "eve_distance_range_m": list(g.eve_distance_range_m),
                "eve_angle_guard_deg": math.degrees(g.eve_angle_guard),
                "eve_separation_min_m": g.eve_separation_min_m,
            },
            "penalty_rho": self.penalty_rho,
            "penalty_rho_c": self.penalty_rho_c,
            "max_outer_iterations": self.max_outer_iterations,
            "convergence_tol": self.convergence_tol,
            "robust_sample_count": self.robust_sample_count,
            "crb_mode": self.crb_mode,
            "seed": self.seed,
        }

    @staticmethod
    def from_json_dict(d: dict) -> "SystemConfig":
        d = dict(d)
        g = d.pop("geometry", {})
        geometry = Geometry(
            user_angle_range=tuple(
                math.radians(a) for a in g.get("user_angle_range_deg", (-85, 85))
            ),
            user_distance_range_m=tuple(g.get("user_distance_range_m", (240.0, 390.0))),
            target_angle_range=tuple(
                math.radians(a) for a in g.get("target_angle_range_deg", (-70, 70))
            ),
            target_distance_range_m=tuple(
                g.get("target_distance_range_m", (240.0, 390.0))
            ),
            eve_angle_range=tuple(
                math.radians(a) for a in g.get("eve_angle_range_deg", (-30, -30))
            ),
            eve_distance_range_m=tuple(g.get("eve_distance_range_m", (360.0, 380.0))),
            eve_angle_guard=math.radians(g.get("eve_angle_guard_deg", 15.0)),
            eve_separation_min_m=g.get("eve_separation_min_m", 150.0),
        )
        beta = d.pop("reflection_coefficient", [1.0, 0.0])
        eve_dbm = d.pop("eve_power_dbm", 10.0)
        kwargs = {
            "num_users": d["num_users"],
            "num_subcarriers": d["num_subcarriers"],
            "bs_antennas": d["bs_antennas"],
            "eve_antennas": d["eve_antennas"],
            "max_cluster_size": d["max_cluster_size"],
            "bs_power_max": dbm_to_watt(d["bs_power_max_dbm"]),
            "eve_power": 0.0 if eve_dbm is None else dbm_to_watt(eve_dbm),
            "bandwidth": d.get("bandwidth_hz", 0.5e6),
            "noise_user": dbm_to_watt(d.get("noise_user_dbm", -110.0)),
            "noise_eve": dbm_to_watt(d.get("noise_eve_dbm", -110.0)),
            "noise_radar": dbm_to_watt(d.get("noise_radar_dbm", -110.0)),
            "rate_min": d.get("rate_min", 1.6),
            "leakage_thresholds": tuple(d.get("leakage_thresholds", (0.5, 1.0, 1.5))),
            "security_level_of_user": tuple(d["security_level_of_user"]),
            "crb_limit": d.get("crb_limit", 0.01),
            "reflection_coefficient": complex(beta[0], beta[1]),
            "csi_error_fraction": d.get("csi_error_fraction", 0.02),
            "eve_los_kappa": d.get("eve_los_kappa", 10.0),
            "geometry": geometry,
        }
        for knob in (
            "penalty_rho",
            "penalty_rho_c",
            "max_outer_iterations",
            "convergence_tol",
            "robust_sample_count",
            "crb_mode",
            "seed",
        ):
            if knob in d:
                kwargs[knob] = d[knob]
        return SystemConfig(**kwargs)

    @staticmethod
    def from_json(path: str | Path) -> "SystemConfig":
        with open(path) as f:
            return SystemConfig.from_json_dict(json.load(f))

    def save_json(self, path: str | Path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    def replace(self, **changes) -> "SystemConfig":
        d = asdict(self)
        geometry = changes.pop("geometry", self.geometry)
        d.pop("geometry")
        d.update(changes)
        return SystemConfig(geometry=geometry, **d)

    def config_hash(self) -> str:
        payload = json.dumps(self.to_json_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def preset_config(name: str) -> SystemConfig:
    """Named presets: 'desk-small' (CI scale) and 'paper-default' (full scale)."""
    if name == "paper-default":
        return SystemConfig()
    if name == "desk-small":
        return SystemConfig(
            num_users=3,
            num_subcarriers=2,
            bs_antennas=6,
            eve_antennas=2,
            max_cluster_size=2,
            bs_power_max=dbm_to_watt(17.0),
            rate_min=1.0,
            security_level_of_user=(3, 2, 1),
            reflection_coefficient=6e4 + 0.0j,
            robust_sample_count=4,
        )
    raise KeyError(f"unknown preset '{name}'")
