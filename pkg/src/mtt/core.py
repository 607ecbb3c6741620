"""Shared containers and configuration handling for the tracking workbench.

Everything downstream (filters, association solvers, trackers, the runner)
exchanges data through the types in this module, so their constructors do the
validation once and the rest of the code can assume well-formed inputs.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np


class InvalidConfig(ValueError):
    """Configuration rejected during validation."""


_SCENARIOS = ("s1", "s2", "s3", "s4-6", "s4-7", "s4-8", "s4-9")

_DEFAULTS = {
    "steps": 300,
    "T": 1.0,
    "sigma_v": 10.0,
    "p_d": 0.5,
    "p_s": 0.995,
    "mu_c": 10.0,
    "roi": ((-750.0, 750.0), (-750.0, 750.0)),
    "gate_threshold": 13.82,
    "particles": 5000,
    "v_max": 20.0,
    "known_targets": False,
    "seed": 0,
    "confirm_m": 12,
    "confirm_n": 24,
    "tentative_term_misses": 6,
    "confirmed_term_misses": 15,
    "mht_confirm_m": 8,
    "mht_confirm_n": 16,
    "mht_window": 5,
    "mht_hypothesis_cap": 100,
    "mht_leaf_cap": 20,
    "mht_new_track_weight": 0.1,
    "p_th": 0.5,
    "birth_existence": 1e-4,
    "prune_threshold": 1e-4,
}


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    steps: int
    T: float
    sigma_u2: float
    sigma_v: float
    p_d: float
    p_s: float
    mu_c: float
    roi: tuple
    gate_threshold: float
    particles: int
    v_max: float
    n_targets: int
    known_targets: bool
    seed: int
    confirm_m: int
    confirm_n: int
    tentative_term_misses: int
    confirmed_term_misses: int
    mht_confirm_m: int
    mht_confirm_n: int
    mht_window: int
    mht_hypothesis_cap: int
    mht_leaf_cap: int
    mht_new_track_weight: float
    p_th: float
    birth_existence: float
    prune_threshold: float

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["roi"] = [list(self.roi[0]), list(self.roi[1])]
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        return validate_config(json.loads(text))


def _fail(name, value, reason):
    raise InvalidConfig(f"{name}={value!r}: {reason}")


def validate_config(raw: dict) -> ScenarioConfig:
    """Fill defaults and range-check a flat dict of settings."""
    raw = dict(raw)
    scenario = raw.pop("scenario", None)
    if scenario not in _SCENARIOS:
        _fail("scenario", scenario, f"must be one of {_SCENARIOS}")

    values = {"scenario": scenario}
    values.update(_DEFAULTS)
    values["sigma_u2"] = 1e-4 if scenario.startswith("s4") else 0.1
    values["n_targets"] = int(scenario[3:]) if scenario.startswith("s4") else 2

    for key, value in raw.items():
        if key not in ScenarioConfig.__dataclass_fields__:
            _fail(key, value, "unknown setting")
        values[key] = value

    values["roi"] = tuple(tuple(float(v) for v in axis) for axis in values["roi"])
    for name in ("T", "sigma_v", "gate_threshold", "v_max"):
        if not values[name] > 0:
            _fail(name, values[name], "must be positive")
    if not 0.0 <= values["p_d"] <= 1.0:
        _fail("p_d", values["p_d"], "must lie in [0, 1]")
    if not 0.0 < values["p_s"] <= 1.0:
        _fail("p_s", values["p_s"], "must lie in (0, 1]")
    if values["mu_c"] < 0 or values["sigma_u2"] < 0:
        _fail("mu_c/sigma_u2", (values["mu_c"], values["sigma_u2"]), "must be nonnegative")
    for name in ("steps", "particles", "n_targets", "confirm_m", "confirm_n",
                 "mht_window", "mht_hypothesis_cap", "mht_leaf_cap"):
        if int(values[name]) < 1:
            _fail(name, values[name], "must be at least 1")
        values[name] = int(values[name])
    for name in ("seed", "tentative_term_misses", "confirmed_term_misses",
                 "mht_confirm_m", "mht_confirm_n"):
        values[name] = int(values[name])
    (x0, x1), (y0, y1) = values["roi"]
    if not (x1 > x0 and y1 > y0):
        _fail("roi", values["roi"], "axes must be increasing intervals")
    return ScenarioConfig(**values)


# ---------------------------------------------------------------- state containers

@dataclass(frozen=True)
class KinematicState:
    """Position-velocity point [px, py, vx, vy]."""

    x: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, float)
        if x.shape != (4,) or not np.all(np.isfinite(x)):
            raise ValueError(f"bad kinematic state {x!r}")
        object.__setattr__(self, "x", x)


@dataclass
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, float)
        self.cov = np.asarray(self.cov, float)
        d = self.mean.shape[0]
        if self.mean.ndim != 1 or self.cov.shape != (d, d):
            raise ValueError("mean/cov shape mismatch")
        scale = max(float(np.abs(self.cov).max()), 1.0)
        if float(np.abs(self.cov - self.cov.T).max()) > 1e-9 * scale:
            raise ValueError("covariance is not symmetric")
        try:
            np.linalg.cholesky(self.cov)
            return
        except np.linalg.LinAlgError:
            pass
        # cholesky rejects semidefinite and indefinite alike; only the
        # latter is an error
        floor = -1e-9 * max(float(np.trace(self.cov)), 1.0)
        if not float(np.linalg.eigvalsh(self.cov).min()) >= floor:
            raise ValueError("covariance is not positive semidefinite")


@dataclass
class ParticleBelief:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, float)
        self.weights = np.asarray(self.weights, float)
        n = self.points.shape[0]
        if self.points.ndim != 2 or self.weights.shape != (n,):
            raise ValueError("points/weights shape mismatch")
        if n == 0:
            return
        if self.weights.min() < 0:
            raise ValueError("negative particle weight")
        if abs(float(self.weights.sum()) - 1.0) > 1e-9:
            raise ValueError("particle weights must sum to one")


@dataclass
class PotentialTrack:
    """A track slot managed by the soft-association tracker."""

    label: int
    belief: object
    status: str = "tentative"
    hits: tuple = ()
    miss_streak: int = 0


@dataclass(frozen=True)
class MeasurementFrame:
    time: int
    z: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, float)
        if z.ndim != 2 or z.shape[1] != 2 or not np.all(np.isfinite(z)):
            raise ValueError(f"measurement array must be (M, 2) finite, got {z.shape}")
        object.__setattr__(self, "z", z)


@dataclass(frozen=True)
class AssociationProblem:
    """Association weights: beta[j, 0] is the miss weight of target j,
    beta[j, m] the weight of pairing j with measurement m-1, and xi0[m]
    the weight of leaving measurement m unassigned."""

    beta: np.ndarray
    xi0: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, float)
        xi0 = np.asarray(self.xi0, float)
        if beta.ndim != 2 or beta.shape[0] < 1 or beta.shape[1] < 1:
            raise ValueError("beta must be (L, M+1) with L >= 1")
        if xi0.shape != (beta.shape[1] - 1,):
            raise ValueError("xi0 length must match the measurement count")
        if beta.min() < 0 or xi0.min(initial=0.0) < 0:
            raise ValueError("association weights must be nonnegative")
        if not np.all(beta.max(axis=1) > 0):
            raise ValueError("every target row needs at least one positive weight")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "xi0", xi0)

    @property
    def shape(self):
        return self.beta.shape[0], self.beta.shape[1] - 1


# ---------------------------------------------------------------- model bundle

@dataclass(frozen=True)
class Models:
    motion: object
    meas: object
    cfg: ScenarioConfig


def make_models(cfg: ScenarioConfig) -> Models:
    from . import models

    motion = models.make_motion_model(T=cfg.T, sigma_u2=cfg.sigma_u2, p_s=cfg.p_s)
    meas = models.make_measurement_model(
        sigma_v=cfg.sigma_v, roi=cfg.roi, p_d=cfg.p_d, mu_c=cfg.mu_c
    )
    return Models(motion=motion, meas=meas, cfg=cfg)
