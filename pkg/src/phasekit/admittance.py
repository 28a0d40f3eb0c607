"""Planar (x, z, theta) Cartesian admittance controller.

Virtual dynamics ``M p~'' + D p~' + K p~ = f_ext`` with ``p~ = p - p_d`` and
zero target velocity, integrated with semi-implicit Euler.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

DEFAULT_SUBSTEPS = 5
MAX_DT = 0.1


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


@dataclass(frozen=True)
class AdmittanceParams:
    M: np.ndarray
    D: np.ndarray
    K: np.ndarray

    def __post_init__(self):
        for name in ("M", "D", "K"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if v.shape != (3,):
                raise InvalidArgument(f"{name} must have three diagonal entries")
            if not np.all(v > 0):
                raise InvalidArgument(f"{name} entries must be positive")
            object.__setattr__(self, name, v)

    @property
    def natural_frequency(self) -> np.ndarray:
        return np.sqrt(self.K / self.M)

    def to_dict(self) -> dict:
        return {"M": self.M.tolist(), "D": self.D.tolist(), "K": self.K.tolist()}

    @classmethod
    def from_config(cls, cfg: dict) -> "AdmittanceParams":
        """Build from ``{"M": [...], "K": [...], "D": [...]}`` or ``{"critical": true}``."""
        M = cfg.get("M", DEFAULT_M)
        K = cfg.get("K", DEFAULT_K)
        if cfg.get("critical", "D" not in cfg):
            return critically_damped(M, K)
        return cls(np.asarray(M, float), np.asarray(cfg["D"], float), np.asarray(K, float))


def critically_damped(M, K) -> AdmittanceParams:
    M = np.asarray(M, dtype=float).reshape(-1)
    K = np.asarray(K, dtype=float).reshape(-1)
    return AdmittanceParams(M, 2.0 * np.sqrt(M * K), K)


# x and z differ: soft laterally so the grommets can find the pins, stiffer
# vertically so downward targets load contacts.
DEFAULT_M = (5.0, 5.0, 0.2)
DEFAULT_K = (100.0, 400.0, 20.0)


def default_params() -> AdmittanceParams:
    return critically_damped(DEFAULT_M, DEFAULT_K)


@dataclass(frozen=True)
class RobotState:
    pose: np.ndarray
    vel: np.ndarray
    acc: np.ndarray

    @classmethod
    def at(cls, pose) -> "RobotState":
        return cls(np.asarray(pose, dtype=float).copy(), np.zeros(3), np.zeros(3))


def _check_finite(*arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise InvalidArgument("non-finite input to admittance_step")


def admittance_step(state: RobotState, target, f_ext, params: AdmittanceParams, dt: float,
                    substeps: int = DEFAULT_SUBSTEPS) -> RobotState:
    """Advance the virtual dynamics by ``dt`` seconds.

    The wrench and target are held constant over the step, which is split
    into ``substeps`` semi-implicit Euler updates.
    """
    target = np.asarray(target, dtype=float)
    f_ext = np.asarray(f_ext, dtype=float)
    _check_finite(state.pose, state.vel, target, f_ext)
    if not 0 < dt <= MAX_DT:
        raise InvalidArgument(f"dt must lie in (0, {MAX_DT}]")
    h = dt / substeps
    p = state.pose.copy()
    v = state.vel.copy()
    M, D, K = params.M, params.D, params.K
    acc = state.acc
    for _ in range(substeps):
        err = p - target
        err[2] = wrap_angle(err[2])
        acc = (f_ext - D * v - K * err) / M
        v = v + acc * h
        p = p + v * h
    p[2] = wrap_angle(p[2])
    return RobotState(p, v, acc)


def virtual_energy(state: RobotState, target, params: AdmittanceParams) -> float:
    err = state.pose - np.asarray(target, dtype=float)
    err[2] = wrap_angle(err[2])
    return 0.5 * float(state.vel @ (params.M * state.vel)) + 0.5 * float(err @ (params.K * err))
