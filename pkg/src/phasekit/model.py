"""Demonstration prior: stacked weight rows plus timing and noise statistics."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .basis import BasisLibrary, Demonstration, decompose
from .errors import InvalidArgument

FORMAT_VERSION = 1
NOISE_FLOOR = 1e-8


@dataclass(frozen=True)
class TrajectoryModel:
    lib: BasisLibrary
    W: np.ndarray
    durations: np.ndarray
    phase_vel_mean: float
    phase_vel_var: float
    r_diag: np.ndarray
    labels: tuple[str, ...]
    roles: tuple[str, ...]
    units: tuple[str, ...]
    rmse: np.ndarray  # (N, D) per-demo residuals recorded at decomposition time

    def __post_init__(self):
        if self.W.ndim != 2 or self.W.shape[0] < 2:
            raise InvalidArgument("a model needs at least two demonstrations")
        if self.W.shape[1] != self.lib.size:
            raise InvalidArgument("weight matrix width does not match the basis library")
        if not self.phase_vel_mean > 0 or self.phase_vel_var < 0:
            raise InvalidArgument("invalid phase-velocity statistics")

    @property
    def n_demos(self) -> int:
        return self.W.shape[0]

    @property
    def usable(self) -> np.ndarray:
        return np.array([r != "masked" for r in self.roles])

    @property
    def observed(self) -> np.ndarray:
        return np.array([r == "observed" for r in self.roles])

    @property
    def control(self) -> np.ndarray:
        return np.array([r == "control" for r in self.roles])

    @property
    def phase_velocities(self) -> np.ndarray:
        return 1.0 / self.durations

    def channel(self, label: str) -> int:
        return self.labels.index(label)

    def to_dict(self) -> dict:
        """Serializable form; key order is part of the file format."""
        return {
            "format_version": FORMAT_VERSION,
            "basis": self.lib.to_dict(),
            "labels": list(self.labels),
            "roles": list(self.roles),
            "units": list(self.units),
            "W": self.W.tolist(),
            "durations": self.durations.tolist(),
            "phase_vel_mean": float(self.phase_vel_mean),
            "phase_vel_var": float(self.phase_vel_var),
            "r_diag": self.r_diag.tolist(),
            "rmse": [[None if not np.isfinite(v) else float(v) for v in row] for row in self.rmse],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectoryModel":
        version = d.get("format_version")
        if version != FORMAT_VERSION:
            raise InvalidArgument(f"unsupported model format_version {version!r}")
        return cls(
            lib=BasisLibrary.from_dict(d["basis"]),
            W=np.asarray(d["W"], dtype=float),
            durations=np.asarray(d["durations"], dtype=float),
            phase_vel_mean=float(d["phase_vel_mean"]),
            phase_vel_var=float(d["phase_vel_var"]),
            r_diag=np.asarray(d["r_diag"], dtype=float),
            labels=tuple(d["labels"]),
            roles=tuple(d["roles"]),
            units=tuple(d["units"]),
            rmse=np.array([[np.nan if v is None else v for v in row] for row in d["rmse"]], dtype=float),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "TrajectoryModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def check_layout(demos: Sequence[Demonstration]) -> None:
    first = demos[0]
    for i, demo in enumerate(demos[1:], start=1):
        if demo.labels != first.labels or demo.roles != first.roles:
            raise InvalidArgument(f"demonstration {i} has a different channel layout")


def fit_model(demos: Sequence[Demonstration], lib: BasisLibrary, ridge: float = 1e-6) -> TrajectoryModel:
    demos = list(demos)
    if len(demos) < 2:
        raise InvalidArgument("fit_model needs at least two demonstrations")
    check_layout(demos)
    fits = [decompose(d, lib, ridge) for d in demos]
    W = np.stack([f.w for f in fits])
    rmse = np.stack([f.rmse for f in fits])
    durations = np.array([d.duration for d in demos])
    rates = 1.0 / durations

    # Pooled residual variance per channel: sum of squared errors over all samples.
    lengths = np.array([d.length for d in demos], dtype=float)
    usable = demos[0].usable
    r_diag = np.full(lib.dims, NOISE_FLOOR)
    sse = np.nansum(rmse**2 * lengths[:, None], axis=0)
    r_diag[usable] = np.maximum(sse[usable] / lengths.sum(), NOISE_FLOOR)

    first = demos[0]
    return TrajectoryModel(
        lib=lib,
        W=W,
        durations=durations,
        phase_vel_mean=float(rates.mean()),
        phase_vel_var=float(rates.var()),
        r_diag=r_diag,
        labels=first.labels,
        roles=first.roles,
        units=first.units,
        rmse=rmse,
    )
