"""Phase-indexed Gaussian basis functions and trajectory (de)composition.

A trajectory channel ``y(t)`` is approximated as ``Phi(phase(t)) @ w`` where
``Phi`` stacks unnormalized Gaussian kernels centred on a uniform grid over
``[0, 1]``.  Weight vectors for all channels are concatenated in channel order.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import IllConditioned, InvalidArgument

ROLES = ("observed", "control", "masked")


@dataclass(frozen=True)
class BasisLibrary:
    counts: tuple[int, ...]
    centers: tuple[np.ndarray, ...]
    widths: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.counts) != len(self.centers) or len(self.counts) != len(self.widths):
            raise InvalidArgument("counts, centers and widths must have one entry per dimension")
        for n, c, s in zip(self.counts, self.centers, self.widths):
            if len(c) != n or len(s) != n:
                raise InvalidArgument("per-dimension arrays must match the basis count")
            if np.any(np.diff(c) <= 0) or c[0] < 0 or c[-1] > 1:
                raise InvalidArgument("centers must be strictly increasing within [0, 1]")
            if np.any(s <= 0):
                raise InvalidArgument("widths must be strictly positive")

    @property
    def dims(self) -> int:
        return len(self.counts)

    @property
    def size(self) -> int:
        """Total weight length B."""
        return int(sum(self.counts))

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.counts)]).astype(int)

    def block(self, dim: int) -> slice:
        off = self.offsets
        return slice(int(off[dim]), int(off[dim + 1]))

    def to_dict(self) -> dict:
        return {
            "counts": list(self.counts),
            "centers": [c.tolist() for c in self.centers],
            "widths": [s.tolist() for s in self.widths],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BasisLibrary":
        return cls(
            counts=tuple(int(n) for n in d["counts"]),
            centers=tuple(np.asarray(c, dtype=float) for c in d["centers"]),
            widths=tuple(np.asarray(s, dtype=float) for s in d["widths"]),
        )


@dataclass(frozen=True)
class Demonstration:
    """A time-stamped multi-channel recording.

    ``values`` has shape (D, T). ``roles`` tags each channel as observed
    sensor data, a control signal, or masked (present but unusable).
    """

    t: np.ndarray
    values: np.ndarray
    labels: tuple[str, ...]
    roles: tuple[str, ...]
    units: tuple[str, ...] = ()

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        y = np.atleast_2d(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "values", y)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "roles", tuple(self.roles))
        units = tuple(self.units) if self.units else ("",) * y.shape[0]
        object.__setattr__(self, "units", units)
        if t.ndim != 1 or t.size < 2:
            raise InvalidArgument("a demonstration needs at least two timestamps")
        if np.any(np.diff(t) <= 0):
            raise InvalidArgument("timestamps must be strictly increasing")
        if y.shape[1] != t.size:
            raise InvalidArgument(f"values have {y.shape[1]} columns for {t.size} timestamps")
        if not (len(self.labels) == len(self.roles) == len(units) == y.shape[0]):
            raise InvalidArgument("labels, roles and units must have one entry per channel")
        bad = [r for r in self.roles if r not in ROLES]
        if bad:
            raise InvalidArgument(f"unknown channel roles {bad}")
        usable = self.usable
        if not np.all(np.isfinite(y[usable])):
            raise InvalidArgument("unmasked channels must be finite")

    @property
    def dims(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.t.size

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    @property
    def usable(self) -> np.ndarray:
        return np.array([r != "masked" for r in self.roles])

    def phases(self) -> np.ndarray:
        return (self.t - self.t[0]) / (self.t[-1] - self.t[0])

    def with_masked(self, labels: Sequence[str]) -> "Demonstration":
        """Copy with the named channels re-tagged as masked."""
        roles = tuple("masked" if lab in labels else r for lab, r in zip(self.labels, self.roles))
        return Demonstration(self.t, self.values, self.labels, roles, self.units)


@dataclass(frozen=True)
class WeightVector:
    w: np.ndarray
    rmse: np.ndarray
    usable: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.usable is None:
            object.__setattr__(self, "usable", np.ones(len(self.rmse), dtype=bool))


def make_basis(dims: int, counts: Sequence[int] | int, width_scale: float = 1.0) -> BasisLibrary:
    if isinstance(counts, (int, np.integer)):
        counts = [int(counts)] * dims
    counts = [int(n) for n in counts]
    if dims <= 0 or len(counts) != dims:
        raise InvalidArgument("need one positive basis count per dimension")
    if any(n < 2 for n in counts):
        raise InvalidArgument("basis counts must be at least 2")
    if not width_scale > 0:
        raise InvalidArgument("width_scale must be positive")
    centers, widths = [], []
    for n in counts:
        c = np.linspace(0.0, 1.0, n)
        centers.append(c)
        widths.append(np.full(n, width_scale / (n - 1)))
    return BasisLibrary(tuple(counts), tuple(centers), tuple(widths))


def basis_matrix(lib: BasisLibrary, dim: int, phases) -> np.ndarray:
    """Basis values for ``dim`` at each phase, shape (B^d, len(phases))."""
    if not 0 <= dim < lib.dims:
        raise InvalidArgument(f"dimension {dim} out of range for {lib.dims}-dim library")
    p = np.asarray(phases, dtype=float).reshape(1, -1)
    c = lib.centers[dim][:, None]
    s = lib.widths[dim][:, None]
    return np.exp(-((p - c) ** 2) / (2.0 * s * s))


def evaluate_basis(lib: BasisLibrary, dim: int, phase: float) -> np.ndarray:
    return basis_matrix(lib, dim, [phase])[:, 0]


def decompose(demo: Demonstration, lib: BasisLibrary, ridge: float = 1e-6) -> WeightVector:
    """Fit per-channel weights by ridge least squares on a linear phase grid.

    Masked channels get zero weight blocks, NaN residuals and ``usable=False``.
    """
    if demo.dims != lib.dims:
        raise InvalidArgument(f"demonstration has {demo.dims} channels, library has {lib.dims}")
    if ridge < 0:
        raise InvalidArgument("ridge must be non-negative")
    phases = demo.phases()
    w = np.zeros(lib.size)
    rmse = np.full(lib.dims, np.nan)
    usable = demo.usable
    for d in range(lib.dims):
        if not usable[d]:
            continue
        n = lib.counts[d]
        if ridge == 0 and demo.length < n:
            raise IllConditioned(f"{demo.length} samples cannot determine {n} weights without ridge")
        phi = basis_matrix(lib, d, phases)
        gram = phi @ phi.T + ridge * np.eye(n)
        y = demo.values[d]
        try:
            wd = np.linalg.solve(gram, phi @ y)
        except np.linalg.LinAlgError as exc:
            raise IllConditioned(f"normal equations singular for channel {d}") from exc
        w[lib.block(d)] = wd
        rmse[d] = math.sqrt(float(np.mean((phi.T @ wd - y) ** 2)))
    return WeightVector(w, rmse, usable)


def reconstruct(w, lib: BasisLibrary, phases) -> np.ndarray:
    """Decode weights at ``phases``; returns a (D, len(phases)) matrix."""
    w = np.asarray(getattr(w, "w", w), dtype=float)
    if w.shape != (lib.size,):
        raise InvalidArgument(f"weight vector of length {w.shape} does not match B={lib.size}")
    phases = np.atleast_1d(np.asarray(phases, dtype=float))
    if not np.all(np.isfinite(phases)):
        raise InvalidArgument("phases must be finite")
    out = np.empty((lib.dims, phases.size))
    for d in range(lib.dims):
        out[d] = w[lib.block(d)] @ basis_matrix(lib, d, phases)
    return out


# --- file formats -----------------------------------------------------------
#
# Demonstration: ``<name>.csv`` with header ``t,<channel>...`` and a sidecar
# ``<name>.json`` holding ``{"channels": [{"name", "unit", "role"}, ...]}``.
# Weight fragments: JSON with keys, in order, ``counts``, ``centers``,
# ``widths``, ``weights`` (one list per channel block), ``rmse``, ``usable``.

def save_demo(demo: Demonstration, path) -> None:
    path = Path(path)
    with open(path.with_suffix(".csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", *demo.labels])
        for i in range(demo.length):
            writer.writerow([repr(float(demo.t[i]))] + [repr(float(v)) for v in demo.values[:, i]])
    meta = {
        "channels": [
            {"name": n, "unit": u, "role": r}
            for n, u, r in zip(demo.labels, demo.units, demo.roles)
        ]
    }
    with open(path.with_suffix(".json"), "w") as fh:
        json.dump(meta, fh, indent=2)


def load_demo(path) -> Demonstration:
    path = Path(path)
    with open(path.with_suffix(".json")) as fh:
        meta = json.load(fh)
    with open(path.with_suffix(".csv"), newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[0] != "t":
        raise InvalidArgument(f"{path}: first column must be 't'")
    channels = meta["channels"]
    if [c["name"] for c in channels] != header[1:]:
        raise InvalidArgument(f"{path}: sidecar channels do not match CSV header")
    data = np.array([[float(v) for v in r] for r in body])
    return Demonstration(
        t=data[:, 0],
        values=data[:, 1:].T.copy(),
        labels=tuple(header[1:]),
        roles=tuple(c["role"] for c in channels),
        units=tuple(c.get("unit", "") for c in channels),
    )


def weights_to_dict(wv: WeightVector, lib: BasisLibrary) -> dict:
    d = lib.to_dict()
    d["weights"] = [wv.w[lib.block(i)].tolist() for i in range(lib.dims)]
    d["rmse"] = [None if not np.isfinite(r) else float(r) for r in wv.rmse]
    d["usable"] = [bool(u) for u in wv.usable]
    return d


def weights_from_dict(d: dict) -> tuple[WeightVector, BasisLibrary]:
    lib = BasisLibrary.from_dict(d)
    w = np.concatenate([np.asarray(b, dtype=float) for b in d["weights"]])
    rmse = np.array([np.nan if r is None else r for r in d["rmse"]], dtype=float)
    return WeightVector(w, rmse, np.array(d["usable"], dtype=bool)), lib
