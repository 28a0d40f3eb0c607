"""Comparison policies: ProMP with DTW alignment, and k-NN behavioral cloning."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .basis import BasisLibrary, Demonstration, basis_matrix, decompose, reconstruct
from .enbip import Observation
from .errors import InvalidArgument, NumericalError
from .model import check_layout

SIGMA_REG = 1e-8


# --- dynamic time warping ----------------------------------------------------

def pairwise_distance(reference: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Euclidean distance between every query row and every reference row, shape (Tq, Tr)."""
    diff = query[:, None, :] - reference[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def dtw_align(reference, query, distance: str = "euclidean") -> tuple[list[tuple[int, int]], float]:
    """Optimal monotone alignment of ``query`` onto ``reference``.

    Both inputs are (T, C) arrays (1-D inputs are treated as one channel).
    Returns the warp path as (query index, reference index) pairs and its
    total cost.  Cells are filled one anti-diagonal at a time.
    """
    if distance != "euclidean":
        raise InvalidArgument(f"unsupported distance {distance!r}")
    ref = np.asarray(reference, dtype=float)
    qry = np.asarray(query, dtype=float)
    ref = ref[:, None] if ref.ndim == 1 else ref
    qry = qry[:, None] if qry.ndim == 1 else qry
    if ref.shape[0] == 0 or qry.shape[0] == 0:
        raise InvalidArgument("sequences must be non-empty")
    if ref.shape[1] != qry.shape[1]:
        raise InvalidArgument("reference and query must have the same channel count")
    cost = pairwise_distance(ref, qry)
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for k in range(2, n + m + 1):
        i = np.arange(max(1, k - m), min(n, k - 1) + 1)
        j = k - i
        best = np.minimum(np.minimum(acc[i - 1, j - 1], acc[i - 1, j]), acc[i, j - 1])
        acc[i, j] = best + cost[i - 1, j - 1]
    path = _traceback(acc)
    return path, float(acc[n, m])


def _traceback(acc: np.ndarray) -> list[tuple[int, int]]:
    i, j = acc.shape[0] - 1, acc.shape[1] - 1
    path = [(i - 1, j - 1)]
    while (i, j) != (1, 1):
        # ties prefer the diagonal, then advancing the reference only
        moves = ((acc[i - 1, j - 1], i - 1, j - 1), (acc[i, j - 1], i, j - 1), (acc[i - 1, j], i - 1, j))
        _, i, j = min(moves, key=lambda mv: mv[0])
        path.append((i - 1, j - 1))
    return path[::-1]


def check_path(path: Sequence[tuple[int, int]], n_query: int, n_ref: int) -> bool:
    if path[0] != (0, 0) or path[-1] != (n_query - 1, n_ref - 1):
        return False
    steps = {(a2 - a1, b2 - b1) for (a1, b1), (a2, b2) in zip(path, path[1:])}
    return steps <= {(1, 0), (0, 1), (1, 1)}


def warp_to_reference(demo: Demonstration, reference: Demonstration, channels: np.ndarray) -> Demonstration:
    """Resample ``demo`` on the reference's clock along the DTW path over ``channels``."""
    path, _ = dtw_align(reference.values[channels].T, demo.values[channels].T)
    sums = np.zeros((demo.dims, reference.length))
    counts = np.zeros(reference.length)
    for i, j in path:
        sums[:, j] += demo.values[:, i]
        counts[j] += 1
    return Demonstration(reference.t, sums / counts, demo.labels, demo.roles, demo.units)


# --- ProMP -------------------------------------------------------------------

@dataclass(frozen=True)
class PrompModel:
    mu: np.ndarray
    sigma: np.ndarray
    lib: BasisLibrary
    labels: tuple[str, ...]
    roles: tuple[str, ...]
    durations: np.ndarray

    def __post_init__(self):
        if not np.allclose(self.sigma, self.sigma.T, atol=1e-12):
            raise InvalidArgument("weight covariance must be symmetric")

    @property
    def mean_duration(self) -> float:
        return float(self.durations.mean())

    @property
    def control(self) -> np.ndarray:
        return np.array([r == "control" for r in self.roles])

    @property
    def observed(self) -> np.ndarray:
        return np.array([r == "observed" for r in self.roles])

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "sigma": self.sigma.tolist(), "basis": self.lib.to_dict(),
                "labels": list(self.labels), "roles": list(self.roles), "durations": self.durations.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PrompModel":
        return cls(np.asarray(d["mu"], dtype=float), np.asarray(d["sigma"], dtype=float),
                   BasisLibrary.from_dict(d["basis"]), tuple(d["labels"]), tuple(d["roles"]),
                   np.asarray(d["durations"], dtype=float))


def promp_fit(demos: Sequence[Demonstration], lib: BasisLibrary, ridge: float = 1e-6,
              align: bool = False) -> PrompModel:
    """Gaussian over basis weights; with ``align`` demos are first DTW-warped
    onto the median-length demonstration using the observed pose channels."""
    demos = list(demos)
    if len(demos) < 2:
        raise InvalidArgument("promp_fit needs at least two demonstrations")
    check_layout(demos)
    durations = np.array([d.duration for d in demos])
    if align:
        ref = demos[int(np.argsort(durations)[len(demos) // 2])]
        chans = np.flatnonzero([r == "observed" for r in ref.roles])[:3]
        demos = [warp_to_reference(d, ref, chans) for d in demos]
    W = np.stack([decompose(d, lib, ridge).w for d in demos])
    mu = W.mean(axis=0)
    dev = W - mu
    sigma = dev.T @ dev / (len(W) - 1) + SIGMA_REG * np.eye(lib.size)
    sigma = 0.5 * (sigma + sigma.T)
    return PrompModel(mu, sigma, lib, demos[0].labels, demos[0].roles, durations)


def observation_matrix(lib: BasisLibrary, channels: np.ndarray, phase: float) -> np.ndarray:
    """Rows map the full weight vector to each selected channel at ``phase``."""
    H = np.zeros((len(channels), lib.size))
    for k, d in enumerate(channels):
        H[k, lib.block(int(d))] = basis_matrix(lib, int(d), [phase])[:, 0]
    return H


def promp_condition(m: PrompModel, obs: Observation, phase: float, noise) -> PrompModel:
    """Gaussian conditioning of the weight distribution on ``obs`` at a known phase."""
    active = np.flatnonzero(np.asarray(obs.mask, dtype=bool))
    if active.size == 0:
        raise InvalidArgument("observation mask selects no channels")
    H = observation_matrix(m.lib, active, phase)
    y = np.asarray(obs.values, dtype=float)[active]
    r = np.asarray(noise, dtype=float)[active]
    SH = m.sigma @ H.T
    S = H @ SH + np.diag(r)
    try:
        gain = np.linalg.solve(S, SH.T).T
    except np.linalg.LinAlgError:
        try:
            gain = np.linalg.solve(S + 1e-9 * np.eye(len(r)), SH.T).T
        except np.linalg.LinAlgError as exc:
            raise NumericalError("innovation covariance is singular") from exc
    mu = m.mu + gain @ (y - H @ m.mu)
    sigma = m.sigma - gain @ SH.T
    sigma = 0.5 * (sigma + sigma.T)
    return PrompModel(mu, sigma, m.lib, m.labels, m.roles, m.durations)


def promp_policy_step(m: PrompModel, t: float, duration: float) -> np.ndarray:
    """Control pose from the mean weights on a fixed clock."""
    if not duration > 0:
        raise InvalidArgument("duration estimate must be positive")
    phase = min(max(t / duration, 0.0), 1.0)
    return reconstruct(m.mu, m.lib, [phase])[m.control, 0]


# --- behavioral cloning ------------------------------------------------------

@dataclass(frozen=True)
class BcPolicy:
    features: np.ndarray  # (n, n_obs) standardized observations
    targets: np.ndarray  # (n, n_ctrl) next-step controls
    mean: np.ndarray
    scale: np.ndarray
    observed: np.ndarray
    k: int = 5

    def to_dict(self) -> dict:
        return {"features": self.features.tolist(), "targets": self.targets.tolist(), "mean": self.mean.tolist(),
                "scale": self.scale.tolist(), "observed": self.observed.tolist(), "k": self.k}

    @classmethod
    def from_dict(cls, d: dict) -> "BcPolicy":
        return cls(np.asarray(d["features"], dtype=float), np.asarray(d["targets"], dtype=float),
                   np.asarray(d["mean"], dtype=float), np.asarray(d["scale"], dtype=float),
                   np.asarray(d["observed"], dtype=bool), int(d["k"]))


def bc_fit(demos: Sequence[Demonstration], k: int = 5, stride: int = 1) -> BcPolicy:
    """k-NN regression from the current observation to the next control."""
    demos = list(demos)
    if not demos:
        raise InvalidArgument("behavioral cloning needs at least one demonstration")
    check_layout(demos)
    roles = demos[0].roles
    observed = np.array([r == "observed" for r in roles])
    control = np.array([r == "control" for r in roles])
    feats, targs = [], []
    for d in demos:
        idx = np.arange(0, d.length - 1, stride)
        feats.append(d.values[observed][:, idx].T)
        targs.append(d.values[control][:, idx + 1].T)
    X = np.concatenate(feats)
    Y = np.concatenate(targs)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    return BcPolicy((X - mean) / scale, Y, mean, scale, observed, min(k, len(X)))


def bc_policy_step(policy: BcPolicy, observation, k: int | None = None) -> np.ndarray:
    """Inverse-distance weighted mean of the k nearest training controls."""
    k = policy.k if k is None else k
    obs = np.asarray(observation, dtype=float)
    if obs.shape[0] != policy.features.shape[1]:
        # a (possibly truncated) full-layout vector: keep the observed channels
        full = np.zeros(policy.observed.size)
        full[: obs.size] = obs
        obs = full[policy.observed]
    q = (obs - policy.mean) / policy.scale
    dist = np.sqrt(np.sum((policy.features - q) ** 2, axis=1))
    nearest = np.argsort(dist, kind="stable")[:k]
    d = dist[nearest]
    if d[0] == 0.0:
        return policy.targets[nearest[d == 0.0]].mean(axis=0)
    w = 1.0 / d
    return (w[:, None] * policy.targets[nearest]).sum(axis=0) / w.sum()
