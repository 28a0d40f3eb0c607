"""Ensemble Bayesian Interaction Primitives.

Joint phase / trajectory inference with a perturbed-observation ensemble
Kalman filter over the state ``s = [phase, phase_velocity, w]``.  The
observation operator decodes each member's weights at that member's own
phase, which is where the nonlinearity (and the temporal inference) comes
from.

Members are rows of ``X``; columns 0 and 1 hold phase and phase velocity.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .basis import BasisLibrary, basis_matrix, reconstruct
from .errors import InvalidArgument, NumericalError
from .model import TrajectoryModel

log = logging.getLogger(__name__)

PHASE, PHASE_VEL = 0, 1
N_TEMPORAL = 2
COLLAPSE_TOL = 1e-12
SINGULAR_JITTER = 1e-9


@dataclass(frozen=True)
class ProcessNoise:
    """Per-step standard deviations of the additive transition noise."""

    phase: float = 0.0
    phase_vel: float = 1e-4
    weights: float = 1e-4


@dataclass
class EnsembleState:
    X: np.ndarray
    rng: np.random.Generator
    step: int = 0

    @property
    def size(self) -> int:
        return self.X.shape[0]

    @property
    def phases(self) -> np.ndarray:
        return self.X[:, PHASE]

    @property
    def weights(self) -> np.ndarray:
        return self.X[:, N_TEMPORAL:]


@dataclass(frozen=True)
class Observation:
    values: np.ndarray
    mask: np.ndarray
    t: float = 0.0

    @classmethod
    def full(cls, values, mask, t: float = 0.0) -> "Observation":
        return cls(np.asarray(values, dtype=float), np.asarray(mask, dtype=bool), float(t))


@dataclass(frozen=True)
class StateEstimate:
    phase_mean: float
    phase_var: float
    phase_vel_mean: float
    weights_mean: np.ndarray
    predicted: np.ndarray


def _clamp(X: np.ndarray) -> None:
    np.clip(X[:, PHASE], 0.0, 1.0, out=X[:, PHASE])
    np.maximum(X[:, PHASE_VEL], 0.0, out=X[:, PHASE_VEL])


def init_ensemble(model: TrajectoryModel, E: int | None = None, seed: int = 0,
                  vel_jitter: float = 0.1) -> EnsembleState:
    """Seed an ensemble by resampling training demonstrations.

    ``E`` defaults to the number of demonstrations.  Each member takes the
    weight row and reciprocal duration of a demonstration drawn with
    replacement; phase velocity gets Gaussian jitter with standard deviation
    ``vel_jitter`` times the mean phase velocity.
    """
    if E is None:
        E = model.n_demos
    if E < 2:
        raise InvalidArgument("ensemble needs at least two members")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, model.n_demos, size=E)
    X = np.empty((E, N_TEMPORAL + model.lib.size))
    X[:, PHASE] = 0.0
    X[:, PHASE_VEL] = model.phase_velocities[idx] + rng.normal(0.0, vel_jitter * model.phase_vel_mean, size=E)
    X[:, N_TEMPORAL:] = model.W[idx]
    _clamp(X)
    return EnsembleState(X, rng, 0)


def _collapsed(X: np.ndarray) -> bool:
    return bool(np.all(np.ptp(X, axis=0) < COLLAPSE_TOL))


def _add_noise(X: np.ndarray, rng: np.random.Generator, noise: ProcessNoise) -> None:
    E = X.shape[0]
    if noise.phase > 0:
        X[:, PHASE] += rng.normal(0.0, noise.phase, size=E)
    if noise.phase_vel > 0:
        X[:, PHASE_VEL] += rng.normal(0.0, noise.phase_vel, size=E)
    if noise.weights > 0:
        X[:, N_TEMPORAL:] += rng.normal(0.0, noise.weights, size=X[:, N_TEMPORAL:].shape)


def predict(ens: EnsembleState, dt: float, noise: ProcessNoise = ProcessNoise()) -> EnsembleState:
    """Constant-velocity propagation of every member plus transition noise."""
    if not dt > 0:
        raise InvalidArgument("dt must be positive")
    X = ens.X.copy()
    X[:, PHASE] += X[:, PHASE_VEL] * dt
    if _collapsed(X):
        log.warning("ensemble collapsed at step %d; re-jittering", ens.step)
        _add_noise(X, ens.rng, noise)
    _add_noise(X, ens.rng, noise)
    _clamp(X)
    return EnsembleState(X, ens.rng, ens.step + 1)


def observe_members(ens: EnsembleState, lib: BasisLibrary, mask) -> np.ndarray:
    """Predicted observation of each member at its own phase, shape (E, n_active)."""
    active = np.flatnonzero(np.asarray(mask, dtype=bool))
    if active.size == 0:
        raise InvalidArgument("observation mask selects no channels")
    phases = ens.X[:, PHASE]
    W = ens.X[:, N_TEMPORAL:]
    out = np.empty((ens.size, active.size))
    for k, d in enumerate(active):
        phi = basis_matrix(lib, int(d), phases)  # (B^d, E)
        out[:, k] = np.einsum("eb,be->e", W[:, lib.block(int(d))], phi)
    return out


def _solve_innovation(S: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Return ``rhs @ S^-1`` for symmetric positive definite ``S``."""
    for attempt in range(2):
        try:
            L = np.linalg.cholesky(S)
            break
        except np.linalg.LinAlgError:
            if attempt:
                raise NumericalError("innovation covariance is singular") from None
            S = S + SINGULAR_JITTER * np.eye(S.shape[0])
    # rhs S^-1 = (S^-1 rhs^T)^T
    z = np.linalg.solve(L, rhs.T)
    return np.linalg.solve(L.T, z).T


def active_channels(obs: Observation, model: TrajectoryModel) -> np.ndarray:
    mask = np.asarray(obs.mask, dtype=bool) & model.usable
    if not mask.any():
        raise InvalidArgument("observation has no active channel usable by the model")
    return mask


def update(ens: EnsembleState, obs: Observation, model: TrajectoryModel,
           noise_scale: float = 1.0) -> tuple[EnsembleState, StateEstimate]:
    """Condition the ensemble on a (partial) observation.

    ``noise_scale`` multiplies the model's diagonal observation noise.
    """
    mask = active_channels(obs, model)
    E = ens.size
    X = ens.X
    HX = observe_members(ens, model.lib, mask)
    HA = HX - HX.mean(axis=0)
    A = X - X.mean(axis=0)
    r = model.r_diag[mask] * noise_scale
    S = HA.T @ HA / (E - 1) + np.diag(r)
    cross = A.T @ HA / (E - 1)  # (n, m)
    K = _solve_innovation(S, cross)
    y = np.asarray(obs.values, dtype=float)[mask]
    perturbed = y + ens.rng.normal(size=HX.shape) * np.sqrt(r)
    Xn = X + (perturbed - HX) @ K.T
    _clamp(Xn)
    out = EnsembleState(Xn, ens.rng, ens.step)
    return out, estimate(out, model.lib)


def estimate(ens: EnsembleState, lib: BasisLibrary) -> StateEstimate:
    X = ens.X
    phase = X[:, PHASE]
    w_mean = X[:, N_TEMPORAL:].mean(axis=0)
    phase_mean = float(phase.mean())
    return StateEstimate(
        phase_mean=phase_mean,
        phase_var=float(phase.var()),
        phase_vel_mean=float(X[:, PHASE_VEL].mean()),
        weights_mean=w_mean,
        predicted=reconstruct(w_mean, lib, [phase_mean])[:, 0],
    )


def generate_control(ens: EnsembleState, model: TrajectoryModel, lookahead: float = 0.0) -> np.ndarray:
    """Target pose decoded from the mean weights slightly ahead of the mean phase."""
    if not model.control.any():
        raise InvalidArgument("model has no control channels")
    phase = min(float(ens.X[:, PHASE].mean()) + lookahead, 1.0)
    w_mean = ens.X[:, N_TEMPORAL:].mean(axis=0)
    return reconstruct(w_mean, model.lib, [phase])[model.control, 0]


class EnBIPFilter:
    """Stateful wrapper pairing an ensemble with its model and settings."""

    def __init__(self, model: TrajectoryModel, E: int | None = None, seed: int = 0,
                 noise: ProcessNoise = ProcessNoise(), noise_scale: float = 1.0,
                 lookahead: float = 0.0, obs_mask=None):
        self.model = model
        self.noise = noise
        self.noise_scale = noise_scale
        self.lookahead = lookahead
        self.obs_mask = model.observed if obs_mask is None else np.asarray(obs_mask, dtype=bool)
        self.state = init_ensemble(model, E, seed)
        self.last = estimate(self.state, model.lib)

    def step(self, values, dt: float, t: float = 0.0) -> StateEstimate:
        self.state = predict(self.state, dt, self.noise)
        obs = Observation.full(values, self.obs_mask, t)
        self.state, self.last = update(self.state, obs, self.model, self.noise_scale)
        return self.last

    def condition(self, values, t: float = 0.0) -> StateEstimate:
        """Update without a prediction step, e.g. on the very first reading."""
        obs = Observation.full(values, self.obs_mask, t)
        self.state, self.last = update(self.state, obs, self.model, self.noise_scale)
        return self.last

    def control(self) -> np.ndarray:
        return generate_control(self.state, self.model, self.lookahead)
