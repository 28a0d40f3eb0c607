"""Closed-loop trials, suites, and report export."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import baselines
from .basis import make_basis, reconstruct
from .enbip import EnBIPFilter, Observation, ProcessNoise
from .errors import InvalidArgument, NumericalError
from .model import TrajectoryModel, fit_model
from .sim import FT_CHANNELS, WorldConfig, check_success, default_disturbance, generate_demos, make_world, sim_step

log = logging.getLogger(__name__)

POLICIES = ("enbip", "promp", "bc")
BUNDLE_VERSION = 1
REPORT_VERSION = 1
EXTENDED_START = 0.03

# Tuned for the simulated insertion task; see README.
TUNED_NOISE = ProcessNoise(phase=0.03, phase_vel=1e-4, weights=1e-4)
TUNED_NOISE_SCALE = 100.0


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = "enbip"
    ensemble: int | None = None
    noise: ProcessNoise = TUNED_NOISE
    noise_scale: float = TUNED_NOISE_SCALE
    lookahead: float = 0.0
    filter_hz: float = 25.0
    mask_ft: bool = False
    promp_duration: str = "mean"  # or "uniform"
    timeout: float = 60.0

    def __post_init__(self):
        if self.kind not in POLICIES:
            raise InvalidArgument(f"unknown policy {self.kind!r}")
        if self.promp_duration not in ("mean", "uniform"):
            raise InvalidArgument(f"unknown ProMP duration mode {self.promp_duration!r}")
        if not (self.filter_hz > 0 and self.timeout > 0 and self.noise_scale > 0):
            raise InvalidArgument("filter rate, timeout and noise scale must be positive")
        if self.ensemble is not None and self.ensemble < 2:
            raise InvalidArgument("ensemble needs at least two members")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["noise"] = asdict(self.noise)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyConfig":
        d = dict(d)
        if "noise" in d:
            d["noise"] = ProcessNoise(**d["noise"])
        return cls(**d)


@dataclass
class TrialResult:
    policy: str
    tolerance: str
    disturbed: bool
    success: bool
    duration: float
    reason: str
    seed: int
    final_pose: list[float]
    log: list[tuple[float, float, float]] = field(default_factory=list)  # (t, phase_mean, phase_var)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["log"] = [[t, _json_float(p), _json_float(v)] for t, p, v in self.log]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrialResult":
        d = dict(d)
        d["log"] = [(float(t), _from_json_float(p), _from_json_float(v)) for t, p, v in d.get("log", [])]
        return cls(**d)


def _json_float(v: float):
    return None if not math.isfinite(v) else float(v)


def _from_json_float(v) -> float:
    return float("nan") if v is None else float(v)


def _observation_mask(model_roles: Sequence[str], labels: Sequence[str], mask_ft: bool) -> np.ndarray:
    mask = np.array([r == "observed" for r in model_roles])
    if mask_ft:
        mask &= np.array([lab not in FT_CHANNELS for lab in labels])
    return mask


def _pad(obs: np.ndarray, n: int) -> np.ndarray:
    """Observation vector widened to the model's full channel layout."""
    full = np.zeros(n)
    full[: obs.size] = obs
    return full


class _EnbipPolicy:
    def __init__(self, model: TrajectoryModel, cfg: PolicyConfig, seed: int):
        self.filter = EnBIPFilter(model, cfg.ensemble, seed, cfg.noise, cfg.noise_scale, cfg.lookahead,
                                  obs_mask=_observation_mask(model.roles, model.labels, cfg.mask_ft))

    def start(self, obs: np.ndarray, t: float) -> np.ndarray:
        self.filter.condition(_pad(obs, len(self.filter.model.roles)), t)
        return self.filter.control()

    def step(self, obs: np.ndarray, t: float, dt: float) -> np.ndarray:
        self.filter.step(_pad(obs, len(self.filter.model.roles)), dt, t)
        return self.filter.control()

    @property
    def phase(self) -> tuple[float, float]:
        return self.filter.last.phase_mean, self.filter.last.phase_var

    def estimate_row(self) -> list[float]:
        est = self.filter.last
        return [est.phase_mean, est.phase_var, est.phase_vel_mean, *est.predicted]


class _PrompPolicy:
    def __init__(self, model: baselines.PrompModel, cfg: PolicyConfig, rng: np.random.Generator,
                 noise: np.ndarray):
        self.model = model
        self.noise = noise
        self.mask = _observation_mask(model.roles, model.labels, cfg.mask_ft)
        if cfg.promp_duration == "uniform":
            self.duration = float(rng.uniform(model.durations.min(), model.durations.max()))
        else:
            self.duration = model.mean_duration
        self._t = 0.0

    def start(self, obs: np.ndarray, t: float) -> np.ndarray:
        full = _pad(obs, len(self.model.roles))
        # contact is absent at the start, so only the pose is informative
        pose_only = self.mask & np.array([lab not in FT_CHANNELS for lab in self.model.labels])
        self.model = baselines.promp_condition(self.model, Observation.full(full, pose_only, t), 0.0, self.noise)
        return baselines.promp_policy_step(self.model, t, self.duration)

    def step(self, obs: np.ndarray, t: float, dt: float) -> np.ndarray:
        self._t = t
        return baselines.promp_policy_step(self.model, t, self.duration)

    @property
    def phase(self) -> tuple[float, float]:
        return min(self._t / self.duration, 1.0), 0.0

    def estimate_row(self) -> list[float]:
        phase = self.phase[0]
        predicted = reconstruct(self.model.mu, self.model.lib, [phase])[:, 0]
        return [phase, 0.0, 1.0 / self.duration, *predicted]


class _BcPolicy:
    def __init__(self, policy: baselines.BcPolicy):
        self.policy = policy

    def start(self, obs: np.ndarray, t: float) -> np.ndarray:
        return baselines.bc_policy_step(self.policy, obs)

    def step(self, obs: np.ndarray, t: float, dt: float) -> np.ndarray:
        return baselines.bc_policy_step(self.policy, obs)

    @property
    def phase(self) -> tuple[float, float]:
        return float("nan"), float("nan")

    def estimate_row(self) -> list[float]:
        return [float("nan")] * 3


@dataclass
class Learned:
    """Everything trained from one demonstration set."""

    model: TrajectoryModel
    promp: baselines.PrompModel | None = None
    bc: baselines.BcPolicy | None = None

    def to_dict(self) -> dict:
        return {
            "format_version": BUNDLE_VERSION,
            "model": self.model.to_dict(),
            "promp": None if self.promp is None else self.promp.to_dict(),
            "bc": None if self.bc is None else self.bc.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Learned":
        if d.get("format_version") != BUNDLE_VERSION:
            raise InvalidArgument(f"unsupported model bundle format_version {d.get('format_version')!r}")
        return cls(
            TrajectoryModel.from_dict(d["model"]),
            None if d.get("promp") is None else baselines.PrompModel.from_dict(d["promp"]),
            None if d.get("bc") is None else baselines.BcPolicy.from_dict(d["bc"]),
        )

    def save(self, path) -> None:
        _write_text(path, json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Learned":
        return cls.from_dict(_read_json(path))


def train(demos, basis_count: int = 11, ridge: float = 1e-6, mask_ft: bool = False,
          baselines_too: bool = True) -> Learned:
    """Fit the interaction-primitive model and, optionally, both baselines."""
    demos = list(demos)
    if not demos:
        raise InvalidArgument("no demonstrations to train on")
    if mask_ft:
        demos = [d.with_masked(FT_CHANNELS) for d in demos]
    lib = make_basis(demos[0].dims, basis_count)
    model = fit_model(demos, lib, ridge)
    if not baselines_too:
        return Learned(model)
    return Learned(model, baselines.promp_fit(demos, lib, ridge, align=True), baselines.bc_fit(demos, stride=4))


def make_policy(learned: Learned, cfg: PolicyConfig, seed: int):
    if cfg.kind == "enbip":
        return _EnbipPolicy(learned.model, cfg, seed)
    if cfg.kind == "promp":
        if learned.promp is None:
            raise InvalidArgument("model bundle has no ProMP baseline")
        return _PrompPolicy(learned.promp, cfg, np.random.default_rng([seed, 1]), learned.model.r_diag)
    if learned.bc is None:
        raise InvalidArgument("model bundle has no behavioral-cloning baseline")
    return _BcPolicy(learned.bc)


def run_trial(learned: Learned, world_cfg: WorldConfig, cfg: PolicyConfig, seed: int,
              tolerance: str = "", disturbed: bool | None = None,
              estimates: list | None = None) -> TrialResult:
    """One closed-loop episode: simulator at its own rate, policy at ``cfg.filter_hz``.

    When ``estimates`` is a list, one row ``[step, t, phase_mean, phase_var,
    phase_vel_mean, *predicted]`` is appended per policy update.
    """
    world = make_world(world_cfg, seed)
    tolerance = tolerance or f"{round(world_cfg.geometry.tolerance * 1e3, 3):g}mm"
    disturbed = bool(world_cfg.perturbations) if disturbed is None else disturbed
    ratio = max(1, int(round(1.0 / (cfg.filter_hz * world_cfg.dt))))
    policy_dt = ratio * world_cfg.dt
    entries: list[tuple[float, float, float]] = []
    reason = "timeout"
    success = False
    try:
        policy = make_policy(learned, cfg, seed)
        obs = np.concatenate([world.state.pose, world.ft])
        target = policy.start(obs, 0.0)
        entries.append((0.0, *policy.phase))
        if estimates is not None:
            estimates.append([0, 0.0, *policy.estimate_row()])
        step = 0
        while world.t < cfg.timeout - 1e-9:
            world, reading = sim_step(world, target)
            step += 1
            if check_success(world):
                success, reason = True, "success"
                break
            if step % ratio == 0:
                target = policy.step(reading.as_vector(), world.t, policy_dt)
                if not np.all(np.isfinite(target)):
                    raise NumericalError("policy produced a non-finite target")
                entries.append((world.t, *policy.phase))
                if estimates is not None:
                    estimates.append([step // ratio, world.t, *policy.estimate_row()])
    except (NumericalError, InvalidArgument, FloatingPointError, np.linalg.LinAlgError) as exc:
        reason = f"numerical: {exc}"
        log.warning("trial %d failed numerically: %s", seed, exc)
    return TrialResult(
        policy=cfg.kind,
        tolerance=tolerance,
        disturbed=disturbed,
        success=success,
        duration=world.t,
        reason=reason,
        seed=seed,
        final_pose=[float(v) for v in world.state.pose],
        log=[(float(t), float(p), float(v)) for t, p, v in entries],
    )


# --- suites ---------------------------------------------------------------------

@dataclass(frozen=True)
class Condition:
    name: str
    policy: PolicyConfig = PolicyConfig()
    tolerance: str = "5mm"
    disturbed: bool = False
    extended_start: bool = False

    def world(self, base: WorldConfig) -> WorldConfig:
        cfg = base.with_tolerance(self.tolerance)
        cfg = replace(cfg, perturbations=(default_disturbance(),) if self.disturbed else ())
        if self.extended_start:
            cfg = replace(cfg, start_jitter=EXTENDED_START)
        return cfg

    def to_dict(self) -> dict:
        return {"name": self.name, "policy": self.policy.to_dict(), "tolerance": self.tolerance,
                "disturbed": self.disturbed, "extended_start": self.extended_start}

    @classmethod
    def from_dict(cls, d: dict) -> "Condition":
        d = dict(d)
        policy = d.pop("policy", {})
        if isinstance(policy, str):
            policy = {"kind": policy}
        if "mask_ft" in d:
            policy = {**policy, "mask_ft": d.pop("mask_ft")}
        return cls(policy=PolicyConfig.from_dict(policy), **d)


def table_conditions() -> list[Condition]:
    """ProMP and EnBIP on 5 mm, 5 mm disturbed and 1 mm worlds."""
    out = []
    for kind in ("promp", "enbip"):
        for tol, dist in (("5mm", False), ("5mm", True), ("1mm", False)):
            name = f"{kind}-{tol}-{'disturbed' if dist else 'undisturbed'}"
            out.append(Condition(name, PolicyConfig(kind=kind), tol, dist))
    return out


@dataclass(frozen=True)
class TrainingSetup:
    """How the demonstration set behind every condition is produced."""

    n_demos: int = 30
    seed: int = 0
    tolerance: str = "1mm"
    basis_count: int = 11
    ridge: float = 1e-6

    def __post_init__(self):
        if self.n_demos < 2 or self.basis_count < 2 or self.ridge < 0:
            raise InvalidArgument("training needs at least two demos, two bases and a non-negative ridge")

    def learn(self, world: WorldConfig, mask_ft: bool, demos=None) -> Learned:
        if demos is None:
            demos = generate_demos(self.n_demos, self.seed, world.with_tolerance(self.tolerance))
        return train(demos, self.basis_count, self.ridge, mask_ft=mask_ft)


@dataclass
class ConditionSummary:
    name: str
    policy: str
    tolerance: str
    disturbed: bool
    mask_ft: bool
    n: int
    successes: int
    times: list[float]
    phase_mean: list[float]
    phase_var: list[float]

    @property
    def rate(self) -> float:
        return self.successes / self.n


@dataclass
class SuiteReport:
    fingerprint: str
    seed: int
    n: int
    conditions: list[ConditionSummary]
    trials: dict[str, list[TrialResult]]

    def condition(self, name: str) -> ConditionSummary:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    def summary(self) -> dict:
        """Success table with one row per condition."""
        return {
            "fingerprint": self.fingerprint,
            "trials": self.n,
            "rows": [
                {"condition": c.name, "policy": c.policy, "tolerance": c.tolerance,
                 "disturbed": c.disturbed, "mask_ft": c.mask_ft, "successes": c.successes,
                 "n": c.n, "success_rate": c.rate}
                for c in self.conditions
            ],
        }

    def to_dict(self) -> dict:
        return {
            "format_version": REPORT_VERSION,
            "fingerprint": self.fingerprint,
            "seed": self.seed,
            "n": self.n,
            "conditions": [
                {**asdict(c), "phase_mean": [_json_float(v) for v in c.phase_mean],
                 "phase_var": [_json_float(v) for v in c.phase_var]}
                for c in self.conditions
            ],
            "trials": {k: [t.to_dict() for t in v] for k, v in self.trials.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SuiteReport":
        if d.get("format_version") != REPORT_VERSION:
            raise InvalidArgument(f"unsupported report format_version {d.get('format_version')!r}")
        conds = []
        for c in d["conditions"]:
            c = dict(c)
            c["phase_mean"] = [_from_json_float(v) for v in c["phase_mean"]]
            c["phase_var"] = [_from_json_float(v) for v in c["phase_var"]]
            conds.append(ConditionSummary(**c))
        trials = {k: [TrialResult.from_dict(t) for t in v] for k, v in d["trials"].items()}
        return cls(d["fingerprint"], d["seed"], d["n"], conds, trials)


def trial_seed(suite_seed: int, index: int) -> int:
    """Per-trial seed derived from the suite seed; shared across conditions."""
    return int(np.random.SeedSequence([suite_seed, index]).generate_state(1)[0])


def fingerprint(conditions: Sequence[Condition], n: int, seed: int, training: TrainingSetup,
                world: WorldConfig) -> str:
    payload = {
        "conditions": [c.to_dict() for c in conditions],
        "n": n,
        "seed": seed,
        "training": asdict(training),
        "world": world.to_dict(),
    }
    blob = json.dumps(payload, sort_keys=True, default=list).encode()
    return hashlib.sha256(blob).hexdigest()


def phase_stats(trials: Sequence[TrialResult], step: float) -> tuple[list[float], list[float], list[float]]:
    """Time-aligned mean and variance of the phase logs.

    Each log is sampled on a common grid by holding its latest value; a
    finished trial keeps its final phase.  Trials without a phase are skipped.
    """
    logs = [np.array(t.log) for t in trials if t.log and np.isfinite(t.log[0][1])]
    if not logs:
        return [], [], []
    end = max(lg[-1, 0] for lg in logs)
    grid = np.round(np.arange(0.0, end + step / 2, step), 10)
    samples = np.empty((len(logs), grid.size))
    for i, lg in enumerate(logs):
        idx = np.searchsorted(lg[:, 0], grid + 1e-9, side="right") - 1
        samples[i] = lg[np.clip(idx, 0, len(lg) - 1), 1]
    return grid.tolist(), samples.mean(axis=0).tolist(), samples.var(axis=0).tolist()


def _run_one(job):
    learned, world, policy, seed, tolerance, disturbed = job
    return run_trial(learned, world, policy, seed, tolerance, disturbed)


def worker_count(default: int = 1) -> int:
    raw = os.environ.get("PHASEKIT_WORKERS")
    if raw is None:
        return default
    try:
        value = int(raw)
    except ValueError:
        raise InvalidArgument(f"PHASEKIT_WORKERS must be an integer, got {raw!r}") from None
    return max(1, value)


def run_suite(conditions: Sequence[Condition], n: int, seed: int = 0,
              training: TrainingSetup = TrainingSetup(), world: WorldConfig = WorldConfig(),
              learned: dict[bool, Learned] | None = None, workers: int | None = None) -> SuiteReport:
    """Run ``n`` trials of every condition and aggregate.

    ``learned`` maps the force-masking flag to pre-trained models; missing
    entries are trained from ``training``.  Trial seeds depend only on
    ``seed`` and the trial index, so conditions are compared on matched starts.
    """
    if n < 1:
        raise InvalidArgument("a suite needs at least one trial per condition")
    conditions = list(conditions)
    if len({c.name for c in conditions}) != len(conditions):
        raise InvalidArgument("condition names must be unique")
    learned = dict(learned or {})
    demos = None
    for mask in sorted({c.policy.mask_ft for c in conditions}):
        if mask not in learned:
            if demos is None:
                demos = generate_demos(training.n_demos, training.seed, world.with_tolerance(training.tolerance))
            learned[mask] = training.learn(world, mask, demos)

    jobs = []
    for c in conditions:
        wc = c.world(world)
        for i in range(n):
            jobs.append((learned[c.policy.mask_ft], wc, c.policy, trial_seed(seed, i), c.tolerance, c.disturbed))
    workers = worker_count() if workers is None else max(1, workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_run_one(job) for job in jobs]

    trials: dict[str, list[TrialResult]] = {}
    summaries = []
    for k, c in enumerate(conditions):
        rs = results[k * n:(k + 1) * n]
        trials[c.name] = rs
        step = 1.0 / c.policy.filter_hz
        times, mean, var = phase_stats(rs, step)
        summaries.append(ConditionSummary(c.name, c.policy.kind, c.tolerance, c.disturbed, c.policy.mask_ft,
                                          n, sum(r.success for r in rs), times, mean, var))
    return SuiteReport(fingerprint(conditions, n, seed, training, world), seed, n, summaries, trials)


# --- suite files and export ----------------------------------------------------------

@dataclass(frozen=True)
class SuiteSpec:
    conditions: tuple[Condition, ...]
    trials: int = 30
    seed: int = 0
    training: TrainingSetup = TrainingSetup()
    world: WorldConfig = WorldConfig()

    @classmethod
    def from_dict(cls, d: dict) -> "SuiteSpec":
        conds = d.get("conditions")
        conditions = tuple(Condition.from_dict(c) for c in conds) if conds else tuple(table_conditions())
        return cls(
            conditions=conditions,
            trials=int(d.get("trials", 30)),
            seed=int(d.get("seed", 0)),
            training=TrainingSetup(**d.get("training", {})),
            world=WorldConfig.from_dict(d.get("world", {})),
        )

    @classmethod
    def load(cls, path) -> "SuiteSpec":
        return cls.from_dict(_read_json(path))


def _write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidArgument(f"{path}: not valid JSON ({exc})") from exc


PHASE_COLUMNS = ("t", "trial", "phase_mean", "phase_var")


def _phase_rows(item) -> list[list]:
    if isinstance(item, TrialResult):
        return [[t, str(item.seed), p, v] for t, p, v in item.log]
    rows = []
    for name, trials in item.trials.items():
        for i, tr in enumerate(trials):
            rows.extend([t, f"{name}:{i}", p, v] for t, p, v in tr.log)
    return rows


def export(item: SuiteReport | TrialResult, fmt: str, path) -> Path:
    """Write phase-progression CSV or a JSON summary.

    A report's JSON is its success table; a trial's JSON is the full trial.
    Floats are written with ``repr`` so the files re-import exactly.
    """
    path = Path(path)
    if fmt == "csv":
        try:
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(PHASE_COLUMNS)
                for t, trial, p, v in _phase_rows(item):
                    writer.writerow([repr(float(t)), trial, repr(float(p)), repr(float(v))])
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    elif fmt == "json":
        payload = item.summary() if isinstance(item, SuiteReport) else item.to_dict()
        _write_text(path, json.dumps(payload, indent=1))
    else:
        raise InvalidArgument(f"unknown export format {fmt!r}")
    return path


def read_phase_csv(path) -> list[tuple[float, str, float, float]]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if tuple(rows[0]) != PHASE_COLUMNS:
        raise InvalidArgument(f"{path}: unexpected header {rows[0]}")
    return [(float(t), trial, float(p), float(v)) for t, trial, p, v in rows[1:]]


def read_summary(path) -> dict:
    return _read_json(path)


def save_report(report: SuiteReport, path) -> None:
    _write_text(path, json.dumps(report.to_dict()))


def load_report(path) -> SuiteReport:
    return SuiteReport.from_dict(_read_json(path))


def write_estimate_log(rows: Sequence[Sequence[float]], channels: Sequence[str], path) -> None:
    """Per-update filter estimates: ``step,t,phase_mean,phase_var,phase_vel_mean,<channels>``."""
    header = ["step", "t", "phase_mean", "phase_var", "phase_vel_mean", *channels]
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                cells = [str(int(row[0]))] + [repr(float(v)) for v in row[1:]]
                cells += [""] * (len(header) - len(cells))
                writer.writerow(cells)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
