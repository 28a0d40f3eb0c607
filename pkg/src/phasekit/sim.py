"""Planar bracket-on-two-pins insertion world.

The bracket is a rigid bar moved by the admittance controller.  Its frame sits
at the centre of the bar's lower face; two grommets (holes) are placed at
fixed offsets along the bar.  Pins are vertical with a 45 degree chamfer at
the top.  Contacts are penalty springs with Coulomb friction; static friction
on the pin tops uses a tangential anchor spring so that a bracket resting on
the pins stays put until the tangential load exceeds ``mu * normal``.

Axes: x lateral, z up, theta rotation taking +x towards +z.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .admittance import AdmittanceParams, RobotState, admittance_step, default_params
from .basis import Demonstration
from .errors import InvalidArgument

CHANNELS = ("x", "z", "theta", "fx", "fz", "tau", "cmd_x", "cmd_z", "cmd_theta")
UNITS = ("m", "m", "rad", "N", "N", "N*m", "m", "m", "rad")
ROLES = ("observed",) * 6 + ("control",) * 3
POSE_CHANNELS = ("x", "z", "theta")
FT_CHANNELS = ("fx", "fz", "tau")
TOLERANCES = {"1mm": 0.006, "5mm": 0.010}  # grommet inner radius per variant


@dataclass(frozen=True)
class Geometry:
    pin_x: tuple[float, float] = (-0.06, 0.06)
    pin_radius: float = 0.005
    pin_top: float = 0.03
    chamfer: float = 0.003
    insertion_depth: float = 0.02
    grommet_offsets: tuple[float, float] = (-0.06, 0.06)
    grommet_radius: float = 0.006
    half_length: float = 0.10
    pin_jitter: float = 0.0  # per-trial common lateral shift of the pins, hidden from policies

    def __post_init__(self):
        if not self.grommet_radius > self.pin_radius:
            raise InvalidArgument("only clearance fits are supported (grommet radius must exceed pin radius)")
        if self.pin_x[0] == self.pin_x[1]:
            raise InvalidArgument("pin positions must be distinct")
        if not 0 <= self.chamfer < self.pin_radius:
            raise InvalidArgument("chamfer must be smaller than the pin radius")

    @property
    def tolerance(self) -> float:
        return self.grommet_radius - self.pin_radius


@dataclass(frozen=True)
class Contact:
    stiffness: float = 5000.0
    damping: float = 50.0
    friction: float = 0.3

    def __post_init__(self):
        if not (self.stiffness > 0 and self.damping > 0 and self.friction >= 0):
            raise InvalidArgument("contact stiffness and damping must be positive")


@dataclass(frozen=True)
class Perturbation:
    """A force window; ``draw`` is ``fixed`` or ``gaussian`` (magnitude along ``direction``)."""

    start: float
    end: float
    force: tuple[float, float, float] = (0.0, 0.0, 0.0)
    draw: str = "fixed"
    mean: float = 0.0
    std: float = 0.0
    direction: tuple[float, float, float] = (-1.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.start < self.end:
            raise InvalidArgument("perturbation window must have start < end")
        if self.draw not in ("fixed", "gaussian"):
            raise InvalidArgument(f"unknown perturbation draw {self.draw!r}")

    def resolve(self, rng: np.random.Generator) -> "Perturbation":
        if self.draw == "fixed":
            return self
        mag = rng.normal(self.mean, self.std)
        force = tuple(float(mag * d) for d in self.direction)
        return replace(self, force=force, draw="fixed")


def default_disturbance() -> Perturbation:
    # 1.75 N mean; the quoted spread of 0.5 is taken as a variance in N^2.
    return Perturbation(4.5, 7.5, draw="gaussian", mean=1.75, std=math.sqrt(0.5))


def check_schedule(windows) -> tuple[Perturbation, ...]:
    windows = tuple(sorted(windows, key=lambda p: p.start))
    for a, b in zip(windows, windows[1:]):
        if b.start < a.end:
            raise InvalidArgument("perturbation windows may not overlap")
    return windows


@dataclass(frozen=True)
class Sensor:
    """Pose and wrench noise plus a critically damped low-pass on the wrench."""

    pose_std: float = 1e-4
    wrench_std: float = 0.02
    torque_std: float = 0.002
    cutoff_hz: float = 0.5


@dataclass(frozen=True)
class WorldConfig:
    geometry: Geometry = Geometry()
    contact: Contact = Contact()
    admittance: AdmittanceParams = field(default_factory=default_params)
    perturbations: tuple[Perturbation, ...] = ()
    dt: float = 0.01
    sensor: Sensor = Sensor()
    start_pose: tuple[float, float, float] = (-0.15, 0.15, 0.1)
    start_jitter: float = 0.01
    tilt_jitter: float = 0.02
    quiet_force: float = 1.0
    quiet_torque: float = 0.1
    quiet_time: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "perturbations", check_schedule(self.perturbations))

    def with_tolerance(self, variant: str) -> "WorldConfig":
        if variant not in TOLERANCES:
            raise InvalidArgument(f"unknown tolerance variant {variant!r}")
        return replace(self, geometry=replace(self.geometry, grommet_radius=TOLERANCES[variant]))

    def to_dict(self) -> dict:
        return {
            "geometry": asdict(self.geometry),
            "contact": asdict(self.contact),
            "perturbation": [asdict(p) for p in self.perturbations],
            "timestep": self.dt,
            "admittance": self.admittance.to_dict(),
            "sensor": asdict(self.sensor),
            "start": {"pose": list(self.start_pose), "jitter": self.start_jitter, "tilt_jitter": self.tilt_jitter},
            "quiescence": {"force": self.quiet_force, "torque": self.quiet_torque, "time": self.quiet_time},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        def tup(v):
            return tuple(v) if isinstance(v, list) else v

        geo = Geometry(**{k: tup(v) for k, v in d.get("geometry", {}).items()})
        if "tolerance" in d:
            base = cls(geometry=geo).with_tolerance(d["tolerance"]).geometry
            geo = base
        contact = Contact(**d.get("contact", {}))
        perts = tuple(Perturbation(**{k: tup(v) for k, v in p.items()}) for p in d.get("perturbation", []))
        adm = AdmittanceParams.from_config(d["admittance"]) if "admittance" in d else default_params()
        start = d.get("start", {})
        quiet = d.get("quiescence", {})
        return cls(
            geometry=geo,
            contact=contact,
            admittance=adm,
            perturbations=perts,
            dt=float(d.get("timestep", 0.01)),
            sensor=Sensor(**d.get("sensor", {})),
            start_pose=tuple(start.get("pose", (-0.15, 0.15, 0.1))),
            start_jitter=float(start.get("jitter", 0.01)),
            tilt_jitter=float(start.get("tilt_jitter", 0.02)),
            quiet_force=float(quiet.get("force", 1.0)),
            quiet_torque=float(quiet.get("torque", 0.1)),
            quiet_time=float(quiet.get("time", 0.25)),
        )

    @classmethod
    def load(cls, path) -> "WorldConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class SensorReading:
    """``wrench`` is the raw external wrench; ``ft`` the filtered, noisy sensor output."""

    pose: np.ndarray
    wrench: np.ndarray
    ft: np.ndarray
    t: float

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.pose, self.ft])


@dataclass
class _PinContact:
    below: bool = False  # grommet passed the pin top with the hole around the pin
    anchor: float | None = None  # stick point of the tangential friction spring


@dataclass
class InsertionWorld:
    config: WorldConfig
    state: RobotState
    rng: np.random.Generator
    t: float = 0.0
    pins: list = field(default_factory=lambda: [_PinContact(), _PinContact()])
    quiet_for: float = 0.0
    wrench: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ft: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ft_rate: np.ndarray = field(default_factory=lambda: np.zeros(3))
    perturbations: tuple[Perturbation, ...] = ()
    pin_shift: float = 0.0

    @property
    def geometry(self) -> Geometry:
        return self.config.geometry

    @property
    def pin_positions(self) -> tuple[float, ...]:
        return tuple(px + self.pin_shift for px in self.geometry.pin_x)

    def grommets(self) -> list[tuple[float, float, float, float]]:
        """World position and velocity (gx, gz, vx, vz) of each grommet."""
        x, z, th = self.state.pose
        vx, vz, w = self.state.vel
        c, s = math.cos(th), math.sin(th)
        out = []
        for lx in self.geometry.grommet_offsets:
            rx, rz = c * lx, s * lx
            out.append((x + rx, z + rz, vx - w * rz, vz + w * rx))
        return out

    def perturbation_at(self, t: float) -> np.ndarray:
        for p in self.perturbations:
            if p.start <= t < p.end:
                return np.asarray(p.force, dtype=float)
        return np.zeros(3)


def random_start(rng: np.random.Generator, config: WorldConfig, jitter: float | None = None) -> np.ndarray:
    """Nominal start pose with uniform position and tilt jitter."""
    j = config.start_jitter if jitter is None else jitter
    pose = np.array(config.start_pose, dtype=float)
    pose[:2] += rng.uniform(-j, j, size=2)
    pose[2] += rng.uniform(-config.tilt_jitter, config.tilt_jitter)
    return pose


def draw_pin_shift(rng: np.random.Generator, config: WorldConfig) -> float:
    j = config.geometry.pin_jitter
    return float(rng.uniform(-j, j)) if j > 0 else 0.0


def make_world(config: WorldConfig, seed: int = 0, start_pose=None, pin_shift: float | None = None) -> InsertionWorld:
    """Create a world with a randomized start pose, pin shift and resolved perturbations."""
    rng = np.random.default_rng(seed)
    if start_pose is None:
        start_pose = random_start(rng, config)
    perts = tuple(p.resolve(rng) for p in config.perturbations)
    if pin_shift is None:
        pin_shift = draw_pin_shift(rng, config)
    return InsertionWorld(config, RobotState.at(start_pose), rng, perturbations=perts, pin_shift=pin_shift)


def _friction(pc: _PinContact, pos: float, vel: float, normal: float, k: float, d: float, mu: float) -> float:
    """Stick-slip tangential force on the bracket along one axis."""
    if pc.anchor is None:
        pc.anchor = pos
    spring = -k * (pos - pc.anchor)
    limit = mu * normal
    f = spring - d * vel
    if abs(f) > limit:
        f = math.copysign(limit, f)
        if abs(spring) > limit:
            # slip: drag the anchor so the spring sits at the friction limit
            pc.anchor = pos + math.copysign(limit, spring) / k
    return f


def contact_wrench(world: InsertionWorld, update: bool = True) -> np.ndarray:
    """Total contact wrench (fx, fz, tau) on the bracket about its frame.

    With ``update`` the per-pin contact bookkeeping (friction anchors, insertion
    flags) advances; pass ``False`` for a side-effect-free query.
    """
    geo = world.geometry
    con = world.config.contact
    k, d, mu = con.stiffness, con.damping, con.friction
    tol = geo.tolerance
    x0, z0, _ = world.state.pose
    fx_tot = fz_tot = tau = 0.0
    pins = world.pins if update else [replace(p) for p in world.pins]
    for pc, px, (gx, gz, vx, vz) in zip(pins, world.pin_positions, world.grommets()):
        e = gx - px
        depth = geo.pin_top - gz
        if depth <= 0 or abs(px - x0) > geo.half_length + geo.pin_radius:
            pc.below = False
            pc.anchor = None
            continue
        if not pc.below and abs(e) <= tol + geo.chamfer:
            pc.below = True
        fx = fz = 0.0
        if not pc.below:
            # plate resting on the flat pin top
            fz = max(k * depth - d * vz, 0.0)
            fx = _friction(pc, gx, vx, fz, k, d, mu)
            ax, az = px - x0, geo.pin_top - z0
        else:
            half = geo.pin_radius - geo.chamfer + min(depth, geo.chamfer)
            pen = abs(e) + half - geo.grommet_radius
            if pen > 0:
                sgn = math.copysign(1.0, e)
                rate = sgn * vx
                if depth < geo.chamfer:
                    # hole edge on the 45 degree chamfer: normal points up and back
                    n = max(k * pen - d * rate, 0.0) / math.sqrt(2.0)
                    fx, fz = -sgn * n, n
                    slide = (vz + sgn * vx) / math.sqrt(2.0)
                    ft = -mu * n * math.tanh(slide / 1e-3)
                    fx += sgn * ft / math.sqrt(2.0)
                    fz += ft / math.sqrt(2.0)
                else:
                    n = max(k * pen - d * rate, 0.0)
                    fx = -sgn * n
                    fz = _friction(pc, gz, vz, n, k, d, mu)
            else:
                pc.anchor = None
            ax, az = gx - x0, gz - z0
        fx_tot += fx
        fz_tot += fz
        tau += ax * fz - az * fx
    # floor under the bracket
    if z0 < 0:
        fz_tot += max(-k * z0 - d * world.state.vel[1], 0.0)
    return np.array([fx_tot, fz_tot, tau])


def sim_step(world: InsertionWorld, target, dt: float | None = None) -> tuple[InsertionWorld, SensorReading]:
    """Advance the world one step towards ``target``; mutates and returns ``world``."""
    cfg = world.config
    dt = cfg.dt if dt is None else dt
    target = np.asarray(target, dtype=float)
    if not np.all(np.isfinite(target)):
        raise InvalidArgument("commanded target must be finite")
    f_contact = contact_wrench(world)
    f_ext = f_contact + world.perturbation_at(world.t)
    world.state = admittance_step(world.state, target, f_ext, cfg.admittance, dt)
    world.t = round(world.t + dt, 10)
    world.wrench = f_ext
    quiet = math.hypot(f_ext[0], f_ext[1]) < cfg.quiet_force and abs(f_ext[2]) < cfg.quiet_torque
    if quiet and _inserted(world):
        world.quiet_for += dt
    else:
        world.quiet_for = 0.0
    sen = cfg.sensor
    noise = world.rng.normal(size=6)
    pose = world.state.pose + noise[:3] * np.array([sen.pose_std, sen.pose_std, sen.pose_std])
    raw = f_ext + noise[3:] * np.array([sen.wrench_std, sen.wrench_std, sen.torque_std])
    if sen.cutoff_hz > 0:
        w = 2.0 * math.pi * sen.cutoff_hz
        world.ft_rate = world.ft_rate + (w * w * (raw - world.ft) - 2.0 * w * world.ft_rate) * dt
        world.ft = world.ft + world.ft_rate * dt
    else:
        world.ft = raw
    return world, SensorReading(pose, f_ext.copy(), world.ft.copy(), world.t)


def _inserted(world: InsertionWorld) -> bool:
    geo = world.geometry
    for px, (gx, gz, _, _) in zip(world.pin_positions, world.grommets()):
        if abs(gx - px) > geo.tolerance + 1e-9:
            return False
        if geo.pin_top - gz < geo.insertion_depth:
            return False
    return True


def check_success(world: InsertionWorld) -> bool:
    """Both grommets seated to full depth and the wrench quiet long enough."""
    return _inserted(world) and world.quiet_for >= world.config.quiet_time - 1e-9


# --- scripted demonstrations ---------------------------------------------------

ABOVE_Z = 0.05
FINAL_Z = 0.005
SETTLE = 0.1  # seconds recorded after the script ends


def min_jerk(s: float) -> float:
    s = min(max(s, 0.0), 1.0)
    return s**3 * (10.0 - 15.0 * s + 6.0 * s * s)


def bezier(points: np.ndarray, u: float) -> np.ndarray:
    p0, p1, p2, p3 = points
    a = 1.0 - u
    return a**3 * p0 + 3 * a * a * u * p1 + 3 * a * u * u * p2 + u**3 * p3


@dataclass(frozen=True)
class DemoScript:
    """Timing and shape of one scripted demonstration.

    A Bezier approach to a point above the pins offset by ``bias``, a short
    dwell, then a straight descent that re-centres over its second half.
    """

    start: np.ndarray
    controls: np.ndarray  # (4, 2) Bezier control points in (x, z)
    approach: float
    dwell: float
    descent: float
    bias: float
    centre: float = 0.0  # lateral position of the pins as seen by the demonstrator

    def target(self, t: float) -> np.ndarray:
        t1 = self.approach
        t2 = t1 + self.dwell
        if t < t1:
            u = min_jerk(t / t1)
            xz = bezier(self.controls, u)
            return np.array([xz[0], xz[1], self.start[2] * (1.0 - u)])
        end = self.controls[3]
        s = min_jerk((t - t2) / self.descent) if t > t2 else 0.0
        z = end[1] + (FINAL_Z - end[1]) * s
        x = self.centre + (end[0] - self.centre) * (1.0 - min_jerk((s - 0.5) / 0.5))
        return np.array([x, z, 0.0])

    @property
    def length(self) -> float:
        return self.approach + self.dwell + self.descent


def make_script(rng: np.random.Generator, config: WorldConfig, jitter: float = 0.02,
                start_jitter: float | None = None, centre: float = 0.0) -> DemoScript:
    """Randomized script; ``jitter=0`` gives the nominal shape and timing."""
    pose = random_start(rng, config, start_jitter)
    start = pose[:2]

    def draw(lo: float, hi: float) -> float:
        return rng.uniform(lo, hi) if jitter > 0 else 0.5 * (lo + hi)

    # aim slightly off-centre so the tight bracket meets the chamfers
    bias = -draw(0.0015, 0.003)
    goal = np.array([centre + bias, ABOVE_Z])
    p1 = start + (goal - start) / 3.0
    p2 = start + 2.0 * (goal - start) / 3.0
    if jitter > 0:
        p1 = p1 + rng.normal(0.0, jitter, size=2)
        p2 = p2 + rng.normal(0.0, jitter, size=2)
    p2[1] = max(p2[1], ABOVE_Z)
    return DemoScript(
        start=pose,
        controls=np.stack([start, p1, p2, goal]),
        approach=draw(3.0, 3.6),
        dwell=draw(0.2, 0.4),
        descent=draw(2.2, 2.6),
        bias=bias,
        centre=centre,
    )


def rollout_script(script: DemoScript, config: WorldConfig, seed: int, settle: float = SETTLE):
    """Run a script through the simulator for its length plus ``settle`` seconds.

    Returns (world, times, rows) where rows are the 9 recorded channels per step.
    """
    world = make_world(config, seed, start_pose=script.start, pin_shift=script.centre)
    times = [0.0]
    first = np.concatenate([world.state.pose, np.zeros(3), script.target(0.0)])
    rows = [first]
    horizon = script.length + settle
    while world.t < horizon:
        target = script.target(world.t)
        world, reading = sim_step(world, target)
        times.append(world.t)
        rows.append(np.concatenate([reading.pose, reading.ft, target]))
    return world, np.array(times), np.array(rows).T


def generate_demo(seed: int, config: WorldConfig, jitter: float = 0.02, max_attempts: int = 20,
                  start_jitter: float | None = None, settle: float = SETTLE) -> Demonstration:
    """Record one successful scripted Bezier demonstration.

    Failed rollouts are discarded and the seed advanced, up to ``max_attempts``.
    """
    for attempt in range(max_attempts):
        rng = np.random.default_rng([seed, attempt])
        script = make_script(rng, config, jitter, start_jitter, centre=draw_pin_shift(rng, config))
        world, t, rows = rollout_script(script, config, seed=int(rng.integers(2**31)), settle=settle)
        if check_success(world):
            return Demonstration(t, rows, CHANNELS, ROLES, UNITS)
    raise RuntimeError(f"no successful demonstration for seed {seed} after {max_attempts} attempts")


def generate_demos(n: int, seed: int, config: WorldConfig, **kw) -> list[Demonstration]:
    return [generate_demo(seed * 1000 + i, config, **kw) for i in range(n)]
