"""Measurement-only circuit: protocol, trajectories and ensembles.

One time step measures every edge's ZZ with probability ``1 - p`` and then
every site's rotated X with probability ``p``, in canonical (ascending)
order.  Random numbers are consumed in a fixed order per step: edge
inclusion, ZZ outcomes, site inclusion, angles, X outcomes.  One uniform is
drawn per outcome even when the outcome is deterministic, so cluster
structure evolves identically under any angle scheme given the same stream.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from . import observables as obs
from .core import ClusterState, ParityState, PhaseValue, as_phase
from .exceptions import ConfigError, SchemeModeError
from .lattice import LatticeSpec, build_lattice
from .stats import RunningMoments

OBSERVABLES = (
    "magic_density",
    "magic_total",
    "mutual_magic_half",
    "mutual_magic_profile",
    "topo_magic",
    "entanglement_half",
    "entanglement_profile",
    "participation",
    "shannon_mutual",
)

WORKERS_ENV = "RBCLAB_WORKERS"

_T4 = PhaseValue(1)


@dataclass(frozen=True)
class AngleScheme:
    """How the rotated-X angle is chosen for each X measurement.

    ``fixed``: always ``theta``.  ``dilute``: ``theta`` with probability ``q``,
    else 0, drawn per measurement (or once per site and trajectory when
    ``per_site``).  ``random``: uniform in [0, 2*pi).
    """

    kind: str = "fixed"
    theta: PhaseValue = _T4
    q: float = 1.0
    per_site: bool = False

    def __post_init__(self):
        if self.kind not in ("fixed", "dilute", "random"):
            raise ConfigError(f"unknown angle scheme {self.kind!r}")
        object.__setattr__(self, "theta", as_phase(self.theta))
        if not 0.0 <= self.q <= 1.0:
            raise ConfigError("q must lie in [0, 1]")
        if self.per_site and self.kind != "dilute":
            raise ConfigError("per_site only applies to the dilute scheme")

    @classmethod
    def fixed(cls, theta=_T4):
        return cls("fixed", theta)

    @classmethod
    def dilute(cls, q: float, theta=_T4, per_site: bool = False):
        return cls("dilute", theta, q, per_site)

    @classmethod
    def vanishing(cls, lattice: LatticeSpec, theta=_T4, per_site: bool = False):
        """Dilute scheme with ``q = 2 / N`` (N = number of sites)."""
        return cls.dilute(2.0 / lattice.n_sites, theta, per_site)

    @classmethod
    def random(cls):
        return cls("random", PhaseValue(0))

    @property
    def exact(self) -> bool:
        return self.kind != "random" and self.theta.exact

    @property
    def code(self) -> int:
        if self.kind == "fixed":
            return K.SCHEME_FIXED
        if self.kind == "random":
            return K.SCHEME_RANDOM
        return K.SCHEME_SITE if self.per_site else K.SCHEME_DILUTE

    def default_initial(self, n: int) -> list[PhaseValue]:
        """``|+_theta>`` everywhere for fixed, ``|+>`` otherwise."""
        return [self.theta if self.kind == "fixed" else PhaseValue(0)] * n

    def to_dict(self) -> dict:
        return {"kind": self.kind, "theta": self.theta.to_json(), "q": self.q,
                "per_site": self.per_site}

    @classmethod
    def from_dict(cls, d: dict) -> "AngleScheme":
        return cls(d["kind"], PhaseValue.from_json(d["theta"]), d["q"],
                   d.get("per_site", False))


@dataclass(frozen=True)
class ObservableRequest:
    """An observable evaluated at ``times`` (default: the final step).

    ``region`` is a list of block lengths for the profile observables and
    is ignored otherwise.
    """

    name: str
    times: tuple[int, ...] | None = None
    region: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.name not in OBSERVABLES:
            raise ConfigError(f"unknown observable {self.name!r}")
        if self.times is not None:
            object.__setattr__(self, "times", tuple(int(t) for t in self.times))
        if self.region is not None:
            object.__setattr__(self, "region", tuple(int(x) for x in self.region))


def _as_request(x) -> ObservableRequest:
    return x if isinstance(x, ObservableRequest) else ObservableRequest(x)


@dataclass(frozen=True)
class CircuitParams:
    lattice: LatticeSpec
    p: float
    scheme: AngleScheme = field(default_factory=AngleScheme)
    t_max: int | None = None
    initial: tuple[PhaseValue, ...] | None = None
    measure: obs.MagicMeasure | None = None
    mode: str = "full"
    observables: tuple[ObservableRequest, ...] = (
        ObservableRequest("magic_density"), ObservableRequest("mutual_magic_half"))
    # average final-step observables over steps t_max .. t_max + L
    time_average: bool = False

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError(f"p must lie in [0, 1], got {self.p}")
        if self.t_max is None:
            set_("t_max", 2 * self.lattice.L if self.lattice.dim == 1 else self.lattice.L)
        if self.t_max < 0:
            raise ConfigError("t_max must be non-negative")
        n = self.lattice.n_sites
        if self.initial is None:
            set_("initial", tuple(self.scheme.default_initial(n)))
        else:
            set_("initial", tuple(as_phase(x) for x in self.initial))
        if len(self.initial) != n:
            raise ConfigError(f"need {n} initial phases, got {len(self.initial)}")
        if self.measure is None:
            exact = self.scheme.exact and all(ph.exact for ph in self.initial)
            set_("measure", obs.MagicMeasure.TUNIT if exact else obs.MagicMeasure.NULLITY)
        else:
            set_("measure", obs.MagicMeasure(self.measure))
        set_("observables", tuple(_as_request(x) for x in self.observables))
        if self.mode not in ("full", "parity"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == "parity":
            if not (self.scheme.kind == "fixed" and self.scheme.theta == _T4
                    and all(ph == _T4 for ph in self.initial)):
                raise SchemeModeError(
                    "parity mode requires the fixed pi/4 scheme from |+_{pi/4}>")
        for req in self.observables:
            if req.times and (min(req.times) < 0 or max(req.times) > self.t_max):
                raise ConfigError(f"times of {req.name} fall outside [0, t_max]")

    @property
    def exact(self) -> bool:
        return self.scheme.exact and all(ph.exact for ph in self.initial)

    def to_dict(self) -> dict:
        return {
            "lattice": {"dim": self.lattice.dim, "L": self.lattice.L,
                        "periodic": self.lattice.periodic},
            "p": self.p,
            "scheme": self.scheme.to_dict(),
            "t_max": self.t_max,
            "initial": [ph.to_json() for ph in self.initial],
            "measure": self.measure.value,
            "mode": self.mode,
            "observables": [
                {"name": r.name,
                 "times": None if r.times is None else list(r.times),
                 "region": None if r.region is None else list(r.region)}
                for r in self.observables],
            "time_average": self.time_average,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CircuitParams":
        return cls(
            lattice=LatticeSpec(**d["lattice"]),
            p=d["p"],
            scheme=AngleScheme.from_dict(d["scheme"]),
            t_max=d["t_max"],
            initial=tuple(PhaseValue.from_json(x) for x in d["initial"]),
            measure=d["measure"],
            mode=d["mode"],
            observables=tuple(ObservableRequest(r["name"], r.get("times"), r.get("region"))
                              for r in d["observables"]),
            time_average=bool(d.get("time_average", False)),
        )

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# -- seeding ---------------------------------------------------------------------


def derive_seed(master_seed: int, index: int) -> int:
    """128-bit seed of trajectory ``index`` under ``master_seed``.

    Built from numpy's :class:`~numpy.random.SeedSequence` with
    ``spawn_key=(index,)``, whose output numpy keeps stable across releases.
    """
    ss = np.random.SeedSequence(master_seed, spawn_key=(index,))
    lo, hi = ss.generate_state(2, np.uint64)
    return int(lo) | (int(hi) << 64)


def trajectory_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


# -- events -------------------------------------------------------------------------


@dataclass(frozen=True)
class Event:
    kind: str          # "zz" or "x"
    sites: tuple[int, ...]
    angle: PhaseValue | None
    u: float
    lam: int = 0
    probability: float = float("nan")


def draw_site_flags(params: CircuitParams, rng) -> np.ndarray:
    """Per-trajectory non-Clifford site set of the per-site dilute scheme."""
    n = params.lattice.n_sites
    if params.scheme.per_site:
        return rng.random(n) < params.scheme.q
    return np.zeros(n, bool)


def draw_step_events(params: CircuitParams, edges, rng, site_on=None) -> list[Event]:
    """Draw one step's measurement events without applying them."""
    n = params.lattice.n_sites
    p = params.p
    sch = params.scheme
    pairs = edges[rng.random(len(edges)) < 1.0 - p]
    u_zz = rng.random(len(pairs))
    events = [Event("zz", (int(i), int(j)), None, float(u))
              for (i, j), u in zip(pairs, u_zz)]
    sites = np.flatnonzero(rng.random(n) < p)
    angles = []
    for s in sites:
        if sch.kind == "fixed":
            angles.append(sch.theta)
        elif sch.kind == "random":
            angles.append(PhaseValue(2.0 * math.pi * rng.random(), False))
        elif sch.per_site:
            angles.append(sch.theta if site_on[s] else PhaseValue(0))
        else:
            angles.append(sch.theta if rng.random() < sch.q else PhaseValue(0))
    u_x = rng.random(len(sites))
    events += [Event("x", (int(s),), a, float(u))
               for s, a, u in zip(sites, angles, u_x)]
    return events


def apply_event(state, ev: Event) -> Event:
    """Apply ``ev`` to ``state``; returns the event with its outcome filled in."""
    if isinstance(state, ParityState):
        if ev.kind == "zz":
            state.measure_zz(*ev.sites)
        else:
            state.measure_x(ev.sites[0])
        return ev
    if ev.kind == "zz":
        out = state.measure_zz(*ev.sites, u=ev.u)
    else:
        out = state.measure_x(ev.sites[0], ev.angle, u=ev.u)
    return Event(ev.kind, ev.sites, ev.angle, ev.u, out.lam, out.probability)


def step(state, params: CircuitParams, rng, site_on=None) -> list[Event]:
    """One time step applied event by event (reference path, small systems).

    Consumes the generator exactly as the compiled trajectory kernels do.
    """
    _, edges = build_lattice(params.lattice)
    if site_on is None:
        site_on = np.zeros(params.lattice.n_sites, bool)
    return [apply_event(state, ev)
            for ev in draw_step_events(params, edges, rng, site_on)]


# -- trajectories ---------------------------------------------------------------------


def new_state(params: CircuitParams):
    n = params.lattice.n_sites
    if params.mode == "parity":
        return ParityState(n)
    return ClusterState(n, params.initial)


def advance(state, params: CircuitParams, edges, n_steps: int, rng,
            site_on, counts=None):
    """Run ``n_steps`` steps through the compiled kernels."""
    if counts is None:
        counts = np.zeros(2, np.int64)
    if n_steps <= 0:
        return counts
    if isinstance(state, ParityState):
        K.run_steps_parity(state.node, state.parent, state.usize, state.meta,
                           edges, n_steps, params.p, rng, counts)
        return counts
    sch = params.scheme
    if state.exact and not sch.exact:
        state._promote()
    tk = sch.theta.value if sch.theta.exact else 0
    K.run_steps_full(*state._arrays(), state.exact, edges, n_steps, params.p,
                     sch.code, tk, sch.theta.angle, sch.q, site_on, rng, counts)
    return counts


def _profile_lengths(params, req):
    if req.region is not None:
        return np.asarray(req.region, dtype=np.int64)
    return np.arange(1, params.lattice.L, dtype=np.int64)


def evaluate(name: str, state, params: CircuitParams,
             req: ObservableRequest | None = None):
    """Value of observable ``name``; magic quantities are in T-state units."""
    lat = params.lattice
    m = params.measure
    mt = obs.magic_of_t_state(m)
    req = req or ObservableRequest(name)
    if name == "magic_density":
        return obs.full_magic(state, m) / (mt * lat.n_sites)
    if name == "magic_total":
        return obs.full_magic(state, m) / mt
    if name == "mutual_magic_half":
        return obs.mutual_magic(state, lat.half_region(), m) / mt
    if name == "entanglement_half":
        return obs.entanglement_entropy(state, lat.half_region())
    if name == "shannon_mutual":
        return obs.shannon_mutual_information(state, lat.half_region())
    if name == "participation":
        return obs.participation_entropy(state)
    if name == "topo_magic":
        return obs.topological_magic(state, *lat.three_part(), m) / mt
    if name in ("mutual_magic_profile", "entanglement_profile"):
        ells = _profile_lengths(params, req)
        if lat.dim == 1:
            prof = (obs.mutual_magic_profile(state, m) / mt
                    if name == "mutual_magic_profile"
                    else obs.entanglement_profile(state))
            return prof[ells - 1]
        f = ((lambda r: obs.mutual_magic(state, r, m) / mt)
             if name == "mutual_magic_profile"
             else (lambda r: obs.entanglement_entropy(state, r)))
        return np.array([f(lat.block(int(ell))) for ell in ells])
    raise ConfigError(f"unknown observable {name!r}")


@dataclass
class TrajectoryRecord:
    seed: int
    values: dict[str, np.ndarray]
    times: dict[str, tuple[int, ...]]
    counts: tuple[int, int] = (0, 0)


def _schedule(params):
    plan = {}
    for req in params.observables:
        for t in (req.times or (params.t_max,)):
            plan.setdefault(t, []).append(req)
    return dict(sorted(plan.items()))


def run_trajectory(params: CircuitParams, seed: int) -> TrajectoryRecord:
    """One trajectory from the product state; deterministic in (params, seed)."""
    rng = trajectory_rng(seed)
    _, edges = build_lattice(params.lattice)
    state = new_state(params)
    site_on = draw_site_flags(params, rng)
    counts = np.zeros(2, np.int64)
    out = {r.name: [] for r in params.observables}
    t = 0
    for t_next, reqs in _schedule(params).items():
        advance(state, params, edges, t_next - t, rng, site_on, counts)
        t = t_next
        for req in reqs:
            out[req.name].append(evaluate(req.name, state, params, req))
    if params.time_average:
        finals = [r for r in params.observables if r.times is None]
        acc = {r.name: np.asarray(out[r.name][-1], dtype=float) for r in finals}
        window = params.lattice.L
        for _ in range(window):
            advance(state, params, edges, 1, rng, site_on, counts)
            for r in finals:
                acc[r.name] = acc[r.name] + evaluate(r.name, state, params, r)
        for r in finals:
            out[r.name][-1] = acc[r.name] / (window + 1)
    values = {k: np.asarray(v, dtype=float) for k, v in out.items()}
    times = {r.name: tuple(r.times or (params.t_max,)) for r in params.observables}
    return TrajectoryRecord(seed, values, times, (int(counts[0]), int(counts[1])))


@dataclass
class EnsembleResult:
    params_digest: str
    n_traj: int
    mean: dict[str, np.ndarray]
    stderr: dict[str, np.ndarray]
    m2: dict[str, np.ndarray]
    times: dict[str, tuple[int, ...]]
    master_seed: int = 0

    def to_dict(self) -> dict:
        return {
            "params_digest": self.params_digest,
            "n_traj": self.n_traj,
            "master_seed": self.master_seed,
            "times": {k: list(v) for k, v in self.times.items()},
            "mean": {k: np.asarray(v).tolist() for k, v in self.mean.items()},
            "stderr": {k: np.asarray(v).tolist() for k, v in self.stderr.items()},
        }


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_ensemble(params: CircuitParams, n_traj: int, master_seed: int = 0,
                 workers: int | None = None, on_record=None) -> EnsembleResult:
    """Average ``n_traj`` trajectories; trajectory i uses derive_seed(master, i).

    Records are reduced in index order, so the result does not depend on
    ``workers``.  ``on_record`` (if given) is called with each record in order.
    """
    if n_traj < 1:
        raise ConfigError("n_traj must be at least 1")
    workers = default_workers() if workers is None else max(1, workers)
    seeds = (derive_seed(master_seed, i) for i in range(n_traj))
    moments: dict[str, RunningMoments] = {}
    times = None

    def consume(rec):
        nonlocal times
        times = rec.times
        for k, v in rec.values.items():
            moments.setdefault(k, RunningMoments()).push(v)
        if on_record is not None:
            on_record(rec)

    if workers == 1:
        for s in seeds:
            consume(run_trajectory(params, s))
    else:
        with ThreadPoolExecutor(workers) as pool:
            for rec in pool.map(lambda s: run_trajectory(params, s), seeds):
                consume(rec)
    return EnsembleResult(
        params_digest=params.digest(),
        n_traj=n_traj,
        mean={k: m.mean for k, m in moments.items()},
        stderr={k: m.stderr for k, m in moments.items()},
        m2={k: m.m2 for k, m in moments.items()},
        times=times,
        master_seed=master_seed,
    )
