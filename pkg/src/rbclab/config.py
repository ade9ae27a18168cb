"""Run configuration files (YAML, strict schema)."""

from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

from .circuit import AngleScheme, CircuitParams, ObservableRequest, OBSERVABLES
from .core import PhaseValue
from .exceptions import ConfigError, SchemeModeError
from .lattice import LatticeSpec
from .observables import MagicMeasure

_ANGLE_RE = re.compile(r"^\s*(-?\d*(?:\.\d+)?)\s*\*?\s*pi\s*(?:/\s*(\d+(?:\.\d+)?))?\s*$")


def parse_angle(value) -> PhaseValue:
    """Radians as a number, or strings such as ``"pi/4"``, ``"3pi/4"``, ``"0"``."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return PhaseValue.from_angle(float(value))
    if isinstance(value, str):
        m = _ANGLE_RE.match(value)
        if m:
            num = m.group(1)
            k = float(num) if num not in ("", "-") else (-1.0 if num == "-" else 1.0)
            den = float(m.group(2)) if m.group(2) else 1.0
            return PhaseValue.from_angle(k * math.pi / den)
        try:
            return PhaseValue.from_angle(float(value))
        except ValueError:
            pass
    raise ConfigError(f"cannot parse angle {value!r}")


def angle_text(ph: PhaseValue) -> str | float:
    if ph.exact:
        return "0" if ph.value == 0 else f"{ph.value}pi/4"
    return ph.angle


_SCHEME_KEYS = {"kind", "theta", "q", "per_site"}
_KEYS = {"name", "dim", "L", "p", "boundary", "scheme", "t_max", "initial", "measure",
         "mode", "observables", "n_traj", "master_seed", "output", "jsonl",
         "time_average"}


@dataclass
class RunConfig:
    """Everything needed to reproduce a run or sweep.

    ``L`` and ``p`` are sweep axes (a single run uses their first entries).
    ``t_max`` of None means 2L in 1D and L in 2D.  ``mode`` of None picks
    parity mode whenever the scheme allows it.  ``initial`` is one angle
    applied to every site (None: the scheme's default).
    """

    L: list[int]
    p: list[float]
    n_traj: int = 1000
    name: str = "run"
    dim: int = 1
    boundary: str = "periodic"
    scheme: dict = field(default_factory=lambda: {"kind": "fixed", "theta": "pi/4"})
    t_max: int | None = None
    initial: str | float | None = None
    measure: str | None = None
    mode: str | None = None
    observables: list = field(default_factory=lambda: ["magic_density", "mutual_magic_half"])
    master_seed: int = 0
    output: str = "rbclab-out"
    jsonl: bool = False
    time_average: bool = False

    def __post_init__(self):
        self.L = [int(x) for x in (self.L if isinstance(self.L, (list, tuple)) else [self.L])]
        self.p = [float(x) for x in (self.p if isinstance(self.p, (list, tuple)) else [self.p])]
        if not self.L or not self.p:
            raise ConfigError("sweep axes L and p must be non-empty")
        if self.n_traj < 1:
            raise ConfigError("n_traj must be at least 1")
        if self.boundary not in ("periodic", "open"):
            raise ConfigError(f"boundary must be periodic or open, got {self.boundary!r}")
        if self.mode not in (None, "full", "parity"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.measure is not None:
            try:
                MagicMeasure(self.measure)
            except ValueError:
                raise ConfigError(f"unknown magic measure {self.measure!r}") from None
        if not isinstance(self.scheme, dict) or set(self.scheme) - _SCHEME_KEYS:
            raise ConfigError(f"scheme keys must be a subset of {sorted(_SCHEME_KEYS)}")
        for ob in self.observables:
            name = ob["name"] if isinstance(ob, dict) else ob
            if name not in OBSERVABLES:
                raise ConfigError(f"unknown observable {name!r}")
        # resolve every cell once so errors surface at load time
        for L in self.L:
            for p in self.p:
                self.params(L, p)

    # -- resolution ------------------------------------------------------------

    def lattice(self, L: int) -> LatticeSpec:
        return LatticeSpec(self.dim, L, self.boundary == "periodic")

    def angle_scheme(self, lattice: LatticeSpec) -> AngleScheme:
        s = dict(self.scheme)
        kind = s.get("kind", "fixed")
        theta = parse_angle(s.get("theta", "pi/4"))
        if kind == "fixed":
            return AngleScheme.fixed(theta)
        if kind == "random":
            return AngleScheme.random()
        if kind == "dilute":
            q = s.get("q", 1.0)
            per_site = bool(s.get("per_site", False))
            if isinstance(q, str):
                if q.replace(" ", "") not in ("2/N", "2/L"):
                    raise ConfigError(f"q must be a number or '2/N', got {q!r}")
                return AngleScheme.vanishing(lattice, theta, per_site)
            return AngleScheme.dilute(float(q), theta, per_site)
        raise ConfigError(f"unknown scheme kind {kind!r}")

    def params(self, L: int, p: float) -> CircuitParams:
        lat = self.lattice(L)
        sch = self.angle_scheme(lat)
        initial = None
        if self.initial is not None:
            initial = (parse_angle(self.initial),) * lat.n_sites
        obs = tuple(ObservableRequest(o["name"], o.get("times"), o.get("region"))
                    if isinstance(o, dict) else ObservableRequest(o)
                    for o in self.observables)
        mode = self.mode
        if mode is None:
            mode = "parity"
            try:
                CircuitParams(lat, p, sch, self.t_max, initial, self.measure, mode, obs)
            except SchemeModeError:
                mode = "full"
        return CircuitParams(lat, p, sch, self.t_max, initial, self.measure, mode, obs,
                             bool(self.time_average))

    def resolved(self) -> dict:
        """Config with defaults filled in (as echoed into manifests)."""
        d = self.to_dict()
        first = self.params(self.L[0], self.p[0])
        d["mode"] = first.mode
        d["measure"] = first.measure.value
        d["t_max"] = {str(L): self.params(L, self.p[0]).t_max for L in self.L}
        return d

    def to_dict(self) -> dict:
        return asdict(self)

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)


def config_from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(d) - _KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for k in ("L", "p"):
        if k not in d:
            raise ConfigError(f"missing required key {k!r}")
    try:
        return RunConfig(**d)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file {path} not found")
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as e:
            raise ConfigError(f"invalid YAML in {path}: {e}") from None
    return config_from_dict(data or {})


def save_config(config: RunConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)
