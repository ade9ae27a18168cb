"""Cluster state machine for products of rotated Bell clusters.

A rotated Bell cluster over sites ``A`` is ``|b_A> + exp(i p) |~b_A>`` where
``~b`` flips every bit.  A :class:`ClusterState` stores which cluster each site
belongs to, the reference bit of every site and the phase of every cluster,
and updates them exactly under rotated-X and ZZ projective measurements.
:class:`ParityState` is the structure-only fast path for the fixed pi/4
protocol, where a cluster's magic depends only on the parity of its size.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .exceptions import ImpossibleOutcomeError

TWO_PI = 2.0 * math.pi
QUARTER = math.pi / 4.0

#: Distance to the nearest multiple of pi/2 below which a real phase counts
#: as a stabilizer phase.
STABILIZER_TOL = 1e-9

_ANGLE_SNAP = 1e-12


def _wrap(x: float) -> float:
    x = float(x) % TWO_PI
    return 0.0 if x >= TWO_PI else x


@dataclass(frozen=True)
class PhaseValue:
    """Cluster phase: integer units of pi/4 (``exact``) or radians.

    Exact values are reduced mod 8 and real values mod 2*pi on construction,
    so equal phases compare equal within a representation.
    """

    value: int | float
    exact: bool = True

    def __post_init__(self):
        if self.exact:
            if int(self.value) != self.value:
                raise ValueError(f"exact phase needs an integer, got {self.value!r}")
            object.__setattr__(self, "value", int(self.value) % 8)
        else:
            object.__setattr__(self, "value", _wrap(self.value))

    @classmethod
    def units(cls, k: int) -> "PhaseValue":
        return cls(k, True)

    @classmethod
    def radians(cls, phi: float) -> "PhaseValue":
        return cls(phi, False)

    @classmethod
    def from_angle(cls, phi: float) -> "PhaseValue":
        """Exact when ``phi`` is a multiple of pi/4 up to round-off."""
        k = round(phi / QUARTER)
        if abs(phi / QUARTER - k) < _ANGLE_SNAP:
            return cls(k, True)
        return cls(phi, False)

    @property
    def angle(self) -> float:
        return self.value * QUARTER if self.exact else self.value

    def to_real(self) -> "PhaseValue":
        return PhaseValue(self.angle, False)

    def is_stabilizer(self, tol: float = STABILIZER_TOL) -> bool:
        if self.exact:
            return self.value % 2 == 0
        r = self.value % (math.pi / 2)
        return min(r, math.pi / 2 - r) < tol

    def same_as(self, other: "PhaseValue", tol: float = 1e-12) -> bool:
        d = (self.angle - other.angle) % TWO_PI
        return min(d, TWO_PI - d) < tol

    def __add__(self, other):
        other = as_phase(other)
        if self.exact and other.exact:
            return PhaseValue(self.value + other.value, True)
        return PhaseValue(self.angle + other.angle, False)

    def __neg__(self):
        return PhaseValue(-self.value, self.exact)

    def __sub__(self, other):
        return self + (-as_phase(other))

    def to_json(self):
        return ["exact", self.value] if self.exact else ["real", self.value]

    @classmethod
    def from_json(cls, obj) -> "PhaseValue":
        mode, value = obj
        if mode not in ("exact", "real"):
            raise ValueError(f"unknown phase mode {mode!r}")
        return cls(value, mode == "exact")


def as_phase(x) -> PhaseValue:
    if isinstance(x, PhaseValue):
        return x
    return PhaseValue.from_angle(float(x))


@dataclass(frozen=True)
class Outcome:
    """Realised eigenvalue and its Born probability."""

    lam: int
    probability: float


@dataclass
class ClusterCensus:
    n_clusters: int
    size_histogram: dict[int, int]
    odd_count: int
    region_counts: dict[str, int] = field(default_factory=dict)


def _check_lambda(forced) -> int:
    if forced not in (1, -1):
        raise ValueError(f"forced outcome must be +1 or -1, got {forced!r}")
    return int(forced)


def _draw(u, forced, rng):
    if forced is not None:
        return 0.0, _check_lambda(forced)
    if u is None:
        u = (rng if rng is not None else np.random.default_rng()).random()
    return float(u), 0


class ClusterState:
    """Tensor product of rotated Bell clusters (full mode).

    Cluster ids are integers in ``[0, n_sites)``; their values carry no
    meaning beyond identity.  Use :func:`init_product` to build one.
    """

    mode = "full"

    def __init__(self, n_sites: int, phases=None):
        if n_sites < 1:
            raise ValueError("need at least one site")
        if phases is None:
            phases = [PhaseValue(0)] * n_sites
        phases = [as_phase(x) for x in phases]
        if len(phases) != n_sites:
            raise ValueError(
                f"got {len(phases)} phases for {n_sites} sites")
        n = n_sites
        self.n_sites = n
        self.exact = all(ph.exact for ph in phases)
        self.label = np.arange(n, dtype=np.int64)
        self.bit = np.zeros(n, dtype=np.int64)
        self.size = np.ones(n, dtype=np.int64)
        self.pk = np.zeros(n, dtype=np.int64)
        self.pr = np.zeros(n, dtype=np.float64)
        if self.exact:
            self.pk[:] = [ph.value for ph in phases]
        else:
            self.pr[:] = [ph.angle for ph in phases]
        self.head = np.arange(n, dtype=np.int64)
        self.nxt = np.full(n, -1, dtype=np.int64)
        self.prv = np.full(n, -1, dtype=np.int64)
        self.free = np.zeros(n, dtype=np.int64)
        self.meta = np.zeros(1, dtype=np.int64)  # [free-stack height]

    # -- internals ---------------------------------------------------------

    def _arrays(self):
        return (self.label, self.bit, self.size, self.pk, self.pr, self.head,
                self.nxt, self.prv, self.free, self.meta)

    def _promote(self):
        """Switch phase storage from exact units to radians."""
        if self.exact:
            self.pr[:] = (self.pk % 8) * QUARTER
            self.exact = False

    def _angle(self, theta) -> tuple[int, float]:
        theta = as_phase(theta)
        if self.exact and not theta.exact:
            self._promote()
        if self.exact:
            return theta.value, theta.angle
        return 0, theta.angle

    def _check_site(self, *sites):
        for s in sites:
            if not 0 <= s < self.n_sites:
                raise IndexError(f"site {s} out of range for {self.n_sites} sites")

    # -- measurements ------------------------------------------------------

    def outcome_distribution_x(self, site: int, theta) -> tuple[float, float]:
        """Born probabilities (Pr(+1), Pr(-1)) of measuring the rotated X."""
        self._check_site(site)
        tk, tr = self._angle(theta)
        c = self.label[site]
        pp = K.x_plus_prob(self.exact, self.size[c], self.bit[site],
                           self.pk[c], self.pr[c], tk, tr)
        return pp, 1.0 - pp

    def outcome_distribution_zz(self, i: int, j: int) -> tuple[float, float]:
        self._check_site(i, j)
        if i == j:
            raise ValueError("ZZ measurement needs two distinct sites")
        if self.label[i] != self.label[j]:
            return 0.5, 0.5
        return (1.0, 0.0) if self.bit[i] == self.bit[j] else (0.0, 1.0)

    def measure_x(self, site: int, theta, *, u=None, forced=None,
                  rng=None) -> Outcome:
        """Project site onto the rotated-X eigenbasis at angle ``theta``.

        The outcome is sampled from uniform ``u`` (drawn from ``rng`` when not
        given) or forced to ``forced``.  Forcing a zero-probability outcome
        raises :class:`ImpossibleOutcomeError`.
        """
        self._check_site(site)
        tk, tr = self._angle(theta)
        u, f = _draw(u, forced, rng)
        lam = np.zeros(1, np.int64)
        prob = np.zeros(1)
        done = K.apply_x(*self._arrays(), self.exact,
                         np.array([site], np.int64), np.array([tk], np.int64),
                         np.array([tr]), np.array([u]), np.array([f], np.int64),
                         lam, prob)
        if done == 0:
            raise ImpossibleOutcomeError(
                f"outcome {forced} of X({theta}) at site {site} has probability 0")
        return Outcome(int(lam[0]), float(prob[0]))

    def measure_zz(self, i: int, j: int, *, u=None, forced=None,
                   rng=None) -> Outcome:
        """Project onto an eigenspace of Z_i Z_j (see :meth:`measure_x`)."""
        self._check_site(i, j)
        if i == j:
            raise ValueError("ZZ measurement needs two distinct sites")
        u, f = _draw(u, forced, rng)
        lam = np.zeros(1, np.int64)
        prob = np.zeros(1)
        done = K.apply_zz(*self._arrays(), self.exact,
                          np.array([[i, j]], np.int64), np.array([u]),
                          np.array([f], np.int64), lam, prob)
        if done == 0:
            raise ImpossibleOutcomeError(
                f"outcome {forced} of ZZ({i},{j}) has probability 0")
        return Outcome(int(lam[0]), float(prob[0]))

    # -- queries -----------------------------------------------------------

    def labels(self) -> np.ndarray:
        return self.label.copy()

    def cluster_ids(self) -> np.ndarray:
        return np.flatnonzero(self.size > 0)

    @property
    def n_clusters(self) -> int:
        return int(np.count_nonzero(self.size))

    def _check_cluster(self, cid):
        if not (0 <= cid < self.n_sites and self.size[cid] > 0):
            raise KeyError(f"no cluster with id {cid}")

    def cluster_size(self, cid: int) -> int:
        self._check_cluster(cid)
        return int(self.size[cid])

    def members(self, cid: int) -> list[int]:
        self._check_cluster(cid)
        out = []
        s = self.head[cid]
        while s >= 0:
            out.append(int(s))
            s = self.nxt[s]
        return sorted(out)

    def phase(self, cid: int) -> PhaseValue:
        self._check_cluster(cid)
        if self.exact:
            return PhaseValue(int(self.pk[cid]), True)
        return PhaseValue(float(self.pr[cid]), False)

    def canonical_phase(self, cid: int) -> PhaseValue:
        """Phase of the single-qubit state the cluster is Clifford-equivalent to.

        A CNOT staircase maps the cluster to ``|0> + exp(i p)|1>`` tensored
        with computational basis states (``-p`` if the first reference bit is
        1, which no magic measure distinguishes).
        """
        return self.phase(cid)

    def phase_table(self):
        """(cluster ids, phase values, exact flag) for all live clusters."""
        ids = self.cluster_ids()
        vals = self.pk[ids] if self.exact else self.pr[ids]
        return ids, vals, self.exact

    def sizes(self) -> np.ndarray:
        return self.size.copy()

    def census(self, regions: dict | None = None) -> ClusterCensus:
        """Cluster counts; ``regions`` maps names to site collections."""
        live = self.size[self.size > 0]
        return _census(live, self.label, regions, self.n_sites)

    def copy(self) -> "ClusterState":
        new = object.__new__(ClusterState)
        new.n_sites = self.n_sites
        new.exact = self.exact
        for name in ("label", "bit", "size", "pk", "pr", "head", "nxt", "prv",
                     "free", "meta"):
            setattr(new, name, getattr(self, name).copy())
        return new

    # -- consistency and serialisation ------------------------------------

    def check_invariants(self):
        """Raise AssertionError if internal bookkeeping is inconsistent."""
        n = self.n_sites
        counts = np.bincount(self.label, minlength=n)
        assert np.array_equal(counts, self.size), "sizes disagree with labels"
        assert self.size.sum() == n
        assert set(np.unique(self.bit)) <= {0, 1}
        for c in np.flatnonzero(self.size):
            m = self.members(c)
            assert len(m) == self.size[c], f"member list of {c} has wrong length"
            assert np.all(self.label[m] == c)
        dead = set(np.flatnonzero(self.size == 0).tolist())
        stack = set(self.free[: self.meta[0]].tolist())
        assert stack == dead and len(stack) == self.meta[0], "free list corrupt"

    def to_dict(self) -> dict:
        clusters = {}
        for c in self.cluster_ids():
            clusters[str(int(c))] = {
                "phase": self.phase(c).to_json(),
                "size": int(self.size[c]),
                "members": self.members(c),
            }
        return {
            "n_sites": self.n_sites,
            "site_label": self.label.tolist(),
            "site_bit": self.bit.tolist(),
            "clusters": clusters,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterState":
        n = int(d["n_sites"])
        st = cls(n)
        label = np.asarray(d["site_label"], dtype=np.int64)
        st.bit[:] = d["site_bit"]
        st.label[:] = label
        st.size[:] = 0
        st.head[:] = -1
        st.nxt[:] = -1
        st.prv[:] = -1
        phases = {int(c): PhaseValue.from_json(v["phase"])
                  for c, v in d["clusters"].items()}
        if set(phases) != set(label.tolist()):
            raise ValueError("cluster registry does not match site labels")
        st.exact = all(ph.exact for ph in phases.values())
        for c, ph in phases.items():
            if st.exact:
                st.pk[c] = ph.value
            else:
                st.pr[c] = ph.angle
        for s in range(n - 1, -1, -1):
            c = label[s]
            h = st.head[c]
            st.nxt[s] = h
            if h >= 0:
                st.prv[h] = s
            st.head[c] = s
            st.size[c] += 1
        for c, v in d["clusters"].items():
            if st.size[int(c)] != v["size"]:
                raise ValueError(f"size of cluster {c} disagrees with labels")
        dead = np.flatnonzero(st.size == 0)
        st.free[: dead.size] = dead
        st.meta[0] = dead.size
        return st


def init_product(n_sites: int, phases) -> ClusterState:
    """Product state of single-site clusters ``|0> + exp(i phases[s])|1>``."""
    return ClusterState(n_sites, phases)


def cluster_census(state) -> ClusterCensus:
    return state.census()


def _census(live_sizes, label, regions, n):
    hist = Counter(int(s) for s in live_sizes)
    region_counts = {}
    for name, sites in (regions or {}).items():
        mask = np.zeros(n, bool)
        mask[np.asarray(sites, dtype=np.int64)] = True
        region_counts[name] = int(np.unique(label[mask]).size)
    return ClusterCensus(
        n_clusters=int(len(live_sizes)),
        size_histogram=dict(sorted(hist.items())),
        odd_count=int(np.count_nonzero(np.asarray(live_sizes) % 2)),
        region_counts=region_counts,
    )


class ParityState:
    """Connectivity-only cluster state for the fixed pi/4 protocol.

    Sizes, and hence size parities, are tracked; phases and reference bits
    are not.  Under the pi/4 protocol started from ``|+_{pi/4}>`` on every
    site, a cluster's phase is congruent to ``size * pi/4`` mod pi/2, so its
    canonical phase class is ``size mod 2`` in units of pi/4.
    """

    mode = "parity"

    def __init__(self, n_sites: int, pool_factor: int = 4):
        if n_sites < 1:
            raise ValueError("need at least one site")
        n = n_sites
        self.n_sites = n
        self.node = np.arange(n, dtype=np.int64)
        self.parent = np.arange(pool_factor * n + 1, dtype=np.int64)
        self.usize = np.ones(pool_factor * n + 1, dtype=np.int64)
        self.meta = np.array([n], dtype=np.int64)  # next fresh node

    def measure_x(self, site: int):
        """Detach ``site`` into its own cluster (outcome not tracked)."""
        if not 0 <= site < self.n_sites:
            raise IndexError(site)
        K.parity_apply_x(self.node, self.parent, self.usize, self.meta,
                         np.array([site], np.int64))

    def measure_zz(self, i: int, j: int):
        """Merge the clusters of ``i`` and ``j`` (outcome not tracked)."""
        if i == j:
            raise ValueError("ZZ measurement needs two distinct sites")
        K.parity_apply_zz(self.node, self.parent, self.usize,
                          np.array([[i, j]], np.int64))

    def _labels_sizes(self):
        lab = np.empty(self.n_sites, np.int64)
        sz = np.empty(self.n_sites, np.int64)
        K.parity_labels(self.node, self.parent, lab, sz)
        return lab, sz

    def labels(self) -> np.ndarray:
        return self._labels_sizes()[0]

    def sizes(self) -> np.ndarray:
        return self._labels_sizes()[1]

    def cluster_ids(self) -> np.ndarray:
        return np.flatnonzero(self.sizes())

    @property
    def n_clusters(self) -> int:
        return int(np.count_nonzero(self.sizes()))

    def canonical_phase(self, cid: int) -> PhaseValue:
        sz = self.sizes()
        if not (0 <= cid < self.n_sites and sz[cid] > 0):
            raise KeyError(f"no cluster with id {cid}")
        return PhaseValue(int(sz[cid] % 2), True)

    def phase_table(self):
        sz = self.sizes()
        ids = np.flatnonzero(sz)
        return ids, sz[ids] % 2, True

    def census(self, regions: dict | None = None) -> ClusterCensus:
        lab, sz = self._labels_sizes()
        return _census(sz[sz > 0], lab, regions, self.n_sites)
