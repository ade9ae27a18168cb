"""Dense state-vector reference for small systems.

Site ``i`` is tensor axis ``i`` of the amplitude array (so site 0 is the most
significant bit of the flat basis index).  Everything here is brute force and
independent of the cluster bookkeeping in :mod:`rbclab.core`; it exists to
validate that bookkeeping.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from . import observables as obs
from .circuit import (CircuitParams, draw_site_flags, draw_step_events,
                      trajectory_rng)
from .core import ClusterState, Outcome, ParityState, as_phase
from .exceptions import ConfigError, ImpossibleOutcomeError
from .lattice import build_lattice

MAX_QUBITS = 12
MAX_SRE2_QUBITS = 10
EIG_CUTOFF = 1e-14


@dataclass
class DenseState:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex).ravel()
        if self.amplitudes.size != 2 ** self.n_qubits:
            raise ValueError("amplitude vector has the wrong length")

    @property
    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape((2,) * self.n_qubits)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def overlap(self, other: "DenseState") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def copy(self) -> "DenseState":
        return DenseState(self.n_qubits, self.amplitudes.copy())


def _check_size(n, limit=MAX_QUBITS):
    if n > limit:
        raise ConfigError(f"dense reference limited to {limit} qubits, got {n}")


def dense_from_clusters(state: ClusterState) -> DenseState:
    """Normalised tensor product of the clusters' ``|b> + e^{ip}|~b>`` vectors."""
    if isinstance(state, ParityState):
        raise ConfigError("parity-mode states carry no phases or bits")
    n = state.n_sites
    _check_size(n)
    psi = np.ones(1, dtype=complex)
    order = []
    for c in state.cluster_ids():
        mem = state.members(c)
        b = state.bit[mem]
        v = np.zeros((2,) * len(mem), dtype=complex)
        v[tuple(b)] = 1.0
        v[tuple(1 - b)] = np.exp(1j * state.phase(c).angle)
        psi = np.kron(psi, v.ravel() / math.sqrt(2))
        order.extend(mem)
    # axes currently follow cluster-by-cluster member order
    psi = np.transpose(psi.reshape((2,) * n), np.argsort(order))
    return DenseState(n, psi.ravel())


def dense_product(phases) -> DenseState:
    """``prod_i (|0> + e^{i phi_i}|1>) / sqrt(2)``."""
    _check_size(len(phases))
    psi = np.ones(1, dtype=complex)
    for ph in phases:
        psi = np.kron(psi, np.array([1.0, np.exp(1j * as_phase(ph).angle)]) / math.sqrt(2))
    return DenseState(len(phases), psi)


def _apply_observable(dense: DenseState, kind: str, sites, theta=None) -> np.ndarray:
    t = dense.tensor
    if kind == "x":
        (s,) = sites
        th = as_phase(theta).angle
        a = np.moveaxis(t, s, 0)
        out = np.empty_like(a)
        out[0] = np.exp(-1j * th) * a[1]
        out[1] = np.exp(1j * th) * a[0]
        return np.moveaxis(out, 0, s).ravel()
    i, j = sites
    z = np.array([1.0, -1.0])
    shape_i = [1] * dense.n_qubits
    shape_j = [1] * dense.n_qubits
    shape_i[i] = 2
    shape_j[j] = 2
    return (t * z.reshape(shape_i) * z.reshape(shape_j)).ravel()


def dense_probabilities(dense: DenseState, kind: str, sites, theta=None):
    """(Pr(+1), Pr(-1)) for a rotated X at one site or ZZ on a pair."""
    o_psi = _apply_observable(dense, kind, sites, theta)
    ev = float(np.real(np.vdot(dense.amplitudes, o_psi))) / dense.norm ** 2
    pp = 0.5 * (1.0 + ev)
    return pp, 1.0 - pp


def dense_measure(dense: DenseState, kind: str, sites, theta=None, *,
                  u=None, forced=None, rng=None) -> tuple[DenseState, Outcome]:
    """Project onto an eigenspace of ``kind`` ("x" or "zz") and renormalise.

    The outcome is +1 when ``u < Pr(+1)`` unless ``forced``.
    """
    pp, _ = dense_probabilities(dense, kind, sites, theta)
    if forced is None:
        if u is None:
            u = (rng if rng is not None else np.random.default_rng()).random()
        lam = 1 if u < pp else -1
    else:
        lam = int(forced)
    prob = pp if lam == 1 else 1.0 - pp
    if prob <= 0.0:
        raise ImpossibleOutcomeError(f"outcome {lam} has probability 0")
    o_psi = _apply_observable(dense, kind, sites, theta)
    new = 0.5 * (dense.amplitudes + lam * o_psi)
    new /= np.linalg.norm(new)
    return DenseState(dense.n_qubits, new), Outcome(lam, prob)


# -- observables ---------------------------------------------------------------


def _entropy_bits(w) -> float:
    w = np.asarray(w, dtype=float)
    w = w[w > EIG_CUTOFF]
    return float(-(w * np.log2(w)).sum())


def _region_axes(n, region):
    mask = obs.region_mask(region, n)
    a = np.flatnonzero(mask)
    b = np.flatnonzero(~mask)
    return a, b


def _bitmask(n, mask) -> int:
    return int(sum(1 << (n - 1 - int(i)) for i in np.flatnonzero(mask)))


@njit(cache=True)
def _split_indices(n, amask):
    """Basis index -> (index within A, index within the complement)."""
    d = 1 << n
    ia = np.zeros(d, np.int64)
    ib = np.zeros(d, np.int64)
    for k in range(d):
        a = 0
        b = 0
        for bit in range(n - 1, -1, -1):
            v = (k >> bit) & 1
            if (amask >> bit) & 1:
                a = (a << 1) | v
            else:
                b = (b << 1) | v
        ia[k] = a
        ib[k] = b
    return ia, ib


@njit(cache=True)
def _entropy_nb(w, cutoff):
    s = 0.0
    for x in w:
        if x > cutoff:
            s -= x * np.log2(x)
    return s


@njit(cache=True)
def _bipartite(psi, n, amask, want_ent, cutoff):
    """(entanglement entropy, marginal Shannon entropy of A), both in bits."""
    na = 0
    for bit in range(n):
        na += (amask >> bit) & 1
    ia, ib = _split_indices(n, amask)
    da = 1 << na
    db = 1 << (n - na)
    pa = np.zeros(da)
    for k in range(psi.size):
        pa[ia[k]] += psi[k].real ** 2 + psi[k].imag ** 2
    h = _entropy_nb(pa, cutoff)
    if not want_ent or na == 0 or na == n:
        return 0.0, h
    m = np.zeros((da, db), np.complex128)
    for k in range(psi.size):
        m[ia[k], ib[k]] = psi[k]
    g = m @ m.conj().T if da <= db else m.conj().T @ m
    return _entropy_nb(np.linalg.eigvalsh(g), cutoff), h


def dense_region_entropies(dense: DenseState, region, entanglement: bool = True):
    """``(S_vN(A), H(diag rho_A))`` in bits for one bipartition."""
    n = dense.n_qubits
    mask = obs.region_mask(region, n)
    s, h = _bipartite(np.ascontiguousarray(dense.amplitudes, np.complex128), n,
                      _bitmask(n, mask), entanglement, EIG_CUTOFF)
    return float(s), float(h)


def dense_entanglement_entropy(dense: DenseState, region) -> float:
    """Von Neumann entropy (bits) of the reduced state on ``region``."""
    # spectrum of the reduced density matrix via the smaller Gram matrix
    return dense_region_entropies(dense, region)[0]


def dense_participation(dense: DenseState, region=None) -> float:
    """Shannon entropy (bits) of computational-basis weights (marginal on ``region``)."""
    if region is None:
        return _entropy_bits(dense.probabilities())
    return dense_region_entropies(dense, region, entanglement=False)[1]


def reduced_density_matrix(dense: DenseState, region) -> np.ndarray:
    a, b = _region_axes(dense.n_qubits, region)
    m = np.transpose(dense.tensor, np.concatenate([a, b])).reshape(2 ** a.size, -1)
    return m @ m.conj().T


@njit(cache=True)
def _pauli_moments(rho):
    """(sum_P tr(rho P)^2, sum_P tr(rho P)^4) over all Pauli strings.

    For X-part ``x``, ``tr(rho X^x Z^z) = sum_k rho[k ^ x, k] (-1)^{z.k}`` up
    to a unit phase, i.e. a Walsh-Hadamard transform over ``k``.
    """
    d = rho.shape[0]
    v = np.empty(d, np.complex128)
    s2 = 0.0
    s4 = 0.0
    for x in range(d):
        for k in range(d):
            v[k] = rho[k ^ x, k]
        h = 1
        while h < d:
            for i in range(0, d, 2 * h):
                for j in range(i, i + h):
                    a = v[j]
                    b = v[j + h]
                    v[j] = a + b
                    v[j + h] = a - b
            h *= 2
        for k in range(d):
            m2 = v[k].real ** 2 + v[k].imag ** 2
            s2 += m2
            s4 += m2 * m2
    return s2, s4


def dense_sre2(dense, limit: int = MAX_SRE2_QUBITS) -> float:
    """Stabilizer Renyi-2 entropy.

    For a pure state this is ``-log2(sum_P <P>^4 / 2^n)``.  Density matrices
    are also accepted, in which case the normalised variant
    ``-log2(sum_P tr(rho P)^4 / sum_P tr(rho P)^2)`` is returned; it agrees
    with the pure-state formula on pure states, is additive, and vanishes on
    mixtures of computational basis states that are stabilizer states.
    """
    if isinstance(dense, DenseState):
        _check_size(dense.n_qubits, limit)
        rho = np.outer(dense.amplitudes, dense.amplitudes.conj())
    else:
        rho = np.asarray(dense)
        _check_size(int(round(math.log2(rho.shape[0]))), limit)
    s2, s4 = _pauli_moments(np.ascontiguousarray(rho, dtype=np.complex128))
    return float(-math.log2(s4 / s2))


def dense_subsystem_sre2(dense: DenseState, region) -> float:
    return dense_sre2(reduced_density_matrix(dense, region))


def dense_mutual_sre2(dense: DenseState, region, total: float | None = None) -> float:
    """``M(psi) - M(rho_A) - M(rho_Ac)`` with the normalised mixed-state SRE-2.

    ``total`` may pass in a precomputed ``dense_sre2(dense)``.
    """
    mask = obs.region_mask(region, dense.n_qubits)
    if total is None:
        total = dense_sre2(dense)
    return (total - dense_subsystem_sre2(dense, mask)
            - dense_subsystem_sre2(dense, ~mask))


# -- coupled runs --------------------------------------------------------------------


@dataclass
class ValidationReport:
    params: dict
    seed: int
    n_steps: int
    n_events: int = 0
    n_checks: int = 0
    mismatches: list = field(default_factory=list)
    events: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.mismatches

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _cut_regions(params: CircuitParams):
    """Masks of all contiguous site ranges (cyclic in 1D periodic chains).

    Each mask comes with a flag saying whether its entanglement needs
    checking; on a ring the complement of an arc is an arc, so arcs longer
    than half the ring add nothing.
    """
    n = params.lattice.n_sites
    cyclic = params.lattice.dim == 1 and params.lattice.periodic
    out = []
    for length in range(1, n):
        starts = range(n) if cyclic else range(n - length + 1)
        for a in starts:
            m = np.zeros(n, bool)
            m[(a + np.arange(length)) % n] = True
            out.append((m, not cyclic or 2 * length <= n))
    return out


class _Checker:
    def __init__(self, report, tol_prob, tol_obs):
        self.report = report
        self.tol = {"prob": tol_prob, "obs": tol_obs}

    def __call__(self, step, what, expected, got, kind="obs", detail=None):
        self.report.n_checks += 1
        if not abs(expected - got) <= self.tol[kind]:
            self.report.mismatches.append({
                "step": step, "check": what, "expected": float(expected),
                "got": float(got), "detail": detail})


def coupled_run(params: CircuitParams, seed: int, n_steps: int | None = None, *,
                tol_prob: float = 1e-12, tol_obs: float = 1e-9,
                sre2_max_sites: int = 8, fidelity_tol: float = 1e-10,
                log_events: bool = True, all_cuts_every: int = 1) -> ValidationReport:
    """Run the cluster engine and the dense reference in lockstep.

    Events come from the same generator stream as :func:`run_trajectory`.
    Before each event the two Born distributions are compared; the outcome
    realised by the cluster engine is then forced on the dense state.  After
    every step the fidelity, entanglement on every contiguous cut (only the
    cuts ``[0, l)`` except on every ``all_cuts_every``-th and the final step),
    participation entropies and (for ``n <= sre2_max_sites``) SRE-2 full and
    mutual magic are compared.  Under the random-angle scheme the mutual
    nullity is also compared with the dense entanglement whenever no cluster
    phase is a stabilizer phase (exact-zero initial phases can recombine
    into genuine stabilizer clusters, for which the two differ).
    """
    if params.mode != "full":
        params = CircuitParams(params.lattice, params.p, params.scheme, params.t_max,
                               params.initial, params.measure, "full",
                               params.observables)
    n = params.lattice.n_sites
    _check_size(n)
    n_steps = params.t_max if n_steps is None else n_steps
    report = ValidationReport(params.to_dict(), int(seed), int(n_steps))
    check = _Checker(report, tol_prob, tol_obs)

    rng = trajectory_rng(seed)
    _, edges = build_lattice(params.lattice)
    state = ClusterState(n, params.initial)
    dense = dense_product(params.initial)
    site_on = draw_site_flags(params, rng)
    cuts = _cut_regions(params)
    prefix = [(r, True) for r, _ in cuts if r[0] and not r[-1]]
    do_sre2 = n <= sre2_max_sites

    for t in range(1, n_steps + 1):
        for ev in draw_step_events(params, edges, rng, site_on):
            if ev.kind == "x":
                ref = state.outcome_distribution_x(ev.sites[0], ev.angle)
                dd = dense_probabilities(dense, "x", ev.sites, ev.angle)
                out = state.measure_x(ev.sites[0], ev.angle, u=ev.u)
            else:
                ref = state.outcome_distribution_zz(*ev.sites)
                dd = dense_probabilities(dense, "zz", ev.sites)
                out = state.measure_zz(*ev.sites, u=ev.u)
            check(t, f"born:{ev.kind}{ev.sites}", dd[0], ref[0], "prob")
            report.n_events += 1
            if log_events:
                report.events.append({
                    "step": t, "kind": ev.kind, "sites": list(ev.sites),
                    "angle": None if ev.angle is None else ev.angle.to_json(),
                    "lam": out.lam, "probability": out.probability,
                    "dense_probability": dd[0] if out.lam == 1 else dd[1]})
            try:
                dense, _ = dense_measure(dense, ev.kind, ev.sites, ev.angle,
                                         forced=out.lam)
            except ImpossibleOutcomeError:
                report.mismatches.append({"step": t, "check": "impossible outcome",
                                          "expected": 0.0, "got": out.probability,
                                          "detail": list(ev.sites)})
                return report

        fid = abs(dense.overlap(dense_from_clusters(state)))
        report.n_checks += 1
        if fid < 1.0 - fidelity_tol:
            report.mismatches.append({"step": t, "check": "fidelity",
                                      "expected": 1.0, "got": fid, "detail": None})
        check(t, "participation", dense_participation(dense),
              obs.participation_entropy(state))
        check_null = (params.scheme.kind == "random"
                      and not any(state.phase(c).is_stabilizer()
                                  for c in state.cluster_ids()))
        every = t == n_steps or t % all_cuts_every == 0
        for r, ent in (cuts if every else prefix):
            where = np.flatnonzero(r).tolist()
            s_dense, h_dense = dense_region_entropies(dense, r, ent or check_null)
            check(t, f"participation{where}", h_dense,
                  obs.participation_entropy(state, r))
            if not (ent or check_null):
                continue
            check(t, f"entanglement{where}", s_dense, obs.entanglement_entropy(state, r))
            if check_null:
                check(t, f"mutual_nullity{where}", s_dense,
                      obs.mutual_magic(state, r, obs.MagicMeasure.NULLITY))
        if do_sre2:
            total = dense_sre2(dense)
            check(t, "sre2", total, obs.full_magic(state, obs.MagicMeasure.SRE2))
            for ell in range(1, n):
                r = list(range(ell))
                check(t, f"mutual_sre2[0,{ell})", dense_mutual_sre2(dense, r, total),
                      obs.mutual_magic(state, r, obs.MagicMeasure.SRE2))
    return report
