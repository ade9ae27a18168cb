"""Magic, entanglement and participation observables on cluster states.

Every cluster is Clifford-equivalent to one single-qubit state
``|0> + exp(i p)|1>`` times stabilizer states, and tracing out part of a
cluster leaves a classical (stabilizer) mixture.  All quantities below are
therefore sums over clusters, classified by how they sit relative to the
regions involved:

* contained in a region: contributes its single-qubit magic to that region;
* spanning a cut: contributes its magic to the mutual magic, one bit to the
  entanglement entropy, and one bit to the diagonal entropy on each side.

Functions accept either a :class:`~rbclab.core.ClusterState` or a
:class:`~rbclab.core.ParityState`.  Regions are collections of site indices
or boolean masks.
"""

from __future__ import annotations

import math
from enum import Enum

import numpy as np

from . import _kernels as K
from .core import STABILIZER_TOL, PhaseValue, as_phase
from .exceptions import MeasureMismatchError

LOG2_43 = math.log2(4.0 / 3.0)


class MagicMeasure(str, Enum):
    """Magic measures additive over tensor products of single-qubit states."""

    NULLITY = "nullity"
    SRE2 = "sre2"
    TUNIT = "tunit"


def _as_measure(measure) -> MagicMeasure:
    return measure if isinstance(measure, MagicMeasure) else MagicMeasure(measure)


def _values(vals, exact: bool, measure: MagicMeasure) -> np.ndarray:
    vals = np.asarray(vals)
    if exact:
        odd = (vals.astype(np.int64) % 2) == 1
        if measure is MagicMeasure.SRE2:
            return np.where(odd, LOG2_43, 0.0)
        return odd.astype(float)
    phi = vals.astype(float)
    if measure is MagicMeasure.SRE2:
        c, s = np.cos(phi), np.sin(phi)
        return -np.log2(0.5 * (1.0 + c**4 + s**4))
    r = np.mod(phi, math.pi / 2)
    dist = np.minimum(r, math.pi / 2 - r)
    if measure is MagicMeasure.NULLITY:
        return (dist >= STABILIZER_TOL).astype(float)
    # T units need every phase on the pi/4 grid
    r4 = np.mod(phi, math.pi / 4)
    if np.any(np.minimum(r4, math.pi / 4 - r4) >= STABILIZER_TOL):
        raise MeasureMismatchError(
            "T-unit magic is only defined for phases that are multiples of pi/4")
    return (dist >= STABILIZER_TOL).astype(float)


def single_qubit_magic(phi, measure=MagicMeasure.TUNIT) -> float:
    """Magic of ``|0> + exp(i phi)|1>``.

    * nullity: 0 for stabilizer phases (multiples of pi/2), else 1;
    * sre2: stabilizer Renyi-2 entropy ``-log2[(1 + cos^4 + sin^4) / 2]``;
    * tunit: 1 for odd multiples of pi/4, 0 for multiples of pi/2.
    """
    ph = as_phase(phi)
    return float(_values([ph.value], ph.exact, _as_measure(measure))[0])


def magic_of_t_state(measure=MagicMeasure.TUNIT) -> float:
    """Magic of the T state, the unit in which curves are reported."""
    return single_qubit_magic(PhaseValue(1), measure)


def cluster_weights(state, measure=MagicMeasure.TUNIT) -> np.ndarray:
    """Per-label magic (length ``n_sites``; zero for unused labels)."""
    ids, vals, exact = state.phase_table()
    w = np.zeros(state.n_sites)
    w[ids] = _values(vals, exact, _as_measure(measure))
    return w


def region_mask(region, n_sites: int) -> np.ndarray:
    r = np.asarray(region)
    if r.dtype == bool:
        if r.shape != (n_sites,):
            raise ValueError("boolean region must have one entry per site")
        return r.copy()
    mask = np.zeros(n_sites, bool)
    idx = r.astype(np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= n_sites):
        raise IndexError("region contains sites outside the system")
    mask[idx] = True
    return mask


def _touch(label, mask, n):
    t = np.zeros(n, bool)
    t[label[mask]] = True
    return t


def _split(state, region):
    """(weights-free) classification: clusters inside, outside, spanning."""
    n = state.n_sites
    label = state.labels()
    mask = region_mask(region, n)
    ins = _touch(label, mask, n)
    outs = _touch(label, ~mask, n)
    return ins & ~outs, outs & ~ins, ins & outs


def full_magic(state, measure=MagicMeasure.TUNIT) -> float:
    return float(cluster_weights(state, measure).sum())


def subsystem_magic(state, region, measure=MagicMeasure.TUNIT) -> float:
    """Magic of the reduced state: clusters wholly inside ``region``."""
    inside, _, _ = _split(state, region)
    return float(cluster_weights(state, measure)[inside].sum())


def mutual_magic(state, region, measure=MagicMeasure.TUNIT) -> float:
    """Magic carried by clusters spanning ``region`` and its complement."""
    mask = region_mask(region, state.n_sites)
    if mask.all() or not mask.any():
        raise ValueError("region and its complement must both be non-empty")
    _, _, span = _split(state, mask)
    return float(cluster_weights(state, measure)[span].sum())


def _partition(state, a, b, c):
    n = state.n_sites
    masks = [region_mask(r, n) for r in (a, b, c)]
    total = masks[0].astype(int) + masks[1] + masks[2]
    if np.any(total != 1):
        raise ValueError("A, B, C must be disjoint and cover every site")
    return masks


def topological_magic(state, a, b, c, measure=MagicMeasure.TUNIT) -> float:
    """M(ABC) + M(B) - M(AB) - M(BC) from four subsystem magics."""
    ma, mb, mc = _partition(state, a, b, c)
    return (full_magic(state, measure)
            + subsystem_magic(state, mb, measure)
            - subsystem_magic(state, ma | mb, measure)
            - subsystem_magic(state, mb | mc, measure))


def topological_tallies(state, a, b, c, measure=MagicMeasure.TUNIT) -> dict:
    """Magic of clusters touching all of A, B, C and of those touching A and C
    but not B.  Their sum equals :func:`topological_magic`."""
    ma, mb, mc = _partition(state, a, b, c)
    n = state.n_sites
    label = state.labels()
    ta, tb, tc = (_touch(label, m, n) for m in (ma, mb, mc))
    w = cluster_weights(state, measure)
    return {
        "abc": float(w[ta & tb & tc].sum()),
        "ac_not_b": float(w[ta & tc & ~tb].sum()),
    }


def entanglement_entropy(state, region) -> float:
    """Entanglement entropy in bits: the number of spanning clusters."""
    _, _, span = _split(state, region)
    return float(np.count_nonzero(span))


def participation_entropy(state, region=None) -> float:
    """Shannon entropy (bits) of computational-basis weights.

    For the full state this is the number of clusters; for a region it is
    the number of clusters that intersect it.
    """
    label = state.labels()
    if region is None:
        return float(np.unique(label).size)
    mask = region_mask(region, state.n_sites)
    return float(np.unique(label[mask]).size)


def shannon_mutual_information(state, region) -> float:
    mask = region_mask(region, state.n_sites)
    return (participation_entropy(state, mask)
            + participation_entropy(state, ~mask)
            - participation_entropy(state))


# -- 1D profiles --------------------------------------------------------------


def mutual_magic_profile(state, measure=MagicMeasure.TUNIT) -> np.ndarray:
    """Mutual magic of ``A = [0, l)`` for l = 1 .. n-1."""
    w = cluster_weights(state, measure)
    return K.span_profile_1d(state.labels(), w)[1:-1]


def entanglement_profile(state) -> np.ndarray:
    """Entanglement entropy of ``A = [0, l)`` for l = 1 .. n-1."""
    w = np.ones(state.n_sites)
    return K.span_profile_1d(state.labels(), w)[1:-1]
