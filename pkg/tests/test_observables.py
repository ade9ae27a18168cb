import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rbclab.core import ParityState, PhaseValue, init_product
from rbclab.exceptions import MeasureMismatchError
from rbclab.observables import (LOG2_43, MagicMeasure, entanglement_entropy,
                                entanglement_profile, full_magic, magic_of_t_state,
                                mutual_magic, mutual_magic_profile,
                                participation_entropy, shannon_mutual_information,
                                single_qubit_magic, subsystem_magic,
                                topological_magic, topological_tallies)

NUL, SRE, TU = MagicMeasure.NULLITY, MagicMeasure.SRE2, MagicMeasure.TUNIT


def make(n, clusters):
    """State whose clusters are ``[(members, phase), ...]``; others stay |+>."""
    phases = [PhaseValue(0)] * n
    for members, ph in clusters:
        phases[members[0]] = ph if isinstance(ph, PhaseValue) else PhaseValue(ph)
    s = init_product(n, phases)
    for members, _ in clusters:
        for a, b in zip(members, members[1:]):
            s.measure_zz(a, b, forced=1)
    return s


def random_state(n, rng, exact=True, ops=None):
    if exact:
        phases = [PhaseValue(int(k)) for k in rng.integers(0, 8, n)]
    else:
        phases = [PhaseValue.radians(float(x)) for x in rng.uniform(0, 2 * math.pi, n)]
    s = init_product(n, phases)
    for _ in range(ops or 3 * n):
        if n > 1 and rng.random() < 0.6:
            i, j = (int(v) for v in rng.choice(n, 2, replace=False))
            s.measure_zz(i, j, rng=rng)
        else:
            th = PhaseValue(int(rng.integers(8))) if exact else PhaseValue.radians(float(rng.uniform(0, 6.3)))
            s.measure_x(int(rng.integers(n)), th, rng=rng)
    return s


# -- single qubit --------------------------------------------------------------------


def test_single_qubit_examples():
    assert single_qubit_magic(math.pi / 2, NUL) == 0
    assert single_qubit_magic(math.pi / 4, SRE) == pytest.approx(0.415037, abs=1e-6)
    assert single_qubit_magic(math.pi / 4, SRE) == pytest.approx(math.log2(4 / 3), abs=1e-14)
    assert single_qubit_magic(PhaseValue(1), TU) == 1
    assert single_qubit_magic(PhaseValue(3), TU) == 1
    assert magic_of_t_state(SRE) == LOG2_43


def test_tunit_rejects_off_grid_phase():
    with pytest.raises(MeasureMismatchError):
        single_qubit_magic(0.3, TU)


@given(st.floats(-20, 20, allow_nan=False))
def test_single_qubit_symmetry_and_bounds(phi):
    for m in (NUL, SRE):
        v = single_qubit_magic(phi, m)
        assert v == pytest.approx(single_qubit_magic(-phi, m), abs=1e-12)
        assert 0 <= v <= 1 + 1e-12
    assert single_qubit_magic(phi, SRE) <= LOG2_43 + 1e-12


@pytest.mark.parametrize("k", range(4))
def test_stabilizer_phases_have_zero_magic(k):
    for m in MagicMeasure:
        assert single_qubit_magic(PhaseValue(2 * k), m) == 0.0
        assert single_qubit_magic(k * math.pi / 2, m) == pytest.approx(0.0, abs=1e-15)
        assert single_qubit_magic(PhaseValue(2 * k + 1), m) > 0


# -- full / subsystem / mutual ---------------------------------------------------------


def test_full_magic_examples():
    s = init_product(6, [PhaseValue(1)] * 6)
    assert full_magic(s, TU) == 6
    s = make(3, [([0], PhaseValue.radians(math.pi / 4)), ([1], PhaseValue.radians(math.pi / 2)),
                 ([2], PhaseValue.radians(5 * math.pi / 4))])
    assert full_magic(s, NUL) == 2


def test_subsystem_magic_examples():
    s = make(3, [([0, 1, 2], 1)])
    assert subsystem_magic(s, [0], TU) == 0
    assert subsystem_magic(s, [0, 1], TU) == 0
    s = make(3, [([0, 1], 2), ([2], 1)])
    assert subsystem_magic(s, [0, 1, 2], TU) == 1
    assert subsystem_magic(s, [0, 1, 2], TU) == full_magic(s, TU)


def test_mutual_magic_examples():
    s = make(5, [(list(range(5)), 5)])
    assert all(mutual_magic(s, range(l), TU) == 1 for l in range(1, 5))
    s = init_product(4, [PhaseValue(1)] * 4)
    assert mutual_magic(s, [0, 1], TU) == 0
    s = make(3, [([0, 2], 1), ([1], 1)])
    assert mutual_magic(s, [0, 1], TU) == 1
    with pytest.raises(ValueError):
        mutual_magic(s, [0, 1, 2])


def test_topological_examples():
    s = make(4, [([0, 1, 2, 3], 1)])
    assert topological_magic(s, [0], [1, 2], [3], TU) == 1
    s = make(4, [([1, 2], 1)])
    assert topological_magic(s, [0], [1, 2], [3], TU) == 0
    s = make(4, [([0, 3], 1)])
    assert topological_magic(s, [0], [1, 2], [3], TU) == 1
    assert topological_tallies(s, [0], [1, 2], [3], TU) == {"abc": 0.0, "ac_not_b": 1.0}
    with pytest.raises(ValueError):
        topological_magic(s, [0, 1], [1, 2], [3])


def test_entanglement_and_participation_examples():
    glob = make(4, [([0, 1, 2, 3], 0)])
    assert entanglement_entropy(glob, [0]) == 1
    assert participation_entropy(glob) == 1
    singles = init_product(4, [PhaseValue(1)] * 4)
    assert entanglement_entropy(singles, [0, 1]) == 0
    assert participation_entropy(singles) == 4
    s = make(4, [([0, 2], 0)])
    assert entanglement_entropy(s, [0, 1]) == 1
    s = make(3, [([0, 1], 0)])
    assert participation_entropy(s, [1, 2]) == 2
    assert shannon_mutual_information(glob, [0, 1]) == 1
    assert shannon_mutual_information(singles, [0, 1]) == 0


# -- identities ---------------------------------------------------------------------------


@given(st.integers(2, 24), st.integers(0, 2**32 - 1), st.booleans())
@settings(max_examples=80, deadline=None)
def test_structural_identities(n, seed, exact):
    rng = np.random.default_rng(seed)
    s = random_state(n, rng, exact)
    region = rng.random(n) < 0.5
    if region.all() or not region.any():
        region[0] = not region[0]
    measures = (NUL, SRE, TU) if exact else (NUL, SRE)
    ent = entanglement_entropy(s, region)
    for m in measures:
        eq10 = full_magic(s, m) - subsystem_magic(s, region, m) - subsystem_magic(s, ~region, m)
        assert mutual_magic(s, region, m) == pytest.approx(eq10, abs=1e-12)
        assert mutual_magic(s, region, m) <= ent + 1e-12
        assert full_magic(s, m) <= participation_entropy(s) + 1e-12
    assert shannon_mutual_information(s, region) == ent
    a = np.arange(n) < n // 3
    c = np.arange(n) >= n - n // 3
    b = ~(a | c)
    if a.any() and c.any():
        t = topological_tallies(s, a, b, c, NUL)
        assert topological_magic(s, a, b, c, NUL) == pytest.approx(t["abc"] + t["ac_not_b"], abs=1e-12)


@given(st.integers(2, 40), st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_profiles_match_pointwise(n, seed):
    s = random_state(n, np.random.default_rng(seed))
    prof_m, prof_e = mutual_magic_profile(s, TU), entanglement_profile(s)
    assert prof_m.shape == (n - 1,)
    for l in range(1, n):
        assert prof_m[l - 1] == mutual_magic(s, range(l), TU)
        assert prof_e[l - 1] == entanglement_entropy(s, range(l))


@given(st.integers(2, 40), st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_pi4_magic_counts_odd_clusters(n, seed):
    rng = np.random.default_rng(seed)
    s = init_product(n, [PhaseValue(1)] * n)
    p = ParityState(n)
    for _ in range(4 * n):
        if rng.random() < 0.5:
            i, j = (int(v) for v in rng.choice(n, 2, replace=False))
            s.measure_zz(i, j, rng=rng)
            p.measure_zz(i, j)
        else:
            site = int(rng.integers(n))
            s.measure_x(site, PhaseValue(1), rng=rng)
            p.measure_x(site)
    odd = s.census().odd_count
    assert full_magic(s, TU) == odd
    assert full_magic(p, TU) == odd
    region = np.arange(n) < n // 2
    assert mutual_magic(p, region, TU) == mutual_magic(s, region, TU)


def test_random_theta_nullity_matches_entanglement_after_full_sweep():
    rng = np.random.default_rng(1)
    n = 10
    s = init_product(n, [PhaseValue.radians(0.0)] * n)
    for site in range(n):
        s.measure_x(site, PhaseValue.radians(float(rng.uniform(0, 2 * math.pi))), rng=rng)
    for _ in range(200):
        if rng.random() < 0.5:
            i, j = (int(v) for v in rng.choice(n, 2, replace=False))
            s.measure_zz(i, j, rng=rng)
        else:
            s.measure_x(int(rng.integers(n)), PhaseValue.radians(float(rng.uniform(0, 6.28))), rng=rng)
        for l in range(1, n):
            assert mutual_magic(s, range(l), NUL) == entanglement_entropy(s, range(l))
        assert full_magic(s, NUL) == participation_entropy(s)
