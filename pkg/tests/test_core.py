import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rbclab.core import (ClusterState, ParityState, PhaseValue, cluster_census,
                         init_product)
from rbclab.exceptions import ImpossibleOutcomeError
from rbclab.oracle import dense_from_clusters, dense_probabilities

T = PhaseValue(1)


def chain(n, phase, outcomes=None):
    """Cluster on sites 0..n-1 built by forced ZZ merges."""
    s = init_product(n, [phase] * n)
    for i in range(n - 1):
        s.measure_zz(i, i + 1, forced=(outcomes or [1] * n)[i])
    return s


# -- PhaseValue ---------------------------------------------------------------


def test_phase_normalisation():
    assert PhaseValue(9).value == 1
    assert PhaseValue(-1).value == 7
    assert PhaseValue.radians(-math.pi / 2).angle == pytest.approx(1.5 * math.pi)
    assert PhaseValue.from_angle(3 * math.pi / 4) == PhaseValue(3)
    assert not PhaseValue.from_angle(0.3).exact


def test_phase_exact_to_real_lossless():
    for k in range(8):
        r = PhaseValue(k).to_real()
        assert r.same_as(PhaseValue(k))
        assert PhaseValue.from_angle(r.angle) == PhaseValue(k)


@given(st.lists(st.integers(-100, 100), min_size=1, max_size=50))
def test_exact_arithmetic_has_no_drift(ks):
    acc = PhaseValue(0)
    for k in ks:
        acc = acc + PhaseValue(k) - PhaseValue(2 * k)
    assert acc == PhaseValue(-sum(ks))


def test_phase_json_round_trip():
    for ph in (PhaseValue(3), PhaseValue.radians(1.234)):
        assert PhaseValue.from_json(ph.to_json()) == ph


# -- init_product ---------------------------------------------------------------


def test_init_two_t_states():
    s = init_product(2, [math.pi / 4, math.pi / 4])
    assert s.n_clusters == 2
    assert all(s.phase(c) == PhaseValue(1) for c in s.cluster_ids())


def test_init_single_plus():
    s = init_product(1, [0])
    assert s.n_clusters == 1
    assert s.phase(s.cluster_ids()[0]).is_stabilizer()


def test_init_census_echo():
    s = init_product(3, [0, math.pi / 4, math.pi / 2])
    cen = cluster_census(s)
    assert cen.size_histogram == {1: 3}
    assert [s.phase(s.label[i]) for i in range(3)] == [PhaseValue(0), PhaseValue(1), PhaseValue(2)]


def test_init_length_mismatch():
    with pytest.raises(ValueError):
        init_product(3, [0, 0])


# -- X measurement -------------------------------------------------------------


def test_x_distribution_in_cluster_is_even():
    s = chain(2, T)
    assert s.outcome_distribution_x(0, T) == (0.5, 0.5)


def test_x_distribution_eigenstate():
    s = init_product(1, [T])
    assert s.outcome_distribution_x(0, T) == pytest.approx((1.0, 0.0), abs=1e-15)


def test_x_distribution_plus_state():
    pp, pm = init_product(1, [0]).outcome_distribution_x(0, T)
    assert pp == pytest.approx(math.cos(math.pi / 8) ** 2, abs=1e-12)
    assert pp == pytest.approx(0.853553, abs=1e-6)
    assert pm == pytest.approx(0.146447, abs=1e-6)


def test_x_singleton_with_flipped_bit_uses_negated_phase():
    # |1> + e^{i pi/4}|0> ~ |0> + e^{-i pi/4}|1>
    s = chain(2, T, [-1])
    s.measure_x(0, PhaseValue(0), forced=1)  # leaves site 1 alone with bit 1
    c = s.label[1]
    assert s.bit[1] == 1
    phi = s.phase(c).angle
    pp, _ = s.outcome_distribution_x(1, T)
    assert pp == pytest.approx(math.cos((-phi - math.pi / 4) / 2) ** 2, abs=1e-12)


def test_x_splits_pair():
    s = init_product(2, [T, T])
    s.measure_zz(0, 1, forced=1)  # phase pi/2
    assert s.phase(s.label[0]) == PhaseValue(2)
    out = s.measure_x(0, T, forced=1)
    assert out.probability == 0.5
    assert s.n_clusters == 2
    assert s.phase(s.label[0]) == PhaseValue(1)
    assert s.phase(s.label[1]) == PhaseValue(1)


def test_x_on_eigenstate_is_noop():
    s = init_product(1, [T])
    before = s.to_dict()
    out = s.measure_x(0, T, forced=1)
    assert out.probability == pytest.approx(1.0)
    assert s.to_dict() == before


def test_x_three_site_example():
    s = chain(3, T)
    assert s.phase(s.label[0]) == PhaseValue(3)
    s.measure_x(1, T, forced=-1)
    assert s.phase(s.label[1]) == PhaseValue(5)
    assert s.label[0] == s.label[2]
    assert s.phase(s.label[0]) == PhaseValue(6)
    assert s.bit[1] == 0


def test_forced_impossible_x_rejected():
    s = init_product(1, [T])
    with pytest.raises(ImpossibleOutcomeError):
        s.measure_x(0, T, forced=-1)


# -- ZZ measurement ---------------------------------------------------------------


def test_zz_distinct_clusters_even():
    assert init_product(2, [0, 0]).outcome_distribution_zz(0, 1) == (0.5, 0.5)


def test_zz_same_cluster_deterministic():
    s = chain(2, T)
    assert s.outcome_distribution_zz(0, 1) == (1.0, 0.0)
    s = chain(2, T, [-1])
    assert (s.bit[0], s.bit[1]) in ((0, 1), (1, 0))
    assert s.outcome_distribution_zz(0, 1) == (0.0, 1.0)


def test_zz_same_site_rejected():
    with pytest.raises(ValueError):
        init_product(2, [0, 0]).outcome_distribution_zz(1, 1)


def test_zz_merge_plus():
    phi1, phi2 = PhaseValue.radians(0.3), PhaseValue.radians(1.1)
    s = init_product(2, [phi1, phi2])
    s.measure_zz(0, 1, forced=1)
    assert s.n_clusters == 1
    assert s.phase(s.label[0]).same_as(phi1 + phi2)
    assert list(s.bit) == [0, 0]


def test_zz_merge_minus():
    s = init_product(2, [T, T])
    s.measure_zz(0, 1, forced=-1)
    c = s.label[0]
    assert s.phase(c) == PhaseValue(0)
    assert sorted(s.bit.tolist()) == [0, 1]


def test_zz_same_cluster_noop():
    s = chain(3, T)
    before = s.to_dict()
    out = s.measure_zz(0, 2, forced=1)
    assert out.probability == 1.0
    assert s.to_dict() == before
    with pytest.raises(ImpossibleOutcomeError):
        s.measure_zz(0, 2, forced=-1)


# -- canonical phase / census ---------------------------------------------------------


def test_canonical_phase_examples():
    s = chain(3, T)
    assert s.canonical_phase(s.label[0]) == PhaseValue(3)
    assert init_product(1, [0]).canonical_phase(0) == PhaseValue(0)
    s = init_product(1, [math.pi])
    assert s.canonical_phase(0) == PhaseValue(4)
    assert s.canonical_phase(0).is_stabilizer()
    with pytest.raises(KeyError):
        chain(2, T).canonical_phase(5)


def test_census_product():
    cen = cluster_census(init_product(4, [T] * 4))
    assert cen.n_clusters == 4 and cen.odd_count == 4


@pytest.mark.parametrize("L, odd", [(8, 0), (7, 1)])
def test_census_global_cluster(L, odd):
    s = init_product(L, [T] * L)
    for i in range(L):
        s.measure_zz(i, (i + 1) % L, rng=np.random.default_rng(i))
    cen = cluster_census(s)
    assert cen.n_clusters == 1 and cen.odd_count == odd


def test_census_regions():
    s = init_product(3, [T] * 3)
    s.measure_zz(0, 1, forced=1)
    cen = s.census({"A": [0, 1], "B": [1, 2]})
    assert cen.region_counts == {"A": 1, "B": 2}


# -- serialisation --------------------------------------------------------------------


def test_json_round_trip():
    rng = np.random.default_rng(0)
    s = init_product(6, [T] * 6)
    for _ in range(30):
        i, j = rng.choice(6, 2, replace=False)
        s.measure_zz(int(i), int(j), rng=rng)
        s.measure_x(int(rng.integers(6)), T, rng=rng)
    again = ClusterState.from_dict(s.to_dict())
    again.check_invariants()
    assert again.to_dict() == s.to_dict()


# -- properties ----------------------------------------------------------------------------


def _random_ops(s, rng, n_ops, theta_choices):
    n = s.n_sites
    for _ in range(n_ops):
        before = s.n_clusters
        if rng.random() < 0.5:
            i, j = (int(v) for v in rng.choice(n, 2, replace=False))
            same = s.label[i] == s.label[j]
            s.measure_zz(i, j, rng=rng)
            assert s.n_clusters == before - (0 if same else 1)
        else:
            site = int(rng.integers(n))
            big = s.size[s.label[site]] >= 2
            s.measure_x(site, theta_choices[rng.integers(len(theta_choices))], rng=rng)
            assert s.n_clusters == before + (1 if big else 0)


@pytest.mark.parametrize("seed", range(4))
def test_fuzz_invariants(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 65))
    s = init_product(n, [PhaseValue(int(k)) for k in rng.integers(0, 8, n)])
    thetas = [PhaseValue(0), T, PhaseValue(3), PhaseValue.radians(0.7)]
    for _ in range(10):
        _random_ops(s, rng, 1000, thetas)
        s.check_invariants()


@given(st.integers(2, 40), st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_pi4_phase_size_invariant(n, seed):
    rng = np.random.default_rng(seed)
    s = init_product(n, [T] * n)
    _random_ops(s, rng, 200, [T])
    for c in s.cluster_ids():
        assert (s.phase(c).value - s.size[c]) % 2 == 0


@given(st.integers(1, 6), st.integers(0, 6), st.integers(0, 2**32 - 1))
@settings(max_examples=80, deadline=None)
def test_born_matches_dense(n, depth, seed):
    rng = np.random.default_rng(seed)
    thetas = [PhaseValue(0), T, PhaseValue(2), PhaseValue.radians(1.3)]
    s = init_product(n, [PhaseValue(int(k)) for k in rng.integers(0, 8, n)])
    for _ in range(depth):
        if n > 1 and rng.random() < 0.5:
            i, j = (int(v) for v in rng.choice(n, 2, replace=False))
            dense = dense_from_clusters(s)
            assert s.outcome_distribution_zz(i, j)[0] == pytest.approx(
                dense_probabilities(dense, "zz", (i, j))[0], abs=1e-12)
            s.measure_zz(i, j, rng=rng)
        else:
            site = int(rng.integers(n))
            th = thetas[rng.integers(len(thetas))]
            dense = dense_from_clusters(s)
            assert s.outcome_distribution_x(site, th)[0] == pytest.approx(
                dense_probabilities(dense, "x", (site,), th)[0], abs=1e-12)
            s.measure_x(site, th, rng=rng)


def _paper_zz(labels, bits, phases, i, j, lam):
    """Reference ZZ update that always relabels j's cluster."""
    si, sj = labels[i], labels[j]
    if si == sj:
        return
    match = lam == 1 - 2 * (bits[i] ^ bits[j])
    for l in range(len(labels)):
        if labels[l] == sj:
            labels[l] = si
            if not match:
                bits[l] ^= 1
    phases[si] = (phases[si] + phases[sj]) % 8 if match else (phases[si] - phases[sj]) % 8
    del phases[sj]


@given(st.integers(2, 12), st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_weighted_merge_matches_relabel_rule(n, seed):
    """Weighted merging gives the same physical state as the relabel-j rule."""
    rng = np.random.default_rng(seed)
    ks = [int(k) for k in rng.integers(0, 8, n)]
    s = init_product(n, [PhaseValue(k) for k in ks])
    labels, bits, phases = list(range(n)), [0] * n, dict(enumerate(ks))
    for _ in range(3 * n):
        i, j = (int(v) for v in rng.choice(n, 2, replace=False))
        lam = s.measure_zz(i, j, rng=rng).lam
        _paper_zz(labels, bits, phases, i, j, lam)
    # same partition
    part = {}
    for site, c in enumerate(s.label):
        part.setdefault(int(c), set()).add(site)
    ref = {}
    for site, c in enumerate(labels):
        ref.setdefault(c, set()).add(site)
    assert sorted(map(sorted, part.values())) == sorted(map(sorted, ref.values()))
    # same state up to global phase
    for c, members in part.items():
        m = sorted(members)
        rc = labels[m[0]]
        mine = PhaseValue(int(s.pk[c]))
        theirs = PhaseValue(phases[rc])
        same_ref = [int(s.bit[x]) for x in m] == [bits[x] for x in m]
        assert mine == (theirs if same_ref else -theirs)


@given(st.integers(2, 48), st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_parity_mode_matches_full_mode(n, seed):
    rng = np.random.default_rng(seed)
    full = init_product(n, [T] * n)
    par = ParityState(n)
    for _ in range(6 * n):
        if rng.random() < 0.5:
            i, j = (int(v) for v in rng.choice(n, 2, replace=False))
            full.measure_zz(i, j, rng=rng)
            par.measure_zz(i, j)
        else:
            site = int(rng.integers(n))
            full.measure_x(site, T, rng=rng)
            par.measure_x(site)
    # identical partitions and phase classes
    lf, lp = full.labels(), par.labels()
    assert np.array_equal(lf[:, None] == lf[None, :], lp[:, None] == lp[None, :])
    for site in range(n):
        assert full.canonical_phase(lf[site]).value % 2 == par.canonical_phase(lp[site]).value
