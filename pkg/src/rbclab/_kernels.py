"""Numba kernels for the cluster state machine.

Two storage layouts are supported:

* full mode keeps, per site, a cluster label and a reference bit, and per
  cluster a size, a phase and a doubly linked member list.  Clusters are
  merged smaller-into-larger so only the smaller member list is relabelled.
* parity mode keeps only connectivity and live cluster sizes in a union-find
  forest.  Detaching a site abandons its old node (a "ghost" that keeps the
  tree intact) and gives the site a fresh node; the forest is compacted when
  the node pool runs low.

Phases live in ``pk`` (integer units of pi/4, mod 8) when ``exact`` is true and
in ``pr`` (radians, mod 2*pi) otherwise.

Updates are applied in batches (one measurement row per call).  Numba inserts
atomic refcount operations around array arguments of small helpers it cannot
prune, so the per-event logic lives inside the batch loops and only scalar
helpers are called per event.

A circuit step draws random numbers in a fixed order: edge inclusion, ZZ
outcomes, site inclusion, angles, X outcomes.  Both layouts consume identical
streams and can be coupled.
"""

import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi

SCHEME_FIXED = 0
SCHEME_DILUTE = 1
SCHEME_RANDOM = 2
SCHEME_SITE = 3

_JIT = dict(nogil=True, cache=True)


@njit(**_JIT)
def wrap_real(x):
    x = x % TWO_PI
    if x >= TWO_PI:
        x -= TWO_PI
    return x


@njit(**_JIT)
def x_plus_prob(exact, size, b, phk, phr, tk, tr):
    """Born weight of lambda=+1 for a rotated-X measurement (scalars only)."""
    if size >= 2:
        return 0.5
    if exact:
        phi = phk if b == 0 else -phk
        d = (phi - tk) % 8
        if d == 0:
            return 1.0
        if d == 4:
            return 0.0
        return math.cos(d * math.pi / 8.0) ** 2
    phi = phr if b == 0 else -phr
    return math.cos(0.5 * (phi - tr)) ** 2


# --------------------------------------------------------------------------
# full mode
# --------------------------------------------------------------------------


@njit(**_JIT)
def apply_x(label, bit, size, pk, pr, head, nxt, prv, free, meta, exact,
            sites, tk, tr, u, forced, lam_out, prob_out):
    """Apply rotated-X measurements ``sites[k]`` at angles ``tk/tr[k]``.

    ``forced[k]`` of 0 samples lambda from ``u[k]``; +-1 forces it.  The
    realised lambda and its Born probability are written to the out arrays.
    A forced outcome of zero weight writes lambda 0 and stops the batch,
    leaving that event unapplied; the return value is the number of events
    applied.
    """
    for k in range(sites.shape[0]):
        site = sites[k]
        c = label[site]
        pplus = x_plus_prob(exact, size[c], bit[site], pk[c], pr[c],
                            tk[k], tr[k])
        if forced[k] == 0:
            lam = 1 if u[k] < pplus else -1
        else:
            lam = forced[k]
        prob = pplus if lam == 1 else 1.0 - pplus
        if prob <= 0.0:
            lam_out[k] = 0
            prob_out[k] = 0.0
            return k
        lam_out[k] = lam
        prob_out[k] = prob
        flip = 1 if lam == -1 else 0
        if size[c] == 1:
            bit[site] = 0
            if exact:
                pk[c] = (tk[k] + 4 * flip) % 8
            else:
                pr[c] = wrap_real(tr[k] + math.pi * flip)
            continue

        a = prv[site]
        b = nxt[site]
        if a >= 0:
            nxt[a] = b
        else:
            head[c] = b
        if b >= 0:
            prv[b] = a
        size[c] -= 1
        sign = 1 if bit[site] == 0 else -1
        if exact:
            pk[c] = (pk[c] - sign * tk[k] + 4 * flip) % 8
        else:
            pr[c] = wrap_real(pr[c] - sign * tr[k] + math.pi * flip)

        meta[0] -= 1
        new = free[meta[0]]
        label[site] = new
        size[new] = 1
        head[new] = site
        nxt[site] = -1
        prv[site] = -1
        bit[site] = 0
        if exact:
            pk[new] = (tk[k] + 4 * flip) % 8
        else:
            pr[new] = wrap_real(tr[k] + math.pi * flip)
    return sites.shape[0]


@njit(**_JIT)
def apply_zz(label, bit, size, pk, pr, head, nxt, prv, free, meta, exact,
             pairs, u, forced, lam_out, prob_out):
    """Apply Z_i Z_j measurements for each row ``(i, j)`` of ``pairs``.

    Same conventions as :func:`apply_x`.  Distinct clusters merge into the
    larger one; on an outcome mismatch the absorbed member bits flip and the
    merged phase is ``p_keep - p_absorbed``.
    """
    for k in range(pairs.shape[0]):
        i = pairs[k, 0]
        j = pairs[k, 1]
        ci = label[i]
        cj = label[j]
        par = bit[i] ^ bit[j]
        if ci == cj:
            lam = 1 - 2 * par
            if forced[k] != 0 and forced[k] != lam:
                lam_out[k] = 0
                prob_out[k] = 0.0
                return k
            lam_out[k] = lam
            prob_out[k] = 1.0
            continue
        if forced[k] == 0:
            lam = 1 if u[k] < 0.5 else -1
        else:
            lam = forced[k]
        lam_out[k] = lam
        prob_out[k] = 0.5
        if size[ci] >= size[cj]:
            keep = ci
            gone = cj
        else:
            keep = cj
            gone = ci
        match = lam == 1 - 2 * par
        if exact:
            if match:
                pk[keep] = (pk[keep] + pk[gone]) % 8
            else:
                pk[keep] = (pk[keep] - pk[gone]) % 8
        else:
            if match:
                pr[keep] = wrap_real(pr[keep] + pr[gone])
            else:
                pr[keep] = wrap_real(pr[keep] - pr[gone])

        s = head[gone]
        last = s
        while s >= 0:
            label[s] = keep
            if not match:
                bit[s] ^= 1
            last = s
            s = nxt[s]
        h = head[keep]
        nxt[last] = h
        prv[h] = last
        head[keep] = head[gone]

        size[keep] += size[gone]
        size[gone] = 0
        head[gone] = -1
        free[meta[0]] = gone
        meta[0] += 1
    return pairs.shape[0]


@njit(**_JIT)
def _draw_row(rng, n_items, prob, buf):
    m = 0
    for e in range(n_items):
        if rng.random() < prob:
            buf[m] = e
            m += 1
    return m


@njit(**_JIT)
def _draw_angles(rng, ns, scheme, theta_k, theta_r, q, site_on, sbuf, ak, ar):
    for k in range(ns):
        if scheme == SCHEME_FIXED or (scheme == SCHEME_SITE
                                      and site_on[sbuf[k]]):
            ak[k] = theta_k
            ar[k] = theta_r
        elif scheme == SCHEME_DILUTE:
            if rng.random() < q:
                ak[k] = theta_k
                ar[k] = theta_r
            else:
                ak[k] = 0
                ar[k] = 0.0
        elif scheme == SCHEME_RANDOM:
            ak[k] = 0
            ar[k] = TWO_PI * rng.random()
        else:
            ak[k] = 0
            ar[k] = 0.0


@njit(**_JIT)
def _draw_uniform(rng, m, out):
    for k in range(m):
        out[k] = rng.random()


@njit(**_JIT)
def run_steps_full(label, bit, size, pk, pr, head, nxt, prv, free, meta,
                   exact, edges, n_steps, p, scheme, theta_k, theta_r, q,
                   site_on, rng, counts):
    """Advance ``n_steps`` circuit steps in place; ``counts`` gets (zz, x).

    ``site_on`` flags the sites measured at ``theta`` under the per-site
    dilute scheme (all other sites use angle 0); other schemes ignore it.
    """
    n = label.shape[0]
    n_edges = edges.shape[0]
    ebuf = np.empty(n_edges, np.int64)
    sbuf = np.empty(n, np.int64)
    pairs = np.empty((n_edges, 2), np.int64)
    ak = np.empty(n, np.int64)
    ar = np.empty(n, np.float64)
    u = np.empty(max(n, n_edges), np.float64)
    forced = np.zeros(max(n, n_edges), np.int64)
    lam = np.empty(max(n, n_edges), np.int64)
    prob = np.empty(max(n, n_edges), np.float64)
    for _ in range(n_steps):
        ne = _draw_row(rng, n_edges, 1.0 - p, ebuf)
        for k in range(ne):
            pairs[k, 0] = edges[ebuf[k], 0]
            pairs[k, 1] = edges[ebuf[k], 1]
        _draw_uniform(rng, ne, u)
        apply_zz(label, bit, size, pk, pr, head, nxt, prv, free, meta, exact,
                 pairs[:ne], u[:ne], forced[:ne], lam[:ne], prob[:ne])
        ns = _draw_row(rng, n, p, sbuf)
        _draw_angles(rng, ns, scheme, theta_k, theta_r, q, site_on, sbuf, ak,
                     ar)
        _draw_uniform(rng, ns, u)
        apply_x(label, bit, size, pk, pr, head, nxt, prv, free, meta, exact,
                sbuf[:ns], ak[:ns], ar[:ns], u[:ns], forced[:ns], lam[:ns],
                prob[:ns])
        counts[0] += ne
        counts[1] += ns


# --------------------------------------------------------------------------
# parity mode
# --------------------------------------------------------------------------


@njit(**_JIT)
def uf_find(parent, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


@njit(**_JIT)
def uf_compact(node, parent, usize, meta):
    """Rebuild the forest on nodes 0..n-1, dropping ghost nodes."""
    n = node.shape[0]
    rep = np.full(parent.shape[0], -1, np.int64)
    roots = np.empty(n, np.int64)
    for s in range(n):
        roots[s] = uf_find(parent, node[s])
    for s in range(n):
        r = roots[s]
        if rep[r] < 0:
            rep[r] = s
    counts = np.zeros(n, np.int64)
    for s in range(n):
        counts[rep[roots[s]]] += 1
    for s in range(n):
        parent[s] = rep[roots[s]]
        node[s] = s
        usize[s] = counts[s]
    meta[0] = n


@njit(**_JIT)
def parity_apply_x(node, parent, usize, meta, sites):
    if meta[0] + sites.shape[0] > parent.shape[0]:
        uf_compact(node, parent, usize, meta)
    for k in range(sites.shape[0]):
        site = sites[k]
        r = node[site]
        while parent[r] != r:
            parent[r] = parent[parent[r]]
            r = parent[r]
        if usize[r] == 1:
            continue
        usize[r] -= 1
        m = meta[0]
        meta[0] += 1
        parent[m] = m
        usize[m] = 1
        node[site] = m


@njit(**_JIT)
def parity_apply_zz(node, parent, usize, pairs):
    for k in range(pairs.shape[0]):
        ri = node[pairs[k, 0]]
        while parent[ri] != ri:
            parent[ri] = parent[parent[ri]]
            ri = parent[ri]
        rj = node[pairs[k, 1]]
        while parent[rj] != rj:
            parent[rj] = parent[parent[rj]]
            rj = parent[rj]
        if ri == rj:
            continue
        if usize[ri] < usize[rj]:
            ri, rj = rj, ri
        parent[rj] = ri
        usize[ri] += usize[rj]


@njit(**_JIT)
def run_steps_parity(node, parent, usize, meta, edges, n_steps, p, rng,
                     counts):
    """Parity-mode twin of :func:`run_steps_full` with the same draw order."""
    n = node.shape[0]
    n_edges = edges.shape[0]
    ebuf = np.empty(n_edges, np.int64)
    sbuf = np.empty(n, np.int64)
    pairs = np.empty((n_edges, 2), np.int64)
    for _ in range(n_steps):
        ne = _draw_row(rng, n_edges, 1.0 - p, ebuf)
        for k in range(ne):
            pairs[k, 0] = edges[ebuf[k], 0]
            pairs[k, 1] = edges[ebuf[k], 1]
        for k in range(ne):
            rng.random()
        parity_apply_zz(node, parent, usize, pairs[:ne])
        ns = _draw_row(rng, n, p, sbuf)
        for k in range(ns):
            rng.random()
        parity_apply_x(node, parent, usize, meta, sbuf[:ns])
        counts[0] += ne
        counts[1] += ns


@njit(**_JIT)
def parity_labels(node, parent, out_label, out_size):
    """Write labels in [0, n) (lowest member site) and per-label sizes."""
    n = node.shape[0]
    out_size[:] = 0
    rep = np.full(parent.shape[0], -1, np.int64)
    for s in range(n):
        r = uf_find(parent, node[s])
        if rep[r] < 0:
            rep[r] = s
        out_label[s] = rep[r]
        out_size[rep[r]] += 1


# --------------------------------------------------------------------------
# cut profiles
# --------------------------------------------------------------------------


@njit(**_JIT)
def span_profile_1d(label, weight):
    """Weighted count of clusters cut by each bipartition [0, l) | [l, n).

    Returns ``out`` of length n+1 with ``out[l]`` the sum of ``weight[c]``
    over clusters with members on both sides of the cut.
    """
    n = label.shape[0]
    lo = np.full(weight.shape[0], n, np.int64)
    hi = np.full(weight.shape[0], -1, np.int64)
    for s in range(n):
        c = label[s]
        if s < lo[c]:
            lo[c] = s
        if s > hi[c]:
            hi[c] = s
    diff = np.zeros(n + 2, np.float64)
    for c in range(weight.shape[0]):
        if hi[c] > lo[c]:
            # spans [0, l) iff lo < l <= hi
            diff[lo[c] + 1] += weight[c]
            diff[hi[c] + 1] -= weight[c]
    out = np.empty(n + 1, np.float64)
    acc = 0.0
    for ell in range(n + 1):
        acc += diff[ell]
        out[ell] = acc
    return out
