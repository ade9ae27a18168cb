"""Chain and square lattices with nearest-neighbour edges."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError


@dataclass(frozen=True)
class LatticeSpec:
    """``dim`` 1 (chain of ``L`` sites) or 2 (``L x L`` square, row-major)."""

    dim: int
    L: int
    periodic: bool = True

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigError(f"unsupported lattice dimension {self.dim}")
        if self.L < 2:
            raise ConfigError("lattice length must be at least 2")

    @property
    def n_sites(self) -> int:
        return self.L ** self.dim

    @property
    def boundary(self) -> str:
        return "periodic" if self.periodic else "open"

    def sites(self) -> np.ndarray:
        return np.arange(self.n_sites, dtype=np.int64)

    def edges(self) -> np.ndarray:
        return build_lattice(self)[1]

    def half_region(self) -> np.ndarray:
        """First half of the sites: ``[0, L/2)`` in 1D, ``L x L/2`` rows in 2D."""
        return np.arange(self.n_sites // 2, dtype=np.int64)

    def block(self, lx: int, ly: int | None = None) -> np.ndarray:
        """Sites of the ``lx x ly`` rectangle anchored at the origin."""
        if self.dim == 1:
            return np.arange(lx, dtype=np.int64)
        ly = lx if ly is None else ly
        rows, cols = np.meshgrid(np.arange(ly), np.arange(lx), indexing="ij")
        return (rows * self.L + cols).ravel().astype(np.int64)

    def three_part(self):
        """Partition A | B | C with ``|A| = |C| = n/4`` and ``|B| = n/2``."""
        n = self.n_sites
        qa = n // 4
        qc = n - n // 4
        s = self.sites()
        return s[:qa], s[qa:qc], s[qc:]


def build_lattice(spec: LatticeSpec) -> tuple[np.ndarray, np.ndarray]:
    """Sites and edges in canonical order.

    1D edges are ``(i, i+1)`` in order of ``i`` (plus ``(L-1, 0)`` when
    periodic).  2D edges visit sites row-major and emit the right neighbour
    then the down neighbour.
    """
    L = spec.L
    if spec.dim == 1:
        i = np.arange(L if spec.periodic else L - 1)
        edges = np.stack([i, (i + 1) % L], axis=1)
    else:
        out = []
        for r in range(L):
            for c in range(L):
                s = r * L + c
                if c + 1 < L or spec.periodic:
                    out.append((s, r * L + (c + 1) % L))
                if r + 1 < L or spec.periodic:
                    out.append((s, ((r + 1) % L) * L + c))
        edges = np.array(out)
    return spec.sites(), edges.astype(np.int64).reshape(-1, 2)
