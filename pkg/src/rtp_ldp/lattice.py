"""Microscopic particle configurations on the two-layer discrete torus."""
from __future__ import annotations

import numpy as np

from .fields import DensityField


class LatticeConfiguration:
    """Occupation numbers eta(x, sigma) on N sites, with cached totals.

    ``counts`` has shape (N, 2); column 0 is the sigma = +1 layer.  This is
    the one mutable type in the package: the simulator updates it in place
    and keeps the cached class totals consistent.
    """

    __slots__ = ("counts", "n_plus", "n_minus")

    def __init__(self, counts: np.ndarray):
        counts = np.ascontiguousarray(counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[1] != 2 or counts.shape[0] < 1:
            raise ValueError("counts must have shape (N, 2)")
        if np.any(counts < 0):
            raise ValueError("occupation numbers must be nonnegative")
        self.counts = counts
        self.n_plus = int(counts[:, 0].sum())
        self.n_minus = int(counts[:, 1].sum())

    @classmethod
    def empty(cls, n_sites: int) -> "LatticeConfiguration":
        return cls(np.zeros((n_sites, 2), dtype=np.int64))

    @property
    def n_sites(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return self.n_plus + self.n_minus

    def magnetization(self) -> float:
        if self.total == 0:
            return 0.0
        return (self.n_plus - self.n_minus) / self.total

    def copy(self) -> "LatticeConfiguration":
        return LatticeConfiguration(self.counts.copy())

    def __eq__(self, other) -> bool:
        return isinstance(other, LatticeConfiguration) and np.array_equal(self.counts, other.counts)

    def __repr__(self) -> str:
        return f"LatticeConfiguration(N={self.n_sites}, n+={self.n_plus}, n-={self.n_minus})"


def magnetization_of_configuration(cfg: LatticeConfiguration) -> float:
    """(n(+1) - n(-1)) / |eta|, with the empty-configuration convention 0."""
    return cfg.magnetization()


def empirical_density(cfg: LatticeConfiguration, grid_size: int) -> DensityField:
    """Bin eta/N into ``grid_size`` cells of the unit torus.

    The binned field integrates exactly to |eta| / N.  ``grid_size`` must
    divide the number of sites so that binning needs no interpolation.
    """
    n = cfg.n_sites
    if grid_size < 1 or n % grid_size != 0:
        raise ValueError(f"grid size {grid_size} must divide n_sites {n}")
    block = n // grid_size
    binned = cfg.counts.reshape(grid_size, block, 2).sum(axis=1)
    # value * dx must equal count / N, hence the factor grid_size / N
    return DensityField(binned.astype(float) * (grid_size / n))
