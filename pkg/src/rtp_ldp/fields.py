"""Macroscopic fields: densities on the two-layer torus and smooth tilt fields.

Layer indexing convention used throughout the package: layer 0 is the internal
state sigma = +1, layer 1 is sigma = -1.  Density values live at cell centers
x_i = (i + 1/2) / M of the periodic unit torus.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

SIGMA_VALUES = (1, -1)


def layer_of(sigma: int) -> int:
    if sigma == 1:
        return 0
    if sigma == -1:
        return 1
    raise ValueError(f"sigma must be +1 or -1, got {sigma}")


def cell_centers(grid_size: int) -> np.ndarray:
    return (np.arange(grid_size) + 0.5) / grid_size


@dataclass(frozen=True)
class DensityField:
    """Nonnegative density rho(x, sigma) sampled at cell centers.

    ``values`` has shape (M, 2) with column 0 holding the sigma = +1 layer.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 1:
            raise ValueError("density values must have shape (M, 2)")
        if np.any(v < 0):
            raise ValueError("density values must be nonnegative")
        object.__setattr__(self, "values", v)

    @property
    def grid_size(self) -> int:
        return self.values.shape[0]

    @property
    def dx(self) -> float:
        return 1.0 / self.grid_size

    @property
    def x(self) -> np.ndarray:
        return cell_centers(self.grid_size)

    def mass(self, sigma: int) -> float:
        return float(self.values[:, layer_of(sigma)].sum() * self.dx)

    def total_mass(self) -> float:
        return float(self.values.sum() * self.dx)

    def magnetization(self) -> float:
        total = self.values.sum()
        if total == 0.0:
            return 0.0
        return float((self.values[:, 0].sum() - self.values[:, 1].sum()) / total)

    def evaluate_at(self, x: np.ndarray, sigma: int) -> np.ndarray:
        """Piecewise-constant evaluation at arbitrary torus positions."""
        idx = np.floor(np.mod(x, 1.0) * self.grid_size).astype(int) % self.grid_size
        return self.values[idx, layer_of(sigma)]

    @classmethod
    def constant(cls, grid_size: int, plus: float, minus: float) -> "DensityField":
        v = np.empty((grid_size, 2))
        v[:, 0] = plus
        v[:, 1] = minus
        return cls(v)

    def coarsen(self, grid_size: int) -> "DensityField":
        """Block-average down to a coarser grid that divides this one."""
        if grid_size < 1 or self.grid_size % grid_size != 0:
            raise ValueError("coarse grid must divide the fine grid")
        block = self.grid_size // grid_size
        return DensityField(self.values.reshape(grid_size, block, 2).mean(axis=1))


def magnetization_of_density(rho: DensityField) -> float:
    """(mass(+1) - mass(-1)) / total mass, 0 for the empty field."""
    return rho.magnetization()


@dataclass(frozen=True)
class DensityTrajectory:
    """Time-indexed densities on a uniform grid 0 = t_0 < ... < t_K.

    ``fields`` has shape (K+1, M, 2).  Solver and simulator outputs conserve
    total mass along the trajectory; synthetic inputs need not, so
    conservation is a diagnostic (``mass_drift``) rather than a constructor
    constraint.
    """

    t_grid: np.ndarray
    fields: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t_grid, dtype=float)
        f = np.asarray(self.fields, dtype=float)
        if t.ndim != 1 or t.size < 1:
            raise ValueError("t_grid must be a 1-d array")
        if f.ndim != 3 or f.shape[0] != t.size or f.shape[2] != 2:
            raise ValueError("fields must have shape (len(t_grid), M, 2)")
        if t.size > 1:
            steps = np.diff(t)
            if np.any(steps <= 0):
                raise ValueError("t_grid must increase strictly")
            if np.max(np.abs(steps - steps[0])) > 1e-9 * max(steps[0], 1e-30):
                raise ValueError("t_grid must be uniformly spaced")
        object.__setattr__(self, "t_grid", t)
        object.__setattr__(self, "fields", f)

    @property
    def n_slices(self) -> int:
        return self.t_grid.size

    @property
    def grid_size(self) -> int:
        return self.fields.shape[1]

    @property
    def dx(self) -> float:
        return 1.0 / self.grid_size

    @property
    def dt(self) -> float:
        if self.t_grid.size < 2:
            return 0.0
        return float(self.t_grid[1] - self.t_grid[0])

    @property
    def t_final(self) -> float:
        return float(self.t_grid[-1])

    def slice(self, k: int) -> DensityField:
        return DensityField(self.fields[k])

    def masses(self) -> np.ndarray:
        return self.fields.sum(axis=(1, 2)) * self.dx

    def mass_drift(self) -> float:
        m = self.masses()
        scale = max(abs(m[0]), 1e-300)
        return float(np.max(np.abs(m - m[0])) / scale)

    def magnetization_series(self) -> np.ndarray:
        totals = self.fields.sum(axis=(1, 2))
        diff = self.fields[:, :, 0].sum(axis=1) - self.fields[:, :, 1].sum(axis=1)
        out = np.zeros_like(totals)
        nz = totals > 0
        out[nz] = diff[nz] / totals[nz]
        return out


def regularize_trajectory(traj: DensityTrajectory, epsilon: float) -> DensityTrajectory:
    """Mix with the flat unit density: rho -> (1-eps) rho + eps.

    eps = 0 is allowed as the identity boundary case; eps in (0, 1) makes
    every cell strictly positive.
    """
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"epsilon must lie in [0, 1), got {epsilon}")
    if epsilon == 0.0:
        return traj
    return DensityTrajectory(traj.t_grid.copy(), (1.0 - epsilon) * traj.fields + epsilon)


# ---------------------------------------------------------------------------
# initial profiles


@dataclass(frozen=True)
class UniformProfile:
    """Layer-wise constant density."""

    plus: float
    minus: float

    def evaluate(self, x: np.ndarray, sigma: int) -> np.ndarray:
        level = self.plus if sigma == 1 else self.minus
        return np.full_like(np.asarray(x, dtype=float), float(level))

    def to_density_field(self, grid_size: int) -> DensityField:
        return DensityField.constant(grid_size, self.plus, self.minus)

    def to_json(self) -> dict:
        return {"kind": "uniform", "plus": self.plus, "minus": self.minus}


@dataclass(frozen=True)
class SineProfile:
    """mean + amp*sin(2 pi x) on the named layer, constant mean elsewhere."""

    mean: float
    amp: float
    layer: str = "plus"

    def __post_init__(self):
        if self.layer not in ("plus", "minus"):
            raise ValueError("layer must be 'plus' or 'minus'")
        if abs(self.amp) > self.mean:
            raise ValueError("profile would be negative")

    def evaluate(self, x: np.ndarray, sigma: int) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        target = 1 if self.layer == "plus" else -1
        if sigma == target:
            return self.mean + self.amp * np.sin(2.0 * np.pi * x)
        return np.full_like(x, self.mean)

    def to_density_field(self, grid_size: int) -> DensityField:
        xs = cell_centers(grid_size)
        v = np.stack([self.evaluate(xs, 1), self.evaluate(xs, -1)], axis=1)
        return DensityField(v)

    def to_json(self) -> dict:
        return {"kind": "sine", "mean": self.mean, "amp": self.amp, "layer": self.layer}


def profile_from_json(doc: dict):
    kind = doc.get("kind")
    if kind == "uniform":
        return UniformProfile(float(doc["plus"]), float(doc["minus"]))
    if kind == "sine":
        return SineProfile(float(doc["mean"]), float(doc["amp"]), doc.get("layer", "plus"))
    if kind == "grid":
        return DensityField(np.asarray(doc["values"], dtype=float))
    raise ValueError(f"unknown profile kind {kind!r}")


def profile_to_json(profile) -> dict:
    if isinstance(profile, DensityField):
        return {"kind": "grid", "values": profile.values.tolist()}
    return profile.to_json()


# ---------------------------------------------------------------------------
# smooth perturbation fields


@dataclass(frozen=True)
class FourierMode:
    """One wavenumber with polynomial-in-time cos/sin amplitudes.

    Coefficient arrays are ordered constant-first: amp(t) = sum_p c[p] t**p.
    """

    k: int
    cos: tuple = ()
    sin: tuple = ()

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("wavenumber must be a nonnegative integer")
        object.__setattr__(self, "cos", tuple(float(c) for c in self.cos))
        object.__setattr__(self, "sin", tuple(float(c) for c in self.sin))


def _polyval(coeffs: tuple, t: float) -> float:
    acc = 0.0
    for c in reversed(coeffs):
        acc = acc * t + c
    return acc


def _polyder(coeffs: tuple) -> tuple:
    return tuple(p * c for p, c in enumerate(coeffs) if p > 0)


@dataclass(frozen=True)
class PerturbationField:
    """Smooth potential H(t, x, sigma) as a finite Fourier sum per layer.

    Evaluation, time and space derivatives, and the layer difference
    Htilde(t, x) = H(t, x, +1) - H(t, x, -1) are all analytic.
    """

    plus: tuple = ()
    minus: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "plus", tuple(self.plus))
        object.__setattr__(self, "minus", tuple(self.minus))

    @classmethod
    def zero(cls) -> "PerturbationField":
        return cls()

    @classmethod
    def single_mode(cls, k: int, cos_amp: float = 0.0, sin_amp: float = 0.0,
                    layer: str = "plus") -> "PerturbationField":
        mode = FourierMode(k, cos=(cos_amp,) if cos_amp else (), sin=(sin_amp,) if sin_amp else ())
        if layer == "plus":
            return cls(plus=(mode,))
        if layer == "minus":
            return cls(minus=(mode,))
        raise ValueError("layer must be 'plus' or 'minus'")

    def _modes(self, sigma: int):
        return self.plus if sigma == 1 else self.minus

    def is_zero(self) -> bool:
        return not self.plus and not self.minus

    def is_time_constant(self) -> bool:
        for modes in (self.plus, self.minus):
            for mode in modes:
                if len(mode.cos) > 1 or len(mode.sin) > 1:
                    return False
        return True

    def evaluate(self, t: float, x, sigma: int):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for mode in self._modes(sigma):
            ang = 2.0 * np.pi * mode.k * x
            if mode.cos:
                out += _polyval(mode.cos, t) * np.cos(ang)
            if mode.sin:
                out += _polyval(mode.sin, t) * np.sin(ang)
        return out

    def d_dt(self, t: float, x, sigma: int):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for mode in self._modes(sigma):
            ang = 2.0 * np.pi * mode.k * x
            dc = _polyder(mode.cos)
            ds = _polyder(mode.sin)
            if dc:
                out += _polyval(dc, t) * np.cos(ang)
            if ds:
                out += _polyval(ds, t) * np.sin(ang)
        return out

    def d_dx(self, t: float, x, sigma: int):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for mode in self._modes(sigma):
            w = 2.0 * np.pi * mode.k
            ang = w * x
            if mode.cos:
                out -= _polyval(mode.cos, t) * w * np.sin(ang)
            if mode.sin:
                out += _polyval(mode.sin, t) * w * np.cos(ang)
        return out

    def tilde(self, t: float, x):
        """H(t, x, +1) - H(t, x, -1)."""
        return self.evaluate(t, x, 1) - self.evaluate(t, x, -1)

    def sup_bound(self, t_final: float, sigma: int) -> float:
        """Coefficient bound on sup_{t<=T, x} |H(t, x, sigma)|."""
        total = 0.0
        for mode in self._modes(sigma):
            for coeffs in (mode.cos, mode.sin):
                total += sum(abs(c) * t_final ** p for p, c in enumerate(coeffs))
        return total

    def to_json(self) -> dict:
        def dump(modes):
            return [{"k": m.k, "cos": list(m.cos), "sin": list(m.sin)} for m in modes]

        return {"sigma_plus": dump(self.plus), "sigma_minus": dump(self.minus)}

    @classmethod
    def from_json(cls, doc: dict) -> "PerturbationField":
        def load(items: Iterable[dict]):
            return tuple(FourierMode(int(d["k"]), tuple(d.get("cos", ())), tuple(d.get("sin", ())))
                         for d in items)

        return cls(plus=load(doc.get("sigma_plus", ())), minus=load(doc.get("sigma_minus", ())))
