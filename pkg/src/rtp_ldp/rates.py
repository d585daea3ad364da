"""Mean-field switch-rate families c(sigma, m) and their fixed points."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

KIND_CONSTANT = 0
KIND_CURIE_WEISS = 1
KIND_TABULATED = 2

_KIND_NAMES = {KIND_CONSTANT: "constant", KIND_CURIE_WEISS: "curie_weiss", KIND_TABULATED: "tabulated"}


@dataclass(frozen=True)
class SwitchRateFamily:
    """Flip-rate function c(sigma, m) on {-1,+1} x [-1,1].

    ``kind`` selects the functional form:

    * constant: c == 1,
    * curie_weiss: c(sigma, m) = exp(-sigma * beta * m),
    * tabulated: linear interpolation of per-layer samples on [-1, 1].

    ``c_min``/``c_max`` bound the rate from below (strictly positive) and
    above, and ``lipschitz`` bounds |c(s,m1)-c(s,m2)| / |m1-m2|.
    """

    kind: int
    beta: float = 0.0
    table_m: np.ndarray = field(default_factory=lambda: np.zeros(0))
    table_plus: np.ndarray = field(default_factory=lambda: np.zeros(0))
    table_minus: np.ndarray = field(default_factory=lambda: np.zeros(0))
    c_min: float = 1.0
    c_max: float = 1.0
    lipschitz: float = 0.0

    @classmethod
    def constant(cls) -> "SwitchRateFamily":
        return cls(kind=KIND_CONSTANT, c_min=1.0, c_max=1.0, lipschitz=0.0)

    @classmethod
    def curie_weiss(cls, beta: float) -> "SwitchRateFamily":
        if beta <= 0:
            raise ValueError(f"beta must be positive, got {beta}")
        return cls(
            kind=KIND_CURIE_WEISS,
            beta=float(beta),
            c_min=float(np.exp(-beta)),
            c_max=float(np.exp(beta)),
            lipschitz=float(beta * np.exp(beta)),
        )

    @classmethod
    def tabulated(cls, m_points: Sequence[float], values_plus: Sequence[float],
                  values_minus: Sequence[float]) -> "SwitchRateFamily":
        m = np.asarray(m_points, dtype=float)
        vp = np.asarray(values_plus, dtype=float)
        vm = np.asarray(values_minus, dtype=float)
        if m.ndim != 1 or m.size < 2:
            raise ValueError("tabulated family needs at least two sample points")
        if not (np.all(np.diff(m) > 0) and m[0] == -1.0 and m[-1] == 1.0):
            raise ValueError("sample points must increase strictly from -1 to 1")
        if vp.shape != m.shape or vm.shape != m.shape:
            raise ValueError("value arrays must match the sample points")
        c_min = float(min(vp.min(), vm.min()))
        if c_min <= 0:
            raise ValueError("tabulated rates must be strictly positive")
        c_max = float(max(vp.max(), vm.max()))
        slopes = [np.abs(np.diff(v) / np.diff(m)).max() for v in (vp, vm)]
        return cls(kind=KIND_TABULATED, table_m=m, table_plus=vp, table_minus=vm,
                   c_min=c_min, c_max=c_max, lipschitz=float(max(slopes)))

    def rate(self, sigma: int, m: float) -> float:
        return evaluate_switch_rate(self, sigma, m)

    def rate_array(self, sigma: int, m) -> np.ndarray:
        """Vectorised evaluation over an array of magnetizations."""
        m = np.asarray(m, dtype=float)
        if np.any(np.abs(m) > 1.0 + 1e-12):
            raise ValueError("magnetization outside [-1, 1]")
        if self.kind == KIND_CONSTANT:
            return np.ones_like(m)
        if self.kind == KIND_CURIE_WEISS:
            return np.exp(-sigma * self.beta * m)
        table = self.table_plus if sigma == 1 else self.table_minus
        return np.interp(m, self.table_m, table)

    def to_json(self) -> dict:
        if self.kind == KIND_CONSTANT:
            return {"kind": "constant"}
        if self.kind == KIND_CURIE_WEISS:
            return {"kind": "curie_weiss", "beta": self.beta}
        return {
            "kind": "tabulated",
            "m": self.table_m.tolist(),
            "plus": self.table_plus.tolist(),
            "minus": self.table_minus.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SwitchRateFamily":
        kind = doc.get("kind")
        if kind == "constant":
            return cls.constant()
        if kind == "curie_weiss":
            return cls.curie_weiss(float(doc["beta"]))
        if kind == "tabulated":
            return cls.tabulated(doc["m"], doc["plus"], doc["minus"])
        raise ValueError(f"unknown rate kind {kind!r}")


def evaluate_switch_rate(family: SwitchRateFamily, sigma: int, m: float) -> float:
    """Evaluate c(sigma, m); m outside [-1, 1] is a domain error."""
    if sigma not in (-1, 1):
        raise ValueError(f"sigma must be +1 or -1, got {sigma}")
    if not -1.0 - 1e-12 <= m <= 1.0 + 1e-12:
        raise ValueError(f"magnetization {m} outside [-1, 1]")
    if family.kind == KIND_CONSTANT:
        return 1.0
    if family.kind == KIND_CURIE_WEISS:
        return float(np.exp(-sigma * family.beta * m))
    table = family.table_plus if sigma == 1 else family.table_minus
    return float(np.interp(m, family.table_m, table))


def curie_weiss_magnetization_rhs(beta: float, m) -> np.ndarray:
    """Right side of the Curie-Weiss magnetization flow, 2sinh(bm)-2m cosh(bm)."""
    m = np.asarray(m, dtype=float)
    return 2.0 * np.sinh(beta * m) - 2.0 * m * np.cosh(beta * m)


def curie_weiss_fixed_points(beta: float, tol: float = 1e-9,
                             n_intervals: int = 2048) -> np.ndarray:
    """All solutions of m = tanh(beta*m) in [-1, 1], to absolute tolerance tol.

    Brackets sign changes of m - tanh(beta*m) on a fixed uniform partition and
    bisects each bracket.  Simple zeros away from the beta = 1 bifurcation are
    resolved for beta up to at least 50.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")

    def f(m):
        return m - np.tanh(beta * m)

    grid = np.linspace(-1.0, 1.0, n_intervals + 1)
    vals = f(grid)
    roots = [float(g) for g, v in zip(grid, vals) if v == 0.0]
    for a, b, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if fa == 0.0 or fb == 0.0 or fa * fb > 0:
            continue
        lo, hi, flo = float(a), float(b), float(fa)
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            fm = f(mid)
            if fm == 0.0:
                lo = hi = mid
                break
            if flo * fm < 0:
                hi = mid
            else:
                lo, flo = mid, fm
        roots.append(0.5 * (lo + hi))
    roots.sort()
    deduped: list[float] = []
    for r in roots:
        if not deduped or abs(r - deduped[-1]) > max(4.0 * tol, 1e-12):
            deduped.append(r)
    return np.array(deduped)
