"""Repulsive pair potentials and the N-body costs built from them.

A cost is ``c(x_1, ..., x_N) = sum_{i<j} phi(|x_i - x_j|)`` with ``phi``
continuous, nonnegative, strictly decreasing and blowing up at 0.  The
truncation at level ``alpha`` clamps every pair term at ``phi(alpha)``.
Infinite values are plain IEEE ``inf``: it absorbs addition and compares
above every finite number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .errors import DomainError, PreconditionError
from .jsonio import parse_real

INF = math.inf


def _as_array(t):
    arr = np.asarray(t, dtype=np.float64)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainError("distances must be nonnegative")
    return arr


def _out(arr, scalar):
    return float(arr) if scalar else arr


@dataclass(frozen=True)
class RepulsiveCost:
    """Common interface of the pair-potential families."""

    truncation: Optional[float] = field(default=None, kw_only=True)

    def _phi(self, t: np.ndarray) -> np.ndarray:  # t > 0
        raise NotImplementedError

    def _phi_inv(self, v: float) -> float:
        raise NotImplementedError

    def phi(self, t):
        """Pair potential; ``inf`` at distance 0."""
        scalar = np.ndim(t) == 0
        arr = _as_array(t)
        out = np.full(arr.shape, INF)
        pos = arr > 0
        out[pos] = self._phi(arr[pos])
        return _out(out, scalar)

    def phi_truncated(self, t, alpha=None):
        """``min(phi(t), phi(alpha))``; uses the stored truncation by default."""
        alpha = self._level(alpha)
        scalar = np.ndim(t) == 0
        out = np.minimum(self.phi(np.asarray(t, dtype=float)), self.phi(alpha))
        return _out(out, scalar)

    def pair_phi(self, t, truncated: bool):
        return self.phi_truncated(t) if truncated else self.phi(t)

    def phi_inverse(self, v: float) -> float:
        v = float(v)
        if not (v > 0 and math.isfinite(v)):
            raise DomainError(f"value {v} is outside the range of phi")
        return self._phi_inv(v)

    def _level(self, alpha):
        alpha = self.truncation if alpha is None else alpha
        if alpha is None:
            raise PreconditionError("cost has no truncation level")
        if not alpha > 0:
            raise DomainError(f"truncation level must be positive, got {alpha}")
        return float(alpha)

    def truncated(self, alpha: float) -> "RepulsiveCost":
        return replace(self, truncation=self._level(alpha))

    def untruncated(self) -> "RepulsiveCost":
        return replace(self, truncation=None)

    def lipschitz_bound(self, t: float) -> float:
        raise DomainError(f"{type(self).__name__} is not a differentiable family")

    def semiconcavity_bound(self, t: float) -> float:
        raise DomainError(f"{type(self).__name__} is not a C^2 family")

    def descriptor(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class PowerLawCost(RepulsiveCost):
    """``phi(t) = t^(-s)``; ``s = 1`` is the Coulomb interaction."""

    exponent: float = 1.0

    def __post_init__(self):
        if not self.exponent > 0:
            raise DomainError(f"exponent must be positive, got {self.exponent}")
        if self.truncation is not None:
            self._level(self.truncation)

    def _phi(self, t):
        return t ** (-self.exponent)

    def _phi_inv(self, v):
        return v ** (-1.0 / self.exponent)

    def lipschitz_bound(self, t: float) -> float:
        """``sup_{r > t} |phi'(r)| = s t^(-s-1)``."""
        if not t > 0:
            raise DomainError("t must be positive")
        s = self.exponent
        return s * t ** (-s - 1.0)

    def semiconcavity_bound(self, t: float) -> float:
        """``sup_{r > t} phi''(r) - phi'(r)/r = s (s+2) t^(-s-2)``."""
        if not t > 0:
            raise DomainError("t must be positive")
        e = self.exponent
        return e * (e + 2.0) * t ** (-e - 2.0)

    def descriptor(self) -> dict:
        return {"kind": "power", "exponent": self.exponent, "truncation": self.truncation}


@dataclass(frozen=True)
class TabulatedCost(RepulsiveCost):
    """Monotone cubic (PCHIP) interpolation of a strictly decreasing table.

    Outside the table the potential continues as ``phi_k t_k / t``, which
    keeps it strictly decreasing, positive, and singular at 0.
    """

    points: tuple = ()
    _spline: object = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        pts = tuple((float(t), float(v)) for t, v in self.points)
        if len(pts) < 2:
            raise DomainError("a cost table needs at least two points")
        t = np.array([p[0] for p in pts])
        v = np.array([p[1] for p in pts])
        if np.any(t <= 0) or np.any(np.diff(t) <= 0):
            raise DomainError("table abscissae must be positive and strictly increasing")
        if np.any(v <= 0) or np.any(np.diff(v) >= 0):
            raise DomainError("table values must be positive and strictly decreasing")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "_spline", PchipInterpolator(t, v, extrapolate=False))
        if self.truncation is not None:
            self._level(self.truncation)

    def _phi(self, t):
        t0, v0 = self.points[0]
        t1, v1 = self.points[-1]
        out = np.empty_like(t)
        lo, hi = t < t0, t > t1
        mid = ~(lo | hi)
        out[lo] = v0 * t0 / t[lo]
        out[hi] = v1 * t1 / t[hi]
        out[mid] = self._spline(t[mid])
        return out

    def _phi_inv(self, v):
        t0, v0 = self.points[0]
        t1, v1 = self.points[-1]
        if v >= v0:
            return v0 * t0 / v
        if v <= v1:
            return v1 * t1 / v
        return brentq(lambda s: float(self._spline(s)) - v, t0, t1, xtol=1e-14, rtol=4 * np.finfo(float).eps)

    def descriptor(self) -> dict:
        return {"kind": "table", "points": [list(p) for p in self.points], "truncation": self.truncation}


def cost_from_descriptor(desc: dict) -> RepulsiveCost:
    """Inverse of :meth:`RepulsiveCost.descriptor`."""
    kind = desc.get("kind")
    trunc = desc.get("truncation")
    trunc = None if trunc is None else parse_real(trunc)
    if kind == "power":
        return PowerLawCost(truncation=trunc, exponent=parse_real(desc.get("exponent", 1.0)))
    if kind == "table":
        return TabulatedCost(truncation=trunc, points=tuple(tuple(map(parse_real, p)) for p in desc["points"]))
    raise DomainError(f"unknown cost kind {kind!r}")


def alpha_star(cost: RepulsiveCost, N: int, beta: float) -> float:
    """Separation radius ``phi^-1(N^2 (N-1)/2 * phi(beta))`` of optimal supports."""
    if N < 2:
        raise PreconditionError(f"need N >= 2, got {N}")
    if not beta > 0:
        raise DomainError("beta must be positive")
    return cost.phi_inverse(N * N * (N - 1) / 2.0 * cost.phi(beta))


def pairwise_cost(cost: RepulsiveCost, x, truncated: bool = False) -> float:
    """``sum_{i<j} phi(|x_i - x_j|)`` for one configuration of N points."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise DomainError("expected an (N, d) array of positions")
    if truncated:
        cost._level(None)
    i, j = np.triu_indices(len(x), 1)
    dist = np.linalg.norm(x[i] - x[j], axis=1)
    return float(np.sum(cost.pair_phi(dist, truncated)))


def pair_matrix(cost: RepulsiveCost, a, b, truncated: bool) -> np.ndarray:
    """Pair potential between every point of ``a`` and every point of ``b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-1] != b.shape[-1]:
        raise DomainError("dimension mismatch")
    diff = a[:, None, :] - b[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return np.asarray(cost.pair_phi(dist, truncated), dtype=float)


def cost_tensor(cost: RepulsiveCost, positions, N: int, truncated: bool) -> np.ndarray:
    """Dense ``m^N`` array of the N-body cost over atom index tuples."""
    phi = pair_matrix(cost, positions, positions, truncated)
    m = len(phi)
    total = np.zeros((m,) * N)
    for i in range(N):
        for j in range(i + 1, N):
            shape = [1] * N
            shape[i] = shape[j] = m
            total = total + phi.reshape(shape)
    return total
