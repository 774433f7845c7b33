"""Finitely supported probability measures and their concentration function.

The concentration of a measure at scale ``r`` is the largest mass it puts on
an open ball of radius ``r``.  For atomic measures on the line the supremum
over centres is found exactly with a sliding window; in higher dimension the
centre is searched among the minimal enclosing balls of small atom subsets,
which is also exact as long as the enumeration fits the budget.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Optional

import numpy as np
from scipy.optimize import linprog
from scipy.special import gamma

from . import _kernels
from .errors import DomainError, PreconditionError, SolverError
from .jsonio import parse_real

MERGE_TOL = 1e-12
WEIGHT_SUM_TOL = 1e-12
# subsets enumerated for exact concentration in dimension >= 2
CENTER_BUDGET = 200_000


def assumption_threshold(N: int) -> float:
    """Concentration level ``1 / (N (N-1)^2)`` that must not be reached."""
    if N < 2:
        raise PreconditionError(f"need N >= 2, got {N}")
    return 1.0 / (N * (N - 1) ** 2)


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Probability measure with finitely many atoms in R^d.

    Atoms closer than ``MERGE_TOL`` are merged by summing their weights.
    Arrays are stored read-only.
    """

    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64, copy=True)
        w = np.array(self.weights, dtype=np.float64, copy=True).reshape(-1)
        if pos.ndim == 1:
            pos = pos.reshape(-1, 1)
        if pos.ndim != 2 or pos.shape[0] != w.shape[0]:
            raise DomainError(f"positions {pos.shape} do not match weights {w.shape}")
        if pos.shape[0] == 0:
            raise DomainError("a measure needs at least one atom")
        if pos.shape[1] == 0:
            raise DomainError("dimension must be positive")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(w))):
            raise DomainError("positions and weights must be finite")
        if np.any(w <= 0):
            raise DomainError("all atom weights must be strictly positive")
        pos, w = _merge_duplicates(pos, w)
        if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise DomainError(f"weights sum to {w.sum()!r}, not 1")
        pos.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_atoms(cls, atoms, dimension=None):
        """Build from ``[(position, weight), ...]``."""
        pos = [np.atleast_1d(np.asarray(p, dtype=float)) for p, _ in atoms]
        if dimension is not None and any(len(p) != dimension for p in pos):
            raise DomainError("atom position does not match the declared dimension")
        return cls(np.array(pos), np.array([w for _, w in atoms], dtype=float))

    @classmethod
    def uniform(cls, positions):
        positions = np.asarray(positions, dtype=float)
        m = positions.shape[0]
        return cls(positions, np.full(m, 1.0 / m))

    @property
    def dimension(self) -> int:
        return self.positions.shape[1]

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    @property
    def max_weight(self) -> float:
        return float(self.weights.max())

    @cached_property
    def distance_matrix(self) -> np.ndarray:
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        dist.setflags(write=False)
        return dist

    def diameter(self) -> float:
        return float(self.distance_matrix.max())

    def min_spacing(self) -> float:
        if self.size < 2:
            return math.inf
        d = self.distance_matrix
        return float(d[np.triu_indices(self.size, 1)].min())

    def permuted(self, order) -> "DiscreteMeasure":
        order = np.asarray(order)
        return DiscreteMeasure(self.positions[order], self.weights[order])

    def to_json(self) -> dict:
        return {
            "dimension": self.dimension,
            "atoms": [
                {"position": [float(v) for v in p], "weight": float(w)}
                for p, w in zip(self.positions, self.weights)
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "DiscreteMeasure":
        try:
            d = int(data["dimension"])
            atoms = [(list(map(parse_real, a["position"])), parse_real(a["weight"])) for a in data["atoms"]]
        except (KeyError, TypeError) as exc:
            raise DomainError(f"malformed measure: {exc}") from exc
        return cls.from_atoms(atoms, dimension=d)

    def digest(self) -> str:
        """Short content hash, stable across runs and platforms."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.positions).tobytes())
        h.update(np.ascontiguousarray(self.weights).tobytes())
        return h.hexdigest()[:16]

    @cached_property
    def _center_table(self):
        return _build_center_table(self.positions)


def _merge_duplicates(pos, w):
    keep_pos, keep_w = [], []
    for p, wi in zip(pos, w):
        for k, q in enumerate(keep_pos):
            if np.max(np.abs(p - q)) <= MERGE_TOL:
                keep_w[k] += wi
                break
        else:
            keep_pos.append(p)
            keep_w.append(wi)
    return np.array(keep_pos), np.array(keep_w)


class Concentration(NamedTuple):
    value: float
    exact: bool


def _circumcenters(points, subsets):
    """Circumcentres of each subset inside its affine hull; None if degenerate."""
    p0 = points[subsets[:, 0]]
    V = points[subsets[:, 1:]] - p0[:, None, :]
    G = np.einsum("bid,bjd->bij", V, V)
    rhs = 0.5 * np.einsum("bii->bi", G)
    det = np.linalg.det(G)
    scale = np.prod(np.einsum("bii->bi", G), axis=1)
    ok = np.abs(det) > 1e-12 * np.maximum(scale, 1e-300)
    centers = np.full_like(p0, np.nan)
    if ok.any():
        lam = np.linalg.solve(G[ok], rhs[ok][..., None])[..., 0]
        centers[ok] = p0[ok] + np.einsum("bi,bid->bd", lam, V[ok])
    return centers[ok]


def _build_center_table(positions):
    """Distances from candidate ball centres to all atoms.

    Returns ``(sq_dist, exact)`` with one row per candidate centre.
    """
    m, d = positions.shape
    n_subsets = sum(math.comb(m, k) for k in range(1, min(d + 1, m) + 1))
    exact = n_subsets <= CENTER_BUDGET
    centers = [positions]
    if m >= 2:
        pairs = np.array(list(itertools.combinations(range(m), 2)))
        centers.append(0.5 * (positions[pairs[:, 0]] + positions[pairs[:, 1]]))
    if exact:
        for k in range(3, min(d + 1, m) + 1):
            subsets = np.array(list(itertools.combinations(range(m), k)))
            centers.append(_circumcenters(positions, subsets))
    C = np.concatenate(centers)
    diff = C[:, None, :] - positions[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    sq.setflags(write=False)
    return sq, exact


def concentration(rho: DiscreteMeasure, r: float) -> Concentration:
    """Largest mass of ``rho`` in an open ball of radius ``r``.

    Exact on the line.  In dimension >= 2 the value is exact when every
    subset of at most d+1 atoms could be enumerated, otherwise it is a lower
    bound and ``exact`` is False.
    """
    r = float(r)
    if not r > 0:
        raise DomainError(f"radius must be positive, got {r}")
    if rho.dimension == 1:
        order = np.argsort(rho.positions[:, 0], kind="stable")
        mass, _ = _kernels.window_mass_1d(rho.positions[order, 0], rho.weights[order], 2.0 * r)
        return Concentration(min(mass, 1.0), True)
    sq, exact = rho._center_table
    mass = (sq < r * r) @ rho.weights
    return Concentration(float(min(mass.max(), 1.0)), exact)


def concentration_upper(rho: DiscreteMeasure, r: float) -> float:
    """Certified upper bound: a ball of radius r meeting an atom lies in a 2r-ball around it."""
    if not r > 0:
        raise DomainError(f"radius must be positive, got {r}")
    mass = (rho.distance_matrix < 2.0 * r) @ rho.weights
    return float(min(mass.max(), 1.0))


@dataclass(frozen=True)
class ConcentrationProfile:
    radii: tuple
    values: tuple
    exact: tuple

    def __post_init__(self):
        if any(b < a for a, b in zip(self.radii, self.radii[1:])):
            raise DomainError("radii must be increasing")
        if any(b < a for a, b in zip(self.values, self.values[1:])):
            raise AssertionError("concentration must be nondecreasing in the radius")
        if any(v > 1.0 for v in self.values):
            raise AssertionError("concentration cannot exceed 1")


def concentration_profile(rho: DiscreteMeasure, radii) -> ConcentrationProfile:
    radii = tuple(float(r) for r in radii)
    results = [concentration(rho, r) for r in radii]
    return ConcentrationProfile(radii, tuple(c.value for c in results), tuple(c.exact for c in results))


def has_small_concentration(rho: DiscreteMeasure, N: int) -> bool:
    """Small concentration: the heaviest atom stays below ``1/(N(N-1)^2)``."""
    return rho.max_weight < assumption_threshold(N)


def find_beta(rho: DiscreteMeasure, N: int, rtol: float = 1e-9) -> Optional[float]:
    """Largest radius whose concentration stays strictly below ``1/(N(N-1)^2)``.

    Bisection on the radius; the returned value always satisfies the strict
    inequality.  ``None`` when an atom is already too heavy.  Where only a
    lower bound of the concentration is available, the certified upper bound
    is used instead, so the result may be conservative but never wrong.
    """
    tau = assumption_threshold(N)
    if rho.max_weight >= tau:
        return None

    def below(r):
        value, exact = concentration(rho, r)
        if not exact:
            value = concentration_upper(rho, r)
        return value < tau

    lo = 0.5 * rho.min_spacing()
    if not below(lo):
        # only reachable through the conservative upper bound
        lo *= 0.5
        while not below(lo):
            lo *= 0.5
            if lo < 1e-300:
                return None
    hi = 2.0 * rho.diameter() + 1.0
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if below(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _match_atoms(rho1, rho2):
    """Weights of both measures on the union of their supports."""
    w1 = list(rho1.weights)
    w2 = [0.0] * rho1.size
    extra = []
    for p, w in zip(rho2.positions, rho2.weights):
        hit = np.flatnonzero(np.max(np.abs(rho1.positions - p), axis=1) <= MERGE_TOL)
        if hit.size:
            w2[hit[0]] += w
        else:
            extra.append((p, w))
    points = [p for p in rho1.positions] + [p for p, _ in extra]
    w1 += [0.0] * len(extra)
    w2 += [w for _, w in extra]
    return np.array(points), np.array(w1), np.array(w2)


def l1_distance(rho1: DiscreteMeasure, rho2: DiscreteMeasure) -> float:
    """Sum over the union of supports of the absolute weight difference."""
    if rho1.dimension != rho2.dimension:
        raise DomainError("measures live in different dimensions")
    _, w1, w2 = _match_atoms(rho1, rho2)
    return float(np.abs(w1 - w2).sum())


def bounded_lipschitz_distance(rho1: DiscreteMeasure, rho2: DiscreteMeasure) -> float:
    """Fortet-Mourier distance: sup of ``int f d(rho1 - rho2)`` over |f| <= 1, Lip(f) <= 1.

    Solved as a small LP over the values of f on the union of atoms; any such
    values extend to R^d with the same bounds (McShane extension, clipped).
    """
    if rho1.dimension != rho2.dimension:
        raise DomainError("measures live in different dimensions")
    pts, w1, w2 = _match_atoms(rho1, rho2)
    n = len(pts)
    diff = w1 - w2
    if n == 1:
        return float(abs(diff[0]))
    i, j = np.array([(a, b) for a in range(n) for b in range(n) if a != b]).T
    A = np.zeros((len(i), n))
    A[np.arange(len(i)), i] = 1.0
    A[np.arange(len(i)), j] = -1.0
    b = np.linalg.norm(pts[i] - pts[j], axis=1)
    res = linprog(-diff, A_ub=A, b_ub=b, bounds=[(-1.0, 1.0)] * n, method="highs")
    if res.status != 0:
        raise SolverError(f"bounded-Lipschitz LP failed: {res.message}")
    return float(max(-res.fun, 0.0))


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / gamma(d / 2 + 1)


@dataclass(frozen=True, eq=False)
class HistogramDensity:
    """Piecewise-constant probability density on axis-aligned cells."""

    lows: np.ndarray
    highs: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        lows = np.array(self.lows, dtype=float)
        highs = np.array(self.highs, dtype=float)
        if lows.ndim == 1:
            lows, highs = lows[:, None], highs[:, None]
        values = np.array(self.values, dtype=float).reshape(-1)
        if lows.shape != highs.shape or lows.shape[0] != values.shape[0]:
            raise DomainError("cell bounds and values have inconsistent shapes")
        if np.any(highs <= lows):
            raise DomainError("every cell needs max > min along each axis")
        if np.any(values < 0):
            raise DomainError("density values must be nonnegative")
        for a in (lows, highs, values):
            a.setflags(write=False)
        object.__setattr__(self, "lows", lows)
        object.__setattr__(self, "highs", highs)
        object.__setattr__(self, "values", values)
        if abs(self.total_mass() - 1.0) > 1e-9:
            raise DomainError(f"density integrates to {self.total_mass()!r}, not 1")

    @property
    def dimension(self) -> int:
        return self.lows.shape[1]

    def volumes(self) -> np.ndarray:
        return np.prod(self.highs - self.lows, axis=1)

    def total_mass(self) -> float:
        return float(self.values @ self.volumes())

    def max_cell_diameter(self) -> float:
        return float(np.linalg.norm(self.highs - self.lows, axis=1).max())

    def discretize(self) -> DiscreteMeasure:
        """Atoms at cell centres carrying the cell masses; empty cells dropped."""
        mass = self.values * self.volumes()
        keep = mass > 0
        centers = 0.5 * (self.lows + self.highs)
        return DiscreteMeasure(centers[keep], mass[keep] / mass[keep].sum())

    def refine(self) -> "HistogramDensity":
        """Split every cell into 2^d equal children."""
        d = self.dimension
        lows, highs, values = [], [], []
        mid = 0.5 * (self.lows + self.highs)
        for corner in itertools.product((0, 1), repeat=d):
            c = np.array(corner, dtype=bool)
            lows.append(np.where(c, mid, self.lows))
            highs.append(np.where(c, self.highs, mid))
            values.append(self.values)
        return HistogramDensity(np.concatenate(lows), np.concatenate(highs), np.concatenate(values))

    def scaled(self, factor: float) -> "HistogramDensity":
        """Push forward by ``x -> factor * x`` (values rescaled to keep mass 1)."""
        return HistogramDensity(self.lows * factor, self.highs * factor, self.values / factor ** self.dimension)

    @classmethod
    def uniform_grid(cls, lower, upper, shape, values=None) -> "HistogramDensity":
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        shape = tuple(np.atleast_1d(shape))
        edges = [np.linspace(lo, hi, n + 1) for lo, hi, n in zip(lower, upper, shape)]
        lows, highs = [], []
        for idx in itertools.product(*[range(n) for n in shape]):
            lows.append([e[i] for e, i in zip(edges, idx)])
            highs.append([e[i + 1] for e, i in zip(edges, idx)])
        lows, highs = np.array(lows), np.array(highs)
        vol = np.prod(highs - lows, axis=1)
        if values is None:
            values = np.ones(len(lows))
        values = np.asarray(values, dtype=float).reshape(-1)
        return cls(lows, highs, values / (values @ vol))

    def to_json(self) -> dict:
        return {
            "dimension": self.dimension,
            "cells": [
                {"min": [float(v) for v in lo], "max": [float(v) for v in hi], "value": float(val)}
                for lo, hi, val in zip(self.lows, self.highs, self.values)
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "HistogramDensity":
        try:
            d = int(data["dimension"])
            cells = data["cells"]
            lows = np.array([[parse_real(v) for v in c["min"]] for c in cells], dtype=float).reshape(-1, d)
            highs = np.array([[parse_real(v) for v in c["max"]] for c in cells], dtype=float).reshape(-1, d)
            values = np.array([parse_real(c["value"]) for c in cells])
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"malformed histogram: {exc}") from exc
        return cls(lows, highs, values)


def histogram_lp_norm(density: HistogramDensity, p: float) -> float:
    """L^p norm of a histogram density (p > 1)."""
    if not p > 1:
        raise DomainError(f"need p > 1, got {p}")
    if math.isinf(p):
        return float(density.values.max())
    return float((np.abs(density.values) ** p @ density.volumes()) ** (1.0 / p))
