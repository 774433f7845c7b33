"""Randomized verification campaigns over generated instances."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..costs import PowerLawCost, RepulsiveCost, cost_from_descriptor
from ..errors import DomainError
from ..jsonio import write_json
from ..measures import DiscreteMeasure, assumption_threshold, has_small_concentration
from ..solver import DEFAULT_BUDGET
from .verifiers import N_PROBES, verify_instance

MIN_SPACING = 0.02
WORKERS_ENV = "MMOT_WORKERS"


def atom_range(N: int) -> tuple:
    """Default range of atom counts: small enough for exact LPs, large enough for the assumption."""
    if N == 2:
        return 6, 12
    lo = int(math.floor(1.0 / assumption_threshold(N))) + 1
    return lo, lo + 2


def weight_cap(N: int, m: int) -> float:
    tau = assumption_threshold(N)
    if m * tau / 2 > 1:
        return tau / 2
    # half the threshold is unreachable with m atoms: stay halfway between uniform and the threshold
    return (1.0 / m + tau) / 2


def _capped(w: np.ndarray, cap: float) -> np.ndarray:
    """Water-filling: clip at ``cap`` and rescale the rest to total mass 1."""
    w = w / w.sum()
    fixed = np.zeros(len(w), dtype=bool)
    for _ in range(len(w)):
        over = (w > cap) & ~fixed
        if not over.any():
            break
        fixed |= over
        free = ~fixed
        w = np.where(fixed, cap, w)
        w[free] *= (1.0 - cap * fixed.sum()) / w[free].sum()
    return w / w.sum()


def random_instance(seed: int, d: Optional[int] = None, m: Optional[int] = None, N: int = 2) -> DiscreteMeasure:
    """Random measure satisfying the small-concentration assumption for ``N``.

    Positions are uniform in the unit cube with pairwise spacing at least
    0.02 (rejection sampling); weights are Dirichlet(1, ..., 1) with the
    largest ones capped below the threshold.
    """
    if N < 2:
        raise DomainError(f"need N >= 2, got {N}")
    rng = np.random.default_rng(seed)
    if d is None:
        d = int(rng.integers(1, 3))
    if m is None:
        lo, hi = atom_range(N)
        m = int(rng.integers(lo, hi + 1))
    if m * assumption_threshold(N) <= 1:
        raise DomainError(f"{m} atoms cannot satisfy the assumption for N={N}")
    pts = []
    while len(pts) < m:
        p = rng.random(d)
        if all(np.linalg.norm(p - q) >= MIN_SPACING for q in pts):
            pts.append(p)
    w = _capped(rng.dirichlet(np.ones(m)), weight_cap(N, m))
    rho = DiscreteMeasure(np.array(pts), w)
    assert has_small_concentration(rho, N)
    return rho


def _instance_seeds(seed: int, count: int) -> list:
    return [int(s.generate_state(1, dtype=np.uint64)[0]) for s in np.random.SeedSequence(seed).spawn(count)]


def _draw_shape(inst_seed: int, Ns: Sequence[int], ds: Sequence[int]) -> tuple:
    rng = np.random.default_rng([inst_seed, 1])
    return int(rng.choice(Ns)), int(rng.choice(ds))


def _run_one(task):
    inst_seed, N, d, cost_desc, n_probes, budget, entropic = task
    rho = random_instance(inst_seed, d=d, N=N)
    rep = verify_instance(rho, N, cost_from_descriptor(cost_desc), seed=inst_seed, n_probes=n_probes,
                          budget=budget, entropic=entropic)
    return rho.to_json(), rep.to_json()


def worker_count(requested: Optional[int] = None) -> int:
    """Number of processes: the request, capped by MMOT_WORKERS and the CPU count."""
    n = os.cpu_count() or 1
    if requested is not None:
        n = min(n, int(requested))
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise DomainError(f"{WORKERS_ENV} must be a positive integer, got {env!r}") from None
        if cap < 1:
            raise DomainError(f"{WORKERS_ENV} must be a positive integer, got {env!r}")
        n = min(n, cap)
    return max(1, n)


def reproducer_config(rho_json: dict, N: int, cost_desc: dict, seed: int, n_probes: int, budget: int) -> dict:
    """Standalone ``verify`` config that re-runs one instance."""
    return {
        "task": "verify",
        "measures": {"source": "inline", "N": N, "atoms": rho_json["atoms"]},
        "cost": cost_desc,
        "solver": {"budget": budget, "n_probes": n_probes},
        "outputs": {"report": True},
        "seed": seed,
    }


def run_campaign(seed: int, count: int, cost: RepulsiveCost = None, Ns: Sequence[int] = (2, 3),
                 ds: Sequence[int] = (1, 2), n_probes: int = N_PROBES, budget: int = DEFAULT_BUDGET,
                 entropic: bool = False, workers: Optional[int] = None,
                 reproducer_dir: Optional[Path] = None) -> dict:
    """Verify ``count`` random instances; the result depends only on the arguments.

    Instance seeds come from ``SeedSequence(seed).spawn(count)``; reports
    are ordered by measure hash (then seed) whatever the worker schedule.
    Failing instances get a reproducer config in ``reproducer_dir``.
    """
    cost = PowerLawCost(1.0) if cost is None else cost.untruncated()
    desc = cost.descriptor()
    tasks = []
    for s in _instance_seeds(seed, count):
        N, d = _draw_shape(s, Ns, ds)
        tasks.append((s, N, d, desc, n_probes, budget, entropic))
    n = worker_count(workers)
    if n == 1 or len(tasks) <= 1:
        results = [_run_one(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(_run_one, tasks, chunksize=max(1, len(tasks) // (4 * n))))
    results.sort(key=lambda r: (r[1]["instance"]["hash"], r[1]["seed"]))
    reports = [rep for _, rep in results]
    failing = [(rho, rep) for rho, rep in results if not rep["passed"]]
    reproducers = []
    if reproducer_dir is not None and failing:
        reproducer_dir = Path(reproducer_dir)
        reproducer_dir.mkdir(parents=True, exist_ok=True)
        for rho, rep in failing:
            path = reproducer_dir / f"reproducer_{rep['instance']['hash']}.json"
            write_json(path, reproducer_config(rho, rep["instance"]["N"], desc, rep["seed"], n_probes, budget))
            reproducers.append(path.name)
    checks = [c for rep in reports for c in rep["checks"]]
    return {
        "seed": seed,
        "count": count,
        "cost": desc,
        "Ns": list(Ns),
        "ds": list(ds),
        "n_probes": n_probes,
        "passed": not failing,
        "failed_instances": len(failing),
        "check_totals": {
            status: sum(1 for c in checks if c["status"] == status) for status in ("pass", "fail", "skipped")
        },
        "reproducers": reproducers,
        "reports": reports,
    }
