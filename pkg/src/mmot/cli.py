"""Command line entry point: ``mmot <task> --config <path>``.

Exit status is 0 when every pass-required check passes, 2 when some check
fails, and 1 on errors (bad config, budget exceeded, solver failure).
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from . import __version__
from .analysis.campaign import random_instance, run_campaign
from .analysis.experiments import perturbed_sequence, run_continuity_experiment, two_dirac_family
from .analysis.report import CONTINUITY, VerificationReport, entries_to_csv
from .analysis.verifiers import N_PROBES, Instance, verify_duality, verify_instance
from .costs import alpha_star, cost_from_descriptor
from .duality import canonicalize, normalize_at_support, solve_dual
from .errors import MMOTError
from .jsonio import parse_real, read_json, write_json
from .measures import DiscreteMeasure, find_beta
from .solver import DEFAULT_BUDGET, solve_entropic, solve_exact

TASKS = ("solve", "dual", "verify", "campaign", "continuity")
EXIT_OK, EXIT_ERROR, EXIT_FAILED = 0, 1, 2


class ConfigError(MMOTError, ValueError):
    """The config file is malformed; the message names the offending field."""

    def __init__(self, fieldname, msg):
        super().__init__(f"config field '{fieldname}': {msg}")
        self.field = fieldname


def _check_keys(block: dict, allowed, where: str):
    if not isinstance(block, dict):
        raise ConfigError(where, "expected an object")
    for k in block:
        if k not in allowed:
            raise ConfigError(f"{where}.{k}", "unknown key")


@dataclass
class SolverOptions:
    method: str = "exact"
    budget: int = DEFAULT_BUDGET
    epsilon: float = 0.01
    max_iters: int = 10_000
    tol: float = 1e-8
    truncation: Optional[float] = None
    n_probes: int = N_PROBES
    entropic_diagnostics: bool = False
    workers: Optional[int] = None

    @classmethod
    def from_dict(cls, data: dict) -> "SolverOptions":
        _check_keys(data, {f.name for f in fields(cls)}, "solver")
        out = cls(**data)
        if out.method not in ("exact", "entropic"):
            raise ConfigError("solver.method", f"expected 'exact' or 'entropic', got {out.method!r}")
        for name in ("budget", "max_iters", "n_probes"):
            v = getattr(out, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"solver.{name}", f"expected a positive integer, got {v!r}")
        for name in ("epsilon", "tol"):
            try:
                setattr(out, name, parse_real(getattr(out, name)))
            except (TypeError, ValueError):
                raise ConfigError(f"solver.{name}", "expected a number") from None
            if not getattr(out, name) > 0:
                raise ConfigError(f"solver.{name}", "must be positive")
        if out.truncation is not None:
            try:
                out.truncation = parse_real(out.truncation)
            except (TypeError, ValueError):
                raise ConfigError("solver.truncation", "expected a number or null") from None
        if out.workers is not None and (not isinstance(out.workers, int) or out.workers < 1):
            raise ConfigError("solver.workers", "expected a positive integer")
        return out


@dataclass
class OutputOptions:
    dir: str = "mmot_out"
    report: bool = True
    csv: bool = True
    plot_data: bool = True

    @classmethod
    def from_dict(cls, data: dict) -> "OutputOptions":
        _check_keys(data, {f.name for f in fields(cls)}, "outputs")
        out = cls(**data)
        if not isinstance(out.dir, str) or not out.dir:
            raise ConfigError("outputs.dir", "expected a nonempty path")
        return out


MEASURE_SOURCES = {
    "inline": {"source", "N", "dimension", "atoms"},
    "file": {"source", "N", "path"},
    "generator": {"source", "N", "seed", "d", "m"},
    "campaign": {"source", "N", "seed", "d", "count"},
    "perturbed": {"source", "N", "base", "length", "seed", "power"},
    "two_dirac": {"source", "N", "length"},
    "sequence": {"source", "N", "limit", "sequence"},
}


@dataclass
class ExperimentConfig:
    """Parsed config file.  ``to_dict`` and ``from_dict`` are mutually inverse."""

    task: str
    measures: dict
    cost: dict = field(default_factory=lambda: {"kind": "power", "exponent": 1.0, "truncation": None})
    solver: SolverOptions = field(default_factory=SolverOptions)
    outputs: OutputOptions = field(default_factory=OutputOptions)
    seed: Optional[int] = None
    base_dir: str = field(default=".", compare=False, repr=False)

    @classmethod
    def from_dict(cls, data: dict, base_dir=".") -> "ExperimentConfig":
        _check_keys(data, {"task", "measures", "cost", "solver", "outputs", "seed"}, "config")
        if data.get("task") not in TASKS:
            raise ConfigError("task", f"expected one of {', '.join(TASKS)}, got {data.get('task')!r}")
        if "measures" not in data:
            raise ConfigError("measures", "missing")
        seed = data.get("seed")
        if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool) or seed < 0):
            raise ConfigError("seed", "expected a nonnegative integer")
        try:
            cost = cost_from_descriptor(data.get("cost", {"kind": "power", "exponent": 1.0})).descriptor()
        except (MMOTError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError("cost", str(exc)) from None
        cfg = cls(
            task=data["task"],
            measures=_normalize_measures(data["measures"], "measures"),
            cost=cost,
            solver=SolverOptions.from_dict(data.get("solver", {})),
            outputs=OutputOptions.from_dict(data.get("outputs", {})),
            seed=seed,
            base_dir=str(base_dir),
        )
        cfg._validate()
        return cfg

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "measures": self.measures,
            "cost": self.cost,
            "solver": asdict(self.solver),
            "outputs": asdict(self.outputs),
            "seed": self.seed,
        }

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = read_json(path)
        except ValueError as exc:
            raise ConfigError("config", f"not valid JSON: {exc}") from None
        return cls.from_dict(data, base_dir=path.parent)

    def _validate(self):
        src = self.measures["source"]
        allowed = {
            "solve": {"inline", "file", "generator"},
            "dual": {"inline", "file", "generator"},
            "verify": {"inline", "file", "generator"},
            "campaign": {"campaign"},
            "continuity": {"perturbed", "two_dirac", "sequence"},
        }[self.task]
        if src not in allowed:
            raise ConfigError("measures.source", f"task {self.task} accepts {sorted(allowed)}, got {src!r}")
        if self.task != "campaign" and self.measures.get("N", 2) < 2:
            raise ConfigError("measures.N", "need N >= 2")
        for p in _file_refs(self.measures):
            if not (Path(self.base_dir) / p).exists():
                raise ConfigError("measures", f"referenced file {p} does not exist")

    def with_overrides(self, out=None, seed=None, budget=None) -> "ExperimentConfig":
        data = self.to_dict()
        if out is not None:
            data["outputs"]["dir"] = str(out)
        if budget is not None:
            data["solver"]["budget"] = budget
        if seed is not None:
            data["seed"] = seed
            _override_seeds(data["measures"], seed)
        return ExperimentConfig.from_dict(data, base_dir=self.base_dir)


def _normalize_measures(block, where):
    if not isinstance(block, dict):
        raise ConfigError(where, "expected an object")
    src = block.get("source")
    if src not in MEASURE_SOURCES:
        raise ConfigError(f"{where}.source", f"expected one of {sorted(MEASURE_SOURCES)}, got {src!r}")
    _check_keys(block, MEASURE_SOURCES[src], where)
    out = dict(block)
    if src == "campaign":
        Ns = out.get("N", [2, 3])
        Ns = [Ns] if isinstance(Ns, int) else list(Ns)
        ds = out.get("d", [1, 2])
        ds = [ds] if isinstance(ds, int) else list(ds)
        if not Ns or any(not isinstance(n, int) or n < 2 for n in Ns):
            raise ConfigError(f"{where}.N", "expected integers >= 2")
        if not ds or any(d not in (1, 2, 3) for d in ds):
            raise ConfigError(f"{where}.d", "expected dimensions in 1..3")
        count = out.get("count", 100)
        if not isinstance(count, int) or count < 1:
            raise ConfigError(f"{where}.count", "expected a positive integer")
        out.update({"N": Ns, "d": ds, "count": count})
    else:
        N = out.get("N", 2)
        if not isinstance(N, int) or isinstance(N, bool):
            raise ConfigError(f"{where}.N", "expected an integer")
        out["N"] = N
    if src == "perturbed":
        out["base"] = _normalize_measures(out.get("base"), f"{where}.base")
        out.setdefault("length", 10)
        out.setdefault("power", 4.0)
    if src == "two_dirac":
        out.setdefault("length", 10)
    if src in ("perturbed", "two_dirac") and (not isinstance(out["length"], int) or out["length"] < 1):
        raise ConfigError(f"{where}.length", "expected a positive integer")
    if src == "sequence":
        out["limit"] = _normalize_measures(out.get("limit"), f"{where}.limit")
        seq = out.get("sequence")
        if not isinstance(seq, list) or not seq:
            raise ConfigError(f"{where}.sequence", "expected a nonempty list of measures")
        out["sequence"] = [_normalize_measures(s, f"{where}.sequence[{i}]") for i, s in enumerate(seq)]
    if src == "inline" and not isinstance(out.get("atoms"), list):
        raise ConfigError(f"{where}.atoms", "expected a list of atoms")
    if src == "file" and not isinstance(out.get("path"), str):
        raise ConfigError(f"{where}.path", "expected a path")
    if src == "generator":
        for key in ("d", "m"):
            if out.get(key) is not None and (not isinstance(out[key], int) or out[key] < 1):
                raise ConfigError(f"{where}.{key}", "expected a positive integer")
    return out


def _file_refs(block):
    if block.get("source") == "file":
        yield block["path"]
    for key in ("base", "limit"):
        if key in block:
            yield from _file_refs(block[key])
    for sub in block.get("sequence", []):
        yield from _file_refs(sub)


def _override_seeds(block, seed):
    if block.get("source") in ("generator", "campaign", "perturbed"):
        block["seed"] = seed
    for key in ("base", "limit"):
        if key in block:
            _override_seeds(block[key], seed)


# ---------------------------------------------------------------- pipelines


def _explicit_seed(block, cfg, where):
    seed = block.get("seed", cfg.seed)
    if seed is None:
        raise ConfigError(f"{where}.seed", "generators need an explicit seed (no wall-clock seeding)")
    return seed


def load_measure(block: dict, cfg: ExperimentConfig, where="measures") -> DiscreteMeasure:
    src = block["source"]
    try:
        if src == "inline":
            atoms = block["atoms"]
            dim = block.get("dimension")
            if dim is None:
                first = atoms[0]["position"] if atoms else [0.0]
                dim = len(first) if isinstance(first, list) else 1
            return DiscreteMeasure.from_json({"dimension": dim, "atoms": [
                {"position": a["position"] if isinstance(a["position"], list) else [a["position"]], "weight": a["weight"]}
                for a in atoms]})
        if src == "file":
            return DiscreteMeasure.from_json(read_json(Path(cfg.base_dir) / block["path"]))
        if src == "generator":
            return random_instance(_explicit_seed(block, cfg, where), d=block.get("d"), m=block.get("m"), N=block["N"])
    except (KeyError, TypeError, IndexError) as exc:
        raise ConfigError(where, f"malformed measure ({exc})") from None
    raise ConfigError(f"{where}.source", f"{src!r} does not describe a single measure")


def _cost(cfg: ExperimentConfig):
    return cost_from_descriptor(cfg.cost)


def _default_truncation(cfg, rho, N, cost):
    if cfg.solver.truncation is not None:
        return cfg.solver.truncation
    if cost.truncation is not None:
        return cost.truncation
    beta = find_beta(rho, N)
    if beta is None:
        raise ConfigError("solver.truncation", "the measure violates the small-concentration assumption; "
                                               "give the truncation level explicitly")
    return alpha_star(cost.untruncated(), N, beta) / 2


def _write_scatter(path: Path, reports):
    """``claimed measured`` pairs of every finite check, for bound-vs-measured plots."""
    rows = []
    for rep in reports:
        rep = rep.to_json() if hasattr(rep, "to_json") else rep
        for c in rep["checks"]:
            if isinstance(c["claimed"], float) and isinstance(c["measured"], float):
                rows.append([rep["instance"].get("hash", ""), c["name"], c["claimed"], c["measured"]])
    _write_csv(path, ["instance", "name", "claimed", "measured"], rows)


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(["inf" if isinstance(v, float) and math.isinf(v) else (repr(v) if isinstance(v, float) else v)
                        for v in r])


def _emit_reports(cfg, out: Path, name: str, payload: dict, reports):
    if cfg.outputs.report:
        write_json(out / f"{name}.json", payload)
    if cfg.outputs.csv:
        (out / f"{name}.csv").write_text(entries_to_csv(reports))
    if cfg.outputs.plot_data:
        _write_scatter(out / "bounds_vs_measured.csv", reports)


def task_solve(cfg: ExperimentConfig, out: Path) -> int:
    rho = load_measure(cfg.measures, cfg)
    N = cfg.measures["N"]
    cost = _cost(cfg)
    if cfg.solver.method == "entropic":
        cost = cost.truncated(_default_truncation(cfg, rho, N, cost))
        res = solve_entropic(rho, N, cost, cfg.solver.epsilon, max_iters=cfg.solver.max_iters, tol=cfg.solver.tol)
        res.info.pop("potentials", None)
    else:
        if cfg.solver.truncation is not None:
            cost = cost.truncated(cfg.solver.truncation)
        res = solve_exact(rho, N, cost, budget=cfg.solver.budget)
    payload = res.to_json()
    payload["cost"] = cost.descriptor()
    write_json(out / "plan.json", payload)
    print(f"value {payload['value']} ({res.method}, certified={res.certified})")
    return EXIT_OK


def task_dual(cfg: ExperimentConfig, out: Path) -> int:
    rho = load_measure(cfg.measures, cfg)
    N = cfg.measures["N"]
    base = _cost(cfg).untruncated()
    level = _default_truncation(cfg, rho, N, _cost(cfg))
    cost_t = base.truncated(level)
    pot = canonicalize(solve_dual(rho, N, cost_t), cost_t)
    plan = solve_exact(rho, N, cost_t, budget=cfg.solver.budget).plan
    if plan is not None:
        pot = normalize_at_support(pot, plan, cost_t)
    payload = pot.to_json()
    payload["cost"] = cost_t.descriptor()
    write_json(out / "potential.json", payload)
    inst = Instance(rho, N, base, seed=cfg.seed, budget=cfg.solver.budget)
    rep = inst.new_report()
    if inst.assumption and level == inst.alpha_star / 2:
        rep.add(verify_duality(inst=inst))
    _emit_reports(cfg, out, "report", rep.to_json(), [rep])
    print(f"dual objective {pot.objective!r}; {len(rep.failures)} failing checks")
    return EXIT_OK if rep.passed else EXIT_FAILED


def task_verify(cfg: ExperimentConfig, out: Path) -> int:
    rho = load_measure(cfg.measures, cfg)
    N = cfg.measures["N"]
    seed = cfg.seed if cfg.seed is not None else cfg.measures.get("seed")
    rep = verify_instance(rho, N, _cost(cfg), seed=seed, n_probes=cfg.solver.n_probes, budget=cfg.solver.budget,
                          entropic=cfg.solver.entropic_diagnostics)
    _emit_reports(cfg, out, "report", rep.to_json(), [rep])
    _print_summary(rep.to_json()["checks"])
    return EXIT_OK if rep.passed else EXIT_FAILED


def task_campaign(cfg: ExperimentConfig, out: Path) -> int:
    m = cfg.measures
    seed = _explicit_seed(m, cfg, "measures")
    result = run_campaign(seed, m["count"], _cost(cfg), Ns=m["N"], ds=m["d"], n_probes=cfg.solver.n_probes,
                          budget=cfg.solver.budget, entropic=cfg.solver.entropic_diagnostics,
                          workers=cfg.solver.workers, reproducer_dir=out / "reproducers")
    _emit_reports(cfg, out, "campaign", result, result["reports"])
    t = result["check_totals"]
    print(f"{result['count']} instances, {result['failed_instances']} failing; "
          f"checks pass={t['pass']} fail={t['fail']} skipped={t['skipped']}")
    return EXIT_OK if result["passed"] else EXIT_FAILED


def task_continuity(cfg: ExperimentConfig, out: Path) -> int:
    m = cfg.measures
    N = m["N"]
    if m["source"] == "two_dirac":
        seq, limit = two_dirac_family(m["length"])
    elif m["source"] == "perturbed":
        limit = load_measure(m["base"], cfg, "measures.base")
        seq = perturbed_sequence(limit, m["length"], _explicit_seed(m, cfg, "measures"), m["power"])
    else:
        limit = load_measure(m["limit"], cfg, "measures.limit")
        seq = [load_measure(s, cfg, f"measures.sequence[{i}]") for i, s in enumerate(m["sequence"])]
    res = run_continuity_experiment(seq, limit, N, _cost(cfg), seed=cfg.seed, budget=cfg.solver.budget)
    beta = find_beta(limit, N)
    rep = VerificationReport(
        {"hash": limit.digest(), "N": N, "d": limit.dimension, "m": limit.size, "cost": cfg.cost},
        beta, None if beta is None else alpha_star(_cost(cfg).untruncated(), N, beta), seed=cfg.seed)
    rep.add(res.entries)
    payload = rep.to_json()
    payload["experiment"] = CONTINUITY
    payload["limit_value"] = res.limit_value
    payload["series"] = res.series()
    _emit_reports(cfg, out, "continuity", payload, [rep])
    if cfg.outputs.plot_data:
        _write_csv(out / "continuity_series.csv", ["n", "cost", "error", "bl_distance"], res.series())
    _print_summary(payload["checks"])
    return EXIT_OK if rep.passed else EXIT_FAILED


def _print_summary(checks):
    for c in checks:
        tail = f" ({c['note']})" if c.get("note") else ""
        print(f"{c['status'].upper():7s} {c['name']}: measured {c['measured']} vs {c['claimed']}{tail}")


RUNNERS = {
    "solve": task_solve,
    "dual": task_dual,
    "verify": task_verify,
    "campaign": task_campaign,
    "continuity": task_continuity,
}


def run(cfg: ExperimentConfig) -> int:
    out = Path(cfg.outputs.dir)
    if not out.is_absolute():
        out = Path.cwd() / out
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", cfg.to_dict())
    return RUNNERS[cfg.task](cfg, out)


def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmot", description="Multimarginal transport with repulsive costs.")
    p.add_argument("task", choices=TASKS)
    p.add_argument("--config", required=True, type=Path, help="JSON config with task, measures, cost, solver, outputs")
    p.add_argument("--out", type=Path, help="output directory (overrides outputs.dir)")
    p.add_argument("--seed", type=_u64, help="seed (overrides seed and generator seeds)")
    p.add_argument("--budget", type=_positive, help="max LP variables (overrides solver.budget)")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config)
        if cfg.task != args.task:
            raise ConfigError("task", f"config is for {cfg.task!r} but {args.task!r} was requested")
        cfg = cfg.with_overrides(out=args.out, seed=args.seed, budget=args.budget)
        return run(cfg)
    except (MMOTError, OSError, ValueError) as exc:
        print(f"mmot: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
