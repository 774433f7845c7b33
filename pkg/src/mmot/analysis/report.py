"""Report records shared by all verifiers.

Every check carries a margin with the convention "positive = satisfied" and
names the result it checks in ``paper_ref``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

from ..jsonio import to_jsonable

# additive slack on bound inequalities, relative to the bound
SLACK_RTOL = 1e-8
# strict inequalities are checked at a threshold deflated by this factor
STRICT_DEFLATE = 1e-6

SEPARATION = "support of optimal plans avoids the diagonal strip"
COST_BOUND = "cost bounded through the concentration radius"
TRUNCATION = "cost equals its truncation below the separation radius"
DUALITY = "strong duality and transfer of truncated potentials"
SLACKNESS = "complementary slackness on optimal supports"
LP_BOUND = "cost bounded through the L^p norm of the density"
SUP_BOUND = "uniform bound on canonical potentials"
LIPSCHITZ = "Lipschitz bound on canonical potentials"
SEMICONCAVITY = "semiconcavity bound on canonical potentials"
CONTINUITY = "continuity of the cost along weakly convergent marginals"
EQUI_CONCENTRATION = "small concentration persists along convergent sequences"
LIPSCHITZ_RHO = "Lipschitz dependence of the cost on the marginal"
LP_BALL = "Lipschitz continuity on bounded L^p sets"
ENTROPIC = "entropic approximation of the truncated cost (diagnostic)"


def slack(bound: float) -> float:
    return SLACK_RTOL * (1.0 + abs(bound)) if math.isfinite(bound) else 0.0


@dataclass
class CheckEntry:
    name: str
    paper_ref: str
    claimed: Optional[float]
    measured: Optional[float]
    margin: Optional[float]
    passed: Optional[bool]
    seed: Optional[int] = None
    note: str = ""
    diagnostic: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def status(self) -> str:
        if self.passed is None:
            return "skipped"
        return "pass" if self.passed else "fail"

    @classmethod
    def upper(cls, name, ref, claimed, measured, tol, **kw):
        """Check ``measured <= claimed + tol``."""
        margin = claimed - measured
        return cls(name, ref, claimed, measured, margin, bool(measured <= claimed + tol), **kw)

    @classmethod
    def lower(cls, name, ref, claimed, measured, tol, **kw):
        """Check ``measured >= claimed - tol``."""
        margin = measured - claimed
        return cls(name, ref, claimed, measured, margin, bool(measured >= claimed - tol), **kw)

    @classmethod
    def skipped(cls, name, ref, note, **kw):
        return cls(name, ref, None, None, None, None, note=note, **kw)

    def to_json(self) -> dict:
        out = {
            "name": self.name,
            "paper_ref": self.paper_ref,
            "claimed": self.claimed,
            "measured": self.measured,
            "margin": self.margin,
            "pass": self.passed,
            "status": self.status,
            "seed": self.seed,
        }
        if self.note:
            out["note"] = self.note
        if self.diagnostic:
            out["diagnostic"] = True
        if self.extra:
            out["extra"] = self.extra
        return to_jsonable(out)


@dataclass
class VerificationReport:
    instance: dict
    beta: Optional[float]
    alpha_star: Optional[float]
    checks: list = field(default_factory=list)
    seed: Optional[int] = None
    tolerances: dict = field(default_factory=lambda: {"slack_rtol": SLACK_RTOL, "strict_deflate": STRICT_DEFLATE})

    def add(self, entries):
        if isinstance(entries, CheckEntry):
            entries = [entries]
        for e in entries:
            if e.seed is None:
                e.seed = self.seed
            self.checks.append(e)
        return self

    @property
    def failures(self) -> list:
        return [c for c in self.checks if c.passed is False and not c.diagnostic]

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_json(self) -> dict:
        return to_jsonable(
            {
                "instance": self.instance,
                "beta": self.beta,
                "alpha_star": self.alpha_star,
                "seed": self.seed,
                "tolerances": self.tolerances,
                "passed": self.passed,
                "checks": [c.to_json() for c in self.checks],
            }
        )


def entries_to_csv(reports) -> str:
    """Flatten check entries of several reports into CSV text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["instance", "name", "paper_ref", "claimed", "measured", "margin", "status", "seed"])
    for rep in reports:
        data = rep.to_json() if hasattr(rep, "to_json") else rep
        tag = data["instance"].get("hash", "")
        for c in data["checks"]:
            writer.writerow([tag, c["name"], c["paper_ref"], c["claimed"], c["measured"], c["margin"], c["status"], c["seed"]])
    return buf.getvalue()
