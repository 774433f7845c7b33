"""Verifiers, experiments and campaigns built on the solvers."""

from .report import CheckEntry, VerificationReport, entries_to_csv
from .verifiers import (
    Instance,
    entropic_sanity,
    verify_cost_bounds,
    verify_diagonal_avoidance,
    verify_duality,
    verify_instance,
    verify_potential_bounds,
)
