"""Coupled electricity and hydrogen market equilibria with gas transport."""

from ._core import (
    InputError,
    SolverError,
    convergence_study,
    cournot_sales,
    emit_network,
    oracle,
    simulate,
    solve,
    validate,
)

__all__ = [
    "InputError",
    "SolverError",
    "convergence_study",
    "cournot_sales",
    "emit_network",
    "oracle",
    "simulate",
    "solve",
    "validate",
]
