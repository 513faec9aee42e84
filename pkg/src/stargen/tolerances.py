"""Centralized numerical tolerances.

The constructions are exact in real arithmetic; every floating-point
comparison in the package routes through one :class:`Tolerances` record so a
single scale knob tightens or loosens the whole pipeline coherently.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    # exact algebraic identities (products of 0/1 patterns, index laws)
    exact: float = 1e-12
    # rank cutoff for span bases and word closures
    span_rank: float = 1e-10
    # Riesz idempotence, functional calculus commutation
    idempotent: float = 1e-8
    # relative Hermiticity test for the functional calculus
    self_adjoint: float = 1e-8
    matrix_units: float = 1e-10
    product_oracle: float = 1e-10
    # membership of the U sets in the word closure of units and W
    iso_closure: float = 1e-10
    # AF-action checks: commutators and conjugation membership
    af_commutator: float = 1e-10
    af_span: float = 1e-8
    # scaffold recovery formulas evaluated from the assembled generator
    recovery: float = 1e-8
    # spectral extraction of scaffold projections
    extraction: float = 1e-6
    # word-closure membership of named corner targets
    membership: float = 1e-6
    # end-to-end single-generation distance
    generation: float = 1e-4
    # simplicity witness: smallest admissible per-sample norm
    witness: float = 1e-12
    # minimal admissible gap between spectral clusters
    spectral_gap: float = 1e-10

    def scaled(self, factor: float) -> "Tolerances":
        """Multiply every tolerance by ``factor`` (> 1 loosens)."""
        if factor <= 0:
            raise ValueError("tolerance scale must be positive")
        if factor == 1.0:
            return self
        return Tolerances(**{
            f.name: getattr(self, f.name) * factor
            for f in dataclasses.fields(self)
        })


DEFAULT = Tolerances()

# Resource guards for desk-scale runs.
MAX_BLOCK_DIM = 128         # largest single matrix block
MAX_FLAT_DIM = 1_000_000    # largest ambient linear dimension
