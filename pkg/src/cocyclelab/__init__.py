"""Numerical laboratory for Markov operator cocycles on finite measure spaces."""

from cocyclelab.measure import (
    Density,
    FiniteMeasureSpace,
    MarkovMatrix,
    Observable,
    apply,
    dual_apply,
    integrate,
    markov_check,
)

__all__ = [
    "Density",
    "FiniteMeasureSpace",
    "MarkovMatrix",
    "Observable",
    "apply",
    "dual_apply",
    "integrate",
    "markov_check",
]
