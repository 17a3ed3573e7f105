"""Python access to the fairsearch core."""

from ._fairsearch import (
    NUM_EDGES,
    NUM_OPS,
    OPS,
    ParseError,
    ShapeError,
    barlow_twins_loss,
    class_counts,
    cosine_lr,
    cross_correlation,
    cross_entropy,
    discretize,
    gate_values,
    genotype_dot,
    genotype_normalize,
    grad_check,
    zero_one_loss,
)

__all__ = [
    "NUM_EDGES",
    "NUM_OPS",
    "OPS",
    "ParseError",
    "ShapeError",
    "barlow_twins_loss",
    "class_counts",
    "cosine_lr",
    "cross_correlation",
    "cross_entropy",
    "discretize",
    "gate_values",
    "genotype_dot",
    "genotype_normalize",
    "grad_check",
    "zero_one_loss",
]
