"""Riemannian network toolkit for grids of Hermitian positive-definite matrices."""

from .linalg import (
    ComplexMatrix,
    EigPair,
    HpdMatrix,
    NsState,
    clamp_ns,
    hermitian_eig,
    log_ns,
    make_hermitian,
    matrix_fn_eig,
    regularize,
    sqrt_ns,
)

__all__ = [
    "ComplexMatrix",
    "EigPair",
    "HpdMatrix",
    "NsState",
    "clamp_ns",
    "hermitian_eig",
    "log_ns",
    "make_hermitian",
    "matrix_fn_eig",
    "regularize",
    "sqrt_ns",
]

__version__ = "0.1.0"
