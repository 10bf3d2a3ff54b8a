"""hr-adaptive high-order mesh optimization on nonconforming meshes."""

from .refelem import (
    QUAD,
    TRI,
    GAMMA_SPLIT_X,
    GAMMA_SPLIT_Y,
    GAMMA_ISO,
    ReferenceElement,
    QuadratureRule,
    ChildEmbedding,
    reference_element,
    quadrature_for,
    eval_basis,
    interpolation_matrix,
)

__all__ = [
    "QUAD",
    "TRI",
    "GAMMA_SPLIT_X",
    "GAMMA_SPLIT_Y",
    "GAMMA_ISO",
    "ReferenceElement",
    "QuadratureRule",
    "ChildEmbedding",
    "reference_element",
    "quadrature_for",
    "eval_basis",
    "interpolation_matrix",
]

__version__ = "0.1.0"
