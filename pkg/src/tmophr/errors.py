"""Shared exception types."""


class UsageError(ValueError):
    """Caller violated an API precondition (bad argument, size mismatch)."""


class MeshTopologyError(RuntimeError):
    """Refinement/derefinement precondition violated."""


class InvalidMeshError(RuntimeError):
    """Mesh has a non-positive Jacobian determinant where positivity is required."""


class TargetError(ValueError):
    """Target construction produced an unusable value (e.g. size <= 0)."""


class NumericalError(RuntimeError):
    """An iterative numerical procedure failed to converge."""
