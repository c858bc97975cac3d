"""Exception types shared across the package."""


class PdfemError(Exception):
    """Base class for all package errors."""


class MeshError(PdfemError):
    """Invalid mesh input: inverted elements, dangling references, duplicates."""


class CrackError(PdfemError):
    """Invalid crack geometry or a non-extending crack update."""


class FamilyError(PdfemError):
    """Interaction family too small or geometrically degenerate."""


class SingularFamilyError(FamilyError):
    """Shape tensor not invertible for a node family."""


class AssemblyError(PdfemError):
    """Global assembly failure (missing families, bad constraints, bad loads)."""


class SolveError(PdfemError):
    """Linear solve failed or residual check not met."""


class FractureError(PdfemError):
    """Contour construction or SIF evaluation failure."""


class ConfigError(PdfemError):
    """Malformed run configuration."""
