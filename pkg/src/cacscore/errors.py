"""Exception hierarchy shared across the package."""


class CacScoreError(Exception):
    """Base class for all errors raised by cacscore."""


class GeometryMismatch(CacScoreError):
    """Two grids that must be voxel-aligned have different dims, spacing or origin."""


class InputError(CacScoreError):
    """Malformed or unreadable input (files, documents, tables)."""


class DegenerateInput(CacScoreError):
    """Statistics requested on data that cannot support them."""
