"""Exception hierarchy shared by all gwrap modules.

Every error carries a stable machine-parseable ``code`` so the CLI can map
failures to exit statuses.
"""

from __future__ import annotations


class GwrapError(Exception):
    """Base class for all gwrap errors."""

    code = 1


class ParseError(GwrapError):
    """A file (scene, config, mesh, point cloud) could not be parsed."""

    code = 3


class VersionMismatch(GwrapError):
    """A file declares a format version this build does not understand."""

    code = 4


class DegenerateInput(GwrapError):
    """Point set is collinear/coplanar after deduplication."""

    code = 5


class NoCameras(GwrapError):
    """An operation needing training cameras was given a scene without any."""

    code = 6


class InsufficientPoints(GwrapError):
    """Too few points survived filtering to build a tetrahedralization."""

    code = 7


class CropEmpty(GwrapError):
    """The mesh does not intersect the crop volume (oversampling exhausted)."""

    code = 8


class EmptyCloud(GwrapError):
    """A metric was asked to compare an empty point cloud."""

    code = 9


class ZeroNormal(GwrapError):
    """A Gaussian's oriented normal is (numerically) zero where one is required."""

    code = 10


class Diverged(GwrapError):
    """Normal optimization loss exceeded its divergence guard."""

    code = 11


class BadParams(GwrapError):
    """Invalid fixture or operation parameters."""

    code = 12


class ToleranceBreach(GwrapError):
    """A verification run exceeded its tolerance."""

    code = 13
