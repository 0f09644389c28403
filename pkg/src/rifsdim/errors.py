"""Typed error hierarchy shared across the package.

Everything derives from RifsdimError so callers (and the CLI) can separate
domain failures from programming errors.  Config-file problems raise
ConfigError; numeric guard trips (enumeration blowups) raise GuardError
subclasses so the CLI can map them to distinct exit codes.
"""

from __future__ import annotations


class RifsdimError(Exception):
    """Base class for all library errors."""


class ConfigError(RifsdimError):
    """Invalid experiment configuration (bad schema, missing state, ...)."""


class GuardError(RifsdimError):
    """A numeric guard tripped (work would exceed a configured cap)."""


# -- environment ------------------------------------------------------------


class NonStochasticMatrix(ConfigError):
    """A transition-probability row does not sum to 1."""


class NotIrreducible(ConfigError):
    """The environment chain is not irreducible."""


# -- subshift ---------------------------------------------------------------


class OutOfHorizon(RifsdimError):
    """A word or product extends past the realized environment path."""


class ExplosionGuard(GuardError):
    """Cylinder enumeration would exceed the configured cap."""


class NotMixingWithinBound(RifsdimError):
    """No positive transition-matrix product found within the probed range."""


class NoBridge(RifsdimError):
    """No admissible connector word exists at the requested gap."""


class GapTooSmall(RifsdimError):
    """Joining gap is below the minimum the junction admits."""


# -- geometry ---------------------------------------------------------------


class NotAdmissible(RifsdimError):
    """The word violates the subshift's transition structure."""


class PointOutsideCylinder(RifsdimError):
    """A point lies outside the cylinder it was claimed to belong to."""


class NotContracting(RifsdimError):
    """A composed map is not a strict contraction."""


class OverlappingImages(ConfigError):
    """Two symbol images at the same state share interior points."""


# -- thermo -----------------------------------------------------------------


class NoSignChange(RifsdimError):
    """Pressure has the same sign at both bracket endpoints."""


class NotContractingPotential(RifsdimError):
    """The potential is not negative on average; root solving is ill-posed."""


# -- targets ----------------------------------------------------------------


class TargetOutsideFiber(RifsdimError):
    """A target point is not inside the depth-truncated attractor fiber."""


class EmptyCover(RifsdimError):
    """No target cells exist at the requested depth."""


# -- moran ------------------------------------------------------------------


class ScheduleInfeasible(RifsdimError):
    """The nesting schedule cannot be realized on this path/model."""


class EmptySelection(RifsdimError):
    """The disjoint-ball selection produced no candidates."""


# -- dimension --------------------------------------------------------------


class EmptyInput(RifsdimError):
    """Box counting received no points or cells."""


class DegenerateFit(RifsdimError):
    """Too few scales in the fit window for a slope estimate."""
