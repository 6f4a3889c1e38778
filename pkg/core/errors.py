"""
Error types shared by the core primitives and the ShapeFlow services.

Every error raised on purpose by the package derives from ShapeFlowError.
Errors about bad values also derive from ValueError.
"""


class ShapeFlowError(Exception):
    """Base class for all package errors."""


# ── Geometry ────────────────────────────────────────────────────────────

class InvalidGeometry(ShapeFlowError, ValueError):
    """Non-finite or otherwise unusable coordinates."""


class InsufficientPoints(ShapeFlowError, ValueError):
    """Too few points for the requested neighbourhood size."""


class EmptyCloud(ShapeFlowError, ValueError):
    pass


class CorrespondenceError(ShapeFlowError, ValueError):
    """Two clouds that must be index-aligned have different sizes."""


class CardinalityError(ShapeFlowError, ValueError):
    pass


class DimensionError(ShapeFlowError, ValueError):
    pass


# ── Rendering ───────────────────────────────────────────────────────────

class InvalidSigma(ShapeFlowError, ValueError):
    """Splat radius (sigma, in pixels) must be positive and finite."""


# ── Files ───────────────────────────────────────────────────────────────

class FormatError(ShapeFlowError):
    """Bad magic, truncated payload or inconsistent header in a binary file."""


# ── Features / attention ───────────────────────────────────────────────

class EmptyVisibleSet(ShapeFlowError, ValueError):
    pass


class InvalidTemperature(ShapeFlowError, ValueError):
    pass


class EmptyTarget(ShapeFlowError, ValueError):
    pass


class EmptyViewSet(ShapeFlowError, ValueError):
    pass


# ── Flow ────────────────────────────────────────────────────────────────

class InvalidTime(ShapeFlowError, ValueError):
    pass


class InvalidSteps(ShapeFlowError, ValueError):
    pass


# ── Training ────────────────────────────────────────────────────────────

class ConfigError(ShapeFlowError, ValueError):
    pass


class DivergedError(ShapeFlowError):
    """A loss term became non-finite during training."""

    def __init__(self, term: str, value: float, step: int):
        self.term = term
        self.value = value
        self.step = step
        super().__init__(f"Loss term '{term}' diverged to {value} at step {step}")
