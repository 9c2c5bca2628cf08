"""Shared exception hierarchy.

Every error raised by this package derives from GestureGenError so callers
(and the command line front end) can distinguish library failures from bugs.
"""

from __future__ import annotations


class GestureGenError(Exception):
    """Base class for all errors raised by gesturegen."""


class ShapeError(GestureGenError):
    """An array argument has the wrong shape or incompatible dimensions."""


class GraphError(GestureGenError):
    """Misuse of the autodiff graph (non-scalar loss, closed tape, ...)."""
