"""Exception types shared across the package."""

from __future__ import annotations


class SplatError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(SplatError):
    """A file (PLY, trajectory, annotation, ...) does not match its format."""


class ParameterError(SplatError):
    """An argument or primitive violates a documented constraint."""


class ConfigError(SplatError):
    """A job configuration is missing, inconsistent, or references unknown ids."""
