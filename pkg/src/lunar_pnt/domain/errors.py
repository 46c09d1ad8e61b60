from __future__ import annotations

from typing import Any, Dict, Optional


class LunarPntError(Exception):
    """Base class for every error raised by lunar_pnt."""


class DomainError(LunarPntError, ValueError):
    """An input violates the documented precondition of an operation."""


class ApproximationError(DomainError):
    """A discretization is used outside the step range where its approximation holds."""


class ConfigError(LunarPntError):
    """Invalid configuration. `path` is the dotted field path of the offending entry."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class FitError(LunarPntError):
    def __init__(self, message: str, residual: float):
        self.residual = float(residual)
        super().__init__(f"{message} (residual={self.residual:.3e})")


class NumericalError(LunarPntError):
    """A factorization or inversion failed; `diagnostics` says where and how badly."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = dict(diagnostics or {})
        detail = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        super().__init__(f"{message} [{detail}]" if detail else message)


class FilterError(NumericalError):
    pass
