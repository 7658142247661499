"""Model coefficients, admissibility checks and coordinate maps.

Three equivalent coordinate systems are used throughout the package:
the belief ``pi`` in (0, 1), the likelihood ratio ``phi = pi / (1 - pi)``
and the parabolic ordinate ``y = (sigma / theta) * ln(phi) - x``.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass

import numpy as np

PI_MIN = 1e-9


class ParamsError(ValueError):
    """Base class for parameter admissibility failures."""


class RejectedSignAssumption(ParamsError):
    pass


class RejectedDiscount(ParamsError):
    pass


class DomainError(ValueError):
    pass


class CaseTag(str, enum.Enum):
    CASE_I = "CaseI"
    CASE_II = "CaseII"


@dataclass(frozen=True)
class ModelParams:
    mu0: float
    mu1: float
    sigma: float
    rho: float

    @property
    def mu_hat(self) -> float:
        return self.mu1 - self.mu0

    @property
    def theta(self) -> float:
        """Signal-to-noise ratio of the unobserved drift."""
        return (self.mu1 - self.mu0) / self.sigma

    @property
    def drift_sum(self) -> float:
        return self.mu0 + self.mu1

    def to_dict(self) -> dict:
        return {"mu0": self.mu0, "mu1": self.mu1, "sigma": self.sigma, "rho": self.rho}

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        try:
            return cls(*(float(data[k]) for k in ("mu0", "mu1", "sigma", "rho")))
        except KeyError as exc:
            raise ParamsError(f"missing parameter {exc.args[0]!r}") from None


def validate(params: ModelParams) -> CaseTag:
    """Classify an admissible parameter set, raising on anything outside it."""
    for name in ("mu0", "mu1", "sigma", "rho"):
        if not math.isfinite(getattr(params, name)):
            raise ParamsError(f"{name} must be finite")
    if params.sigma <= 0:
        raise ParamsError("sigma must be strictly positive")
    if params.rho <= 0:
        raise ParamsError("rho must be strictly positive")
    if not (params.mu1 > 0 > params.mu0):
        raise RejectedSignAssumption(
            f"need mu1 > 0 > mu0, got mu0={params.mu0!r}, mu1={params.mu1!r}")
    total = params.drift_sum
    if total >= 0:
        return CaseTag.CASE_I
    required = params.theta / (2 * params.sigma) * abs(total)
    if params.rho >= required:
        return CaseTag.CASE_II
    raise RejectedDiscount(
        f"mu0 + mu1 < 0 requires rho >= {required!r}, got rho={params.rho!r}")


def y_ell(params: ModelParams) -> float:
    """Ordinate above which the whole half-line {x = 0} continues."""
    return params.sigma / params.theta * math.log(-params.mu0 / params.mu1)


def to_phi(pi):
    pi = np.asarray(pi, dtype=float)
    if np.any((pi <= 0) | (pi >= 1)) or np.any(np.isnan(pi)):
        raise DomainError("pi must lie in (0, 1)")
    pi = np.clip(pi, PI_MIN, 1 - PI_MIN)
    out = pi / (1 - pi)
    return float(out) if out.ndim == 0 else out


def to_pi(phi):
    phi = np.asarray(phi, dtype=float)
    if np.any(phi <= 0) or np.any(np.isnan(phi)):
        raise DomainError("phi must be positive")
    out = phi / (1 + phi)
    return float(out) if out.ndim == 0 else out


def to_y(x, phi, params: ModelParams):
    phi = np.asarray(phi, dtype=float)
    if np.any(phi <= 0) or np.any(np.isnan(phi)):
        raise DomainError("phi must be positive")
    out = params.sigma / params.theta * np.log(phi) - np.asarray(x, dtype=float)
    return float(out) if out.ndim == 0 else out


def from_y(x, y, params: ModelParams):
    out = np.exp(params.theta / params.sigma * (np.asarray(x, dtype=float) + np.asarray(y, dtype=float)))
    return float(out) if out.ndim == 0 else out


def format_float(value: float) -> str:
    """17 significant digits, enough for an exact binary64 round trip."""
    return format(float(value), ".17g")


def dumps_params(params: ModelParams) -> str:
    body = ", ".join(f'"{k}": {format_float(v)}' for k, v in params.to_dict().items())
    return "{" + body + "}"


def loads_params(text: str) -> ModelParams:
    return ModelParams.from_dict(json.loads(text))
