"""Velocity-space error measure shared by identification and evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import BodyModel


@dataclass(frozen=True)
class ErrorMetric:
    """Post-impact velocity error with angular velocity scaled to m/s."""

    value: float
    linear: float
    angular: float

    def __post_init__(self):
        if not self.value >= 0:
            raise ValueError("error value must be non-negative")

    def __float__(self):
        return self.value


def scaled_velocity_error(predicted, measured, rho) -> np.ndarray:
    """Vectorised ``|| (dvx, dvy, rho * dw) ||`` over the last axis."""
    d = np.asarray(predicted, dtype=float) - np.asarray(measured, dtype=float)
    return np.sqrt(d[..., 0] ** 2 + d[..., 1] ** 2 + (rho * d[..., 2]) ** 2)


def velocity_error(predicted, measured, body: BodyModel) -> ErrorMetric:
    d = np.asarray(predicted, dtype=float) - np.asarray(measured, dtype=float)
    rho = body.radius_of_gyration
    linear = float(np.hypot(d[0], d[1]))
    angular = float(abs(rho * d[2]))
    return ErrorMetric(float(np.hypot(linear, angular)), linear, angular)
