"""Uniform linear array geometry and the sampled steering-vector dictionary.

Angles are radians everywhere in this package; the CLI converts to and
from degrees at the boundary. The array has half-wavelength spacing and
its phase origin at the array midpoint, so the response of sensor m
(1-based) to a source at angle theta is exp{j*pi*(m-(M+1)/2)*cos(theta)}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "UlaConfig",
    "Grid",
    "Dictionary",
    "steering_vector",
    "steering_derivative",
    "build_dictionary",
    "perturbed_manifold",
]

# Slack for floating-point checks on angle-domain boundaries.
_ANGLE_EPS = 1e-12


@dataclass(frozen=True)
class UlaConfig:
    """Half-wavelength uniform linear array centered on its midpoint."""

    sensor_count: int

    def __post_init__(self) -> None:
        if self.sensor_count < 2:
            raise ValueError("a linear array needs at least 2 sensors")

    @property
    def offsets(self) -> np.ndarray:
        """Signed sensor positions (m - (M+1)/2 for m = 1..M) in half-wavelength units."""
        m = self.sensor_count
        return np.arange(1, m + 1, dtype=float) - (m + 1) / 2.0


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform angular grid over [0, pi] including both endpoints."""

    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("grid needs at least 2 points")
        if abs(pts[0]) > _ANGLE_EPS or abs(pts[-1] - np.pi) > _ANGLE_EPS:
            raise ValueError("grid must span [0, pi] exactly")
        steps = np.diff(pts)
        if np.any(steps <= 0) or np.ptp(steps) > _ANGLE_EPS:
            raise ValueError("grid points must be uniformly increasing")
        object.__setattr__(self, "points", pts)

    @classmethod
    def with_point_count(cls, point_count: int) -> "Grid":
        if point_count < 2:
            raise ValueError("grid needs at least 2 points")
        return cls(np.linspace(0.0, np.pi, point_count))

    @classmethod
    def from_interval(cls, interval: float) -> "Grid":
        """Build the grid from its spacing in radians; the spacing must divide pi."""
        if interval <= 0:
            raise ValueError("grid interval must be positive")
        steps = np.pi / interval
        if abs(steps - round(steps)) > 1e-9 * max(steps, 1.0):
            raise ValueError(f"grid interval {interval!r} rad does not divide pi")
        return cls.with_point_count(int(round(steps)) + 1)

    @classmethod
    def from_interval_deg(cls, interval_deg: float) -> "Grid":
        """Build the grid from its spacing in degrees; the spacing must divide 180."""
        if interval_deg <= 0:
            raise ValueError("grid interval must be positive")
        steps = 180.0 / interval_deg
        if abs(steps - round(steps)) > 1e-9 * max(steps, 1.0):
            raise ValueError(f"grid interval {interval_deg!r} deg does not divide 180")
        return cls.with_point_count(int(round(steps)) + 1)

    @property
    def point_count(self) -> int:
        return self.points.size

    @property
    def interval(self) -> float:
        """Grid spacing in radians."""
        return np.pi / (self.points.size - 1)


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Sampled array manifold: steering matrix A and its angle derivative B.

    Column n of A is the steering vector at grid point n; column n of B is
    its derivative with respect to angle, so A + B*diag(beta) is the
    first-order manifold at per-point offsets beta.
    """

    A: np.ndarray
    B: np.ndarray
    grid: Grid
    ula: UlaConfig


def _check_angle(theta: float) -> None:
    if not (-_ANGLE_EPS <= theta <= np.pi + _ANGLE_EPS):
        raise ValueError(f"angle {theta!r} rad outside [0, pi]")


def steering_vector(theta: float, ula: UlaConfig) -> np.ndarray:
    """Array response to a unit far-field source at angle theta (radians)."""
    _check_angle(theta)
    return np.exp(1j * np.pi * ula.offsets * np.cos(theta))


def steering_derivative(theta: float, ula: UlaConfig) -> np.ndarray:
    """Derivative of the steering vector with respect to theta."""
    _check_angle(theta)
    phase = np.pi * ula.offsets
    return -1j * phase * np.sin(theta) * np.exp(1j * phase * np.cos(theta))


def build_dictionary(grid: Grid, ula: UlaConfig) -> Dictionary:
    """Sample the manifold and its derivative at every grid point.

    The grid must be finer than the array (more points than sensors), which
    the downstream M x M posterior reduction relies on.
    """
    if grid.point_count <= ula.sensor_count:
        raise ValueError("grid must have more points than the array has sensors")
    phase = np.pi * ula.offsets[:, None]
    thetas = grid.points
    a_mat = np.exp(1j * phase * np.cos(thetas)[None, :])
    b_mat = (-1j * phase * np.sin(thetas)[None, :]) * a_mat
    return Dictionary(
        A=np.ascontiguousarray(a_mat),
        B=np.ascontiguousarray(b_mat),
        grid=grid,
        ula=ula,
    )


def perturbed_manifold(dictionary: Dictionary, beta: np.ndarray) -> np.ndarray:
    """First-order manifold A + B*diag(beta) for per-grid-point offsets beta.

    Each offset must stay within half a grid cell of its point.
    """
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (dictionary.grid.point_count,):
        raise ValueError("beta length must match the grid")
    half = dictionary.grid.interval / 2.0
    if np.any(np.abs(beta) > half + _ANGLE_EPS):
        raise ValueError(f"offsets must lie in [-{half!r}, {half!r}]")
    if not np.any(beta):
        return dictionary.A.copy()
    return dictionary.A + dictionary.B * beta[None, :]
