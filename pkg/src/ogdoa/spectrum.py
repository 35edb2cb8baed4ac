"""Power spectrum over the grid, DOA extraction, and error metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .arraymodel import Grid
from .inference import Posterior

__all__ = [
    "Spectrum",
    "DoaEstimate",
    "estimate_powers",
    "extract_doas",
    "mse",
    "mse_db",
    "lower_bound",
    "write_spectrum_csv",
]


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Estimated per-direction source power with the refined angle of each point."""

    powers: np.ndarray
    grid_angles: np.ndarray
    offsets: np.ndarray

    @property
    def refined_angles(self) -> np.ndarray:
        return self.grid_angles + self.offsets


@dataclass(frozen=True, eq=False)
class DoaEstimate:
    """K refined angle estimates, ascending, with their grid peaks."""

    angles: np.ndarray
    peak_indices: np.ndarray
    peak_powers: np.ndarray


def estimate_powers(
    posterior: Posterior,
    grid: Grid,
    beta: np.ndarray,
    snapshot_count: int,
) -> Spectrum:
    """Per-direction power from the converged posterior.

    The posterior mean has one column per working snapshot (all T of them,
    or the retained subspace dimension after SVD reduction); the variance
    contribution scales with that column count, which makes the reduced
    and unreduced paths agree whenever they see the same data.
    """
    t_working = posterior.mu.shape[1]
    sdiag = np.maximum(posterior.sigma.diagonal().real, 0.0)
    powers = ((np.abs(posterior.mu) ** 2).sum(axis=1) + t_working * sdiag) / snapshot_count
    return Spectrum(powers=powers, grid_angles=grid.points.copy(), offsets=np.asarray(beta, dtype=float).copy())


def extract_doas(spectrum: Spectrum, source_count: int) -> DoaEstimate:
    """Refined angles of the K strongest spectrum peaks.

    Peaks are local maxima (one-sided at the grid ends); if fewer than K
    exist, the largest remaining entries fill in. Ties break toward lower
    grid index, and the result is sorted by angle.
    """
    p = spectrum.powers
    n = p.size
    if source_count < 1 or source_count > n:
        raise ValueError("source count out of range")
    if not np.any(p > 0):
        raise ValueError("spectrum is identically zero")
    is_max = np.ones(n, dtype=bool)
    is_max[1:] &= p[1:] >= p[:-1]
    is_max[:-1] &= p[:-1] >= p[1:]
    ranked_max = sorted(np.flatnonzero(is_max), key=lambda i: (-p[i], i))
    chosen = ranked_max[:source_count]
    if len(chosen) < source_count:
        rest = sorted(np.flatnonzero(~is_max), key=lambda i: (-p[i], i))
        chosen += rest[: source_count - len(chosen)]
    refined = spectrum.refined_angles
    order = sorted(chosen, key=lambda i: (refined[i], i))
    idx = np.array(order, dtype=int)
    return DoaEstimate(angles=refined[idx], peak_indices=idx, peak_powers=p[idx])


def mse(estimates: Sequence[DoaEstimate], truths: Sequence[np.ndarray]) -> float:
    """Mean squared angle error in radians^2, averaged over trials and sources.

    Estimates and truths are matched within each trial by ascending order,
    which is unambiguous for sources separated by more than twice the
    largest error.
    """
    if len(estimates) != len(truths):
        raise ValueError("need one truth vector per estimate")
    if not estimates:
        raise ValueError("need at least one trial")
    total = 0.0
    count = 0
    for est, truth in zip(estimates, truths):
        truth = np.sort(np.asarray(truth, dtype=float))
        if est.angles.size != truth.size:
            raise ValueError("estimate/truth source counts differ")
        total += float(np.sum((est.angles - truth) ** 2))
        count += truth.size
    return total / count


def mse_db(value: float) -> float:
    """Mean squared error in decibels; zero maps to -inf."""
    return 10.0 * math.log10(value) if value > 0 else -math.inf


def lower_bound(grid_interval: float) -> float:
    """MSE floor (radians^2) of any estimator confined to grid points.

    Equals the variance of a uniform offset over one grid cell, r^2/12.
    """
    if grid_interval <= 0:
        raise ValueError("grid interval must be positive")
    return grid_interval * grid_interval / 12.0


def write_spectrum_csv(path, spectrum: Spectrum) -> None:
    """Spectrum export with angles in degrees."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["grid_deg", "power", "beta_deg", "refined_deg"])
        refined = spectrum.refined_angles
        for i in range(spectrum.powers.size):
            writer.writerow(
                [
                    repr(math.degrees(spectrum.grid_angles[i])),
                    repr(float(spectrum.powers[i])),
                    repr(math.degrees(spectrum.offsets[i])),
                    repr(math.degrees(refined[i])),
                ]
            )
