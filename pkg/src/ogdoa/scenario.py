"""Ground-truth scenarios, measurement synthesis, and model validation.

Measurements are synthesized with exact steering vectors at the true
angles, so the gap between the data and the first-order dictionary model
(the linearization residual) is real and can be inspected via
``total_noise`` and checked for Gaussianity with ``ks_gaussian_test``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import ndtr

from .arraymodel import Dictionary, Grid, UlaConfig, perturbed_manifold, steering_vector

__all__ = [
    "Scenario",
    "SnapshotData",
    "GroundTruthMap",
    "KsResult",
    "draw_doas",
    "generate_sources",
    "synthesize",
    "ground_truth_map",
    "total_noise",
    "ks_gaussian_test",
    "inject_outliers",
    "load_scenario",
    "parse_snr",
    "write_snapshots",
    "read_snapshots",
]

# Asymptotic two-sided 5% critical value of the one-sample KS statistic,
# to be divided by sqrt(sample count).
KS_CRITICAL_5PCT = 1.358


SOURCE_MODELS = ("gaussian", "unit_modulus")


@dataclass(frozen=True, eq=False)
class Scenario:
    """One ground-truth configuration: sources, snapshot count, SNR, seed.

    ``source_model`` selects the signal amplitudes: ``gaussian`` draws
    unit-variance circular complex Gaussians (so single-snapshot amplitudes
    fade), ``unit_modulus`` draws unit-amplitude signals with uniform
    random phase (constant per-trial power, the usual choice for
    single-snapshot accuracy studies).
    """

    doas: np.ndarray  # radians, length K
    snapshot_count: int
    snr_db: float
    rng_seed: int
    source_model: str = "gaussian"

    def __post_init__(self) -> None:
        doas = np.asarray(self.doas, dtype=float)
        if doas.ndim != 1 or doas.size < 1:
            raise ValueError("need at least one source angle")
        if np.any(doas < 0) or np.any(doas > np.pi):
            raise ValueError("source angles must lie in [0, pi]")
        if np.unique(doas).size != doas.size:
            raise ValueError("source angles must be distinct")
        if self.snapshot_count < 1:
            raise ValueError("need at least one snapshot")
        if self.source_model not in SOURCE_MODELS:
            raise ValueError(f"unknown source model {self.source_model!r}")
        object.__setattr__(self, "doas", doas)

    @property
    def source_count(self) -> int:
        return self.doas.size

    @property
    def noise_variance(self) -> float:
        """Per-entry complex noise variance implied by the SNR (0 for SNR = inf)."""
        if math.isinf(self.snr_db):
            return 0.0
        return 10.0 ** (-self.snr_db / 10.0)


@dataclass(frozen=True, eq=False)
class SnapshotData:
    """Synthesized measurements Y = A(theta) S + E with the exact manifold."""

    Y: np.ndarray  # M x T
    S: np.ndarray  # K x T source signals
    E: np.ndarray  # M x T measurement noise
    scenario: Scenario


@dataclass(frozen=True, eq=False)
class GroundTruthMap:
    """True sparse representation of a scenario on a given grid."""

    nearest_indices: np.ndarray  # length K
    true_beta: np.ndarray        # length N, zero away from the sources
    true_x: np.ndarray           # N x T, K nonzero rows


@dataclass(frozen=True)
class KsResult:
    statistic: float
    passed: bool
    threshold: float
    sample_count: int


def draw_doas(intervals: Sequence[Sequence[float]], rng: np.random.Generator) -> np.ndarray:
    """Draw one angle uniformly from each interval (radians), in order.

    Intervals must lie in [0, pi] and be pairwise disjoint.
    """
    spans = [(float(lo), float(hi)) for lo, hi in intervals]
    if not spans:
        raise ValueError("need at least one interval")
    for lo, hi in spans:
        if not (0.0 <= lo <= hi <= np.pi):
            raise ValueError(f"interval [{lo}, {hi}] invalid or outside [0, pi]")
    for (lo1, hi1), (lo2, hi2) in zip(sorted(spans), sorted(spans)[1:]):
        if hi1 > lo2:
            raise ValueError("intervals must be pairwise disjoint")
    return np.array([lo if lo == hi else rng.uniform(lo, hi) for lo, hi in spans])


def generate_sources(source_count: int, snapshot_count: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-variance circular complex Gaussian source signals, K x T."""
    if source_count < 1 or snapshot_count < 1:
        raise ValueError("source and snapshot counts must be positive")
    shape = (source_count, snapshot_count)
    return np.sqrt(0.5) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def synthesize(scenario: Scenario, ula: UlaConfig) -> SnapshotData:
    """Simulate the array output for a scenario.

    Sources are drawn first, then noise, from a generator seeded with
    ``scenario.rng_seed``, so the same scenario always yields the same data.
    """
    if scenario.source_count >= ula.sensor_count:
        raise ValueError("need fewer sources than sensors")
    rng = np.random.default_rng(scenario.rng_seed)
    k, t = scenario.source_count, scenario.snapshot_count
    if scenario.source_model == "unit_modulus":
        signals = np.exp(2j * np.pi * rng.uniform(size=(k, t)))
    else:
        signals = generate_sources(k, t, rng)
    manifold = np.column_stack([steering_vector(th, ula) for th in scenario.doas])
    sigma2 = scenario.noise_variance
    if sigma2 == 0.0:
        noise = np.zeros((ula.sensor_count, t), dtype=complex)
    else:
        noise = np.sqrt(sigma2 / 2.0) * (
            rng.standard_normal((ula.sensor_count, t))
            + 1j * rng.standard_normal((ula.sensor_count, t))
        )
    return SnapshotData(Y=manifold @ signals + noise, S=signals, E=noise, scenario=scenario)


def ground_truth_map(data: SnapshotData, grid: Grid) -> GroundTruthMap:
    """Map each true source to its nearest grid point.

    Fails if two sources share a grid point; such scenarios are rejected
    rather than modeled.
    """
    scenario = data.scenario
    indices = np.array([int(np.argmin(np.abs(grid.points - th))) for th in scenario.doas])
    if np.unique(indices).size != indices.size:
        raise ValueError("two sources map to the same grid point")
    true_beta = np.zeros(grid.point_count)
    true_x = np.zeros((grid.point_count, scenario.snapshot_count), dtype=complex)
    for k, n in enumerate(indices):
        true_beta[n] = scenario.doas[k] - grid.points[n]
        true_x[n] = data.S[k]
    return GroundTruthMap(nearest_indices=indices, true_beta=true_beta, true_x=true_x)


def total_noise(data: SnapshotData, dictionary: Dictionary, gt: GroundTruthMap) -> np.ndarray:
    """Residual of the first-order model: measurement noise plus linearization error."""
    phi = perturbed_manifold(dictionary, gt.true_beta)
    return data.Y - phi @ gt.true_x


def ks_gaussian_test(noise: np.ndarray, sigma2: float) -> KsResult:
    """One-sample two-sided KS test of pooled real/imag parts against N(0, 1).

    Parts are normalized by sqrt(sigma2/2), the per-component standard
    deviation of circular complex noise with variance sigma2. Passes when
    the statistic is below the asymptotic 5% critical value 1.358/sqrt(n).
    """
    noise = np.asarray(noise)
    if noise.size == 0:
        raise ValueError("empty sample")
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    z = np.concatenate([noise.real.ravel(), noise.imag.ravel()]) / np.sqrt(sigma2 / 2.0)
    n = z.size
    cdf = ndtr(np.sort(z))
    steps = np.arange(1, n + 1) / n
    statistic = float(max(np.max(steps - cdf), np.max(cdf - (steps - 1.0 / n))))
    threshold = KS_CRITICAL_5PCT / np.sqrt(n)
    return KsResult(statistic=statistic, passed=statistic < threshold, threshold=threshold, sample_count=n)


def inject_outliers(y: np.ndarray, count: int, kappa: float, rng: np.random.Generator) -> np.ndarray:
    """Scale `count` distinct uniformly chosen entries of y by kappa."""
    if count < 0 or count > y.size:
        raise ValueError("outlier count out of range")
    if kappa < 0:
        raise ValueError("outlier ratio must be nonnegative")
    out = y.copy()
    if count:
        idx = rng.choice(y.size, size=count, replace=False)
        out.flat[idx] *= kappa
    return out


def load_scenario(spec: Mapping, rng: np.random.Generator | None = None) -> Scenario:
    """Build a Scenario from a mapping with degree-valued fields.

    Accepts either fixed angles (``doas_deg``) or per-source intervals
    (``intervals_deg``) to draw from; angles drawn from intervals consume
    the generator seeded by ``seed``, and the scenario then gets its own
    derived synthesis seed.
    """
    t = int(spec.get("T", spec.get("snapshots", 1)))
    snr = parse_snr(spec.get("snr_db", math.inf))
    seed = int(spec.get("seed", 0))
    model = spec.get("source_model", "gaussian")
    declared_k = spec.get("K")
    if declared_k is not None:
        angles = spec.get("doas_deg", spec.get("intervals_deg", ()))
        if int(declared_k) != len(angles):
            raise ValueError("K does not match the number of angles/intervals")
    if "doas_deg" in spec:
        doas = np.deg2rad(np.asarray(spec["doas_deg"], dtype=float))
        return Scenario(doas=doas, snapshot_count=t, snr_db=snr, rng_seed=seed, source_model=model)
    if "intervals_deg" in spec:
        rng = np.random.default_rng(seed) if rng is None else rng
        intervals = [(math.radians(lo), math.radians(hi)) for lo, hi in spec["intervals_deg"]]
        doas = draw_doas(intervals, rng)
        synth_seed = int(rng.integers(0, 2**63))
        return Scenario(
            doas=doas, snapshot_count=t, snr_db=snr, rng_seed=synth_seed, source_model=model
        )
    raise ValueError("scenario needs either 'doas_deg' or 'intervals_deg'")


def parse_snr(value) -> float:
    """Parse an SNR value in dB; accepts numbers and the strings inf/infinity."""
    if isinstance(value, str):
        text = value.strip().lower().lstrip("+")
        if text in ("inf", "infinity"):
            return math.inf
        return float(text)
    return float(value)


def write_snapshots(path, y: np.ndarray) -> None:
    """Write a complex snapshot matrix as CSV, one row per sensor, re/im interleaved."""
    y = np.atleast_2d(np.asarray(y, dtype=complex))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in y:
            flat = np.empty(2 * row.size)
            flat[0::2] = row.real
            flat[1::2] = row.imag
            writer.writerow([repr(float(v)) for v in flat])


def read_snapshots(path) -> np.ndarray:
    """Read a snapshot matrix written by :func:`write_snapshots`."""
    rows = []
    with open(path, newline="") as fh:
        for record in csv.reader(fh):
            if not record:
                continue
            vals = np.array([float(v) for v in record])
            if vals.size % 2:
                raise ValueError("snapshot CSV rows must interleave re,im pairs")
            rows.append(vals[0::2] + 1j * vals[1::2])
    if not rows:
        raise ValueError("empty snapshot file")
    return np.vstack(rows)
