"""Measurement corruption: multimodal GMM sensor noise plus gross outliers.

Every scalar sensor reading receives additive noise drawn from a fixed
four-component Gaussian mixture, rescaled so the noise standard deviation is
a target fraction (10%) of the mean absolute magnitude of the clean solution
field. A chosen fraction of readings is instead replaced by the clean value
plus a uniform draw from the disjoint high-magnitude band [k1*sigma_n,
k2*sigma_n] with a fair random sign. Ground-truth outlier labels are kept.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .pdes import ReferenceField, sensor_grid

DEFAULT_COMPONENTS = ((-9.0, 2.0), (-0.3, 4.0), (2.7, 0.6), (8.5, 1.0))


@dataclass(frozen=True)
class NoiseSpec:
    components: tuple = DEFAULT_COMPONENTS
    weights: tuple | None = None          # None -> equal weights
    target_scale_fraction: float = 0.10
    center_mean: bool = False             # subtract the mixture mean if True

    def __post_init__(self):
        if self.weights is not None:
            w = np.asarray(self.weights)
            if len(w) != len(self.components):
                raise ValueError("one weight per component required")
            if abs(w.sum() - 1.0) > 1e-12 or np.any(w < 0):
                raise ValueError("weights must be a probability vector")
        if any(s <= 0 for _, s in self.components):
            raise ValueError("component sigmas must be positive")

    @property
    def weight_array(self) -> np.ndarray:
        if self.weights is None:
            return np.full(len(self.components), 1.0 / len(self.components))
        return np.asarray(self.weights, dtype=float)

    def mixture_mean(self) -> float:
        mus = np.array([m for m, _ in self.components])
        return float(self.weight_array @ mus)

    def mixture_std(self) -> float:
        mus = np.array([m for m, _ in self.components])
        sigmas = np.array([s for _, s in self.components])
        second = self.weight_array @ (sigmas**2 + mus**2)
        return float(np.sqrt(second - self.mixture_mean() ** 2))

    def density(self, x: np.ndarray) -> np.ndarray:
        """Raw (unscaled) mixture pdf."""
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for w, (mu, sg) in zip(self.weight_array, self.components):
            out += w * np.exp(-0.5 * ((x - mu) / sg) ** 2) / (sg * np.sqrt(2 * np.pi))
        return out


@dataclass(frozen=True)
class OutlierSpec:
    ratio: float
    k1: float = 3.0
    k2: float = 10.0

    def __post_init__(self):
        if not 0.0 <= self.ratio < 1.0:
            raise ValueError("ratio must be in [0, 1)")
        if not 0.0 < self.k1 < self.k2:
            raise ValueError("need k2 > k1 > 0")


def sample_gmm(noise: NoiseSpec, n: int, seed=None) -> np.ndarray:
    """i.i.d. raw mixture samples (before rescaling)."""
    if n == 0:
        return np.empty(0)
    rng = np.random.default_rng(seed)
    comps = rng.choice(len(noise.components), size=n, p=noise.weight_array)
    mus = np.array([m for m, _ in noise.components])[comps]
    sigmas = np.array([s for _, s in noise.components])[comps]
    return mus + sigmas * rng.normal(size=n)


def calibrate_scale(noise: NoiseSpec, field_: ReferenceField, channel: int) -> float:
    """Scale c so that std(c * raw mixture) equals the target fraction of the
    mean absolute field magnitude for the channel."""
    mean_abs = field_.mean_abs(channel)
    if mean_abs == 0.0:
        raise ValueError("all-zero field: noise scale undefined")
    return noise.target_scale_fraction * mean_abs / noise.mixture_std()


@dataclass
class CorruptedDataset:
    """One row per scalar measurement on the sensor grid."""

    coords: np.ndarray        # [N x 3] (x, y, t)
    channel: np.ndarray       # [N] int
    clean: np.ndarray         # [N]
    observed: np.ndarray      # [N]
    is_outlier: np.ndarray    # [N] bool
    noise_sigma: np.ndarray = field(default_factory=lambda: np.empty(0))
    # per-channel std of the scaled noise (sigma_n); metadata, not per row
    noise_scale: np.ndarray = field(default_factory=lambda: np.empty(0))
    # per-channel multiplier c applied to raw mixture samples

    @property
    def n(self) -> int:
        return len(self.observed)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "t", "channel", "clean", "observed", "is_outlier"])
            for i in range(self.n):
                w.writerow([
                    f"{self.coords[i, 0]:.17g}", f"{self.coords[i, 1]:.17g}",
                    f"{self.coords[i, 2]:.17g}", int(self.channel[i]),
                    f"{self.clean[i]:.17g}", f"{self.observed[i]:.17g}",
                    int(self.is_outlier[i]),
                ])

    @classmethod
    def load_csv(cls, path) -> "CorruptedDataset":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["x", "y", "t", "channel", "clean", "observed", "is_outlier"]:
                raise ValueError(f"unexpected dataset header: {header}")
            rows = list(reader)
        n = len(rows)
        coords = np.empty((n, 3))
        channel = np.empty(n, dtype=int)
        clean = np.empty(n)
        observed = np.empty(n)
        outlier = np.empty(n, dtype=bool)
        for i, row in enumerate(rows):
            coords[i] = [float(row[0]), float(row[1]), float(row[2])]
            channel[i] = int(row[3])
            clean[i] = float(row[4])
            observed[i] = float(row[5])
            outlier[i] = bool(int(row[6]))
        return cls(coords, channel, clean, observed, outlier)


def inject(field_: ReferenceField, noise: NoiseSpec, outliers: OutlierSpec,
           seed=0, sensors_n: int = 15) -> CorruptedDataset:
    """Corrupt the sensor-grid readings of a reference field.

    Deterministic given the seed; the clean values and coordinates do not
    depend on it. Outlier count is round(ratio * N) without replacement.
    """
    sample = sensor_grid(field_, sensors_n)
    channels = sample.channels
    n_points = sample.n_points
    n = n_points * channels

    coords = np.repeat(sample.coords, channels, axis=0)
    channel = np.tile(np.arange(channels), n_points)
    clean = sample.clean.reshape(-1)

    scale = np.array([calibrate_scale(noise, field_, c) for c in range(channels)])
    sigma_n = scale * noise.mixture_std()

    rng = np.random.default_rng(seed)
    raw = sample_gmm(noise, n, seed=rng)
    if noise.center_mean:
        raw = raw - noise.mixture_mean()
    observed = clean + scale[channel] * raw

    n_out = int(round(outliers.ratio * n))
    out_idx = rng.choice(n, size=n_out, replace=False)
    magnitudes = rng.uniform(outliers.k1, outliers.k2, size=n_out)
    signs = np.where(rng.random(n_out) < 0.5, -1.0, 1.0)
    observed[out_idx] = clean[out_idx] + signs * magnitudes * sigma_n[channel[out_idx]]

    is_outlier = np.zeros(n, dtype=bool)
    is_outlier[out_idx] = True
    return CorruptedDataset(coords, channel, clean, observed, is_outlier,
                            noise_sigma=sigma_n, noise_scale=scale)
