"""Handcrafted per-channel EEG features (41 per channel).

Registry order per channel:

* temporal (10): curve length, average nonlinear energy, RMS, number of
  local extrema, zero crossings, kurtosis, skewness, Hjorth activity,
  mobility and complexity
* spectral (4): mean, maximum and minimum power frequency, total power
* time-frequency (24): mean / std / kurtosis of the former and later half
  of the A3, D3, D2, D1 coefficients of a periodic 3-level db5 transform
* nonlinear (3): approximate entropy, sample entropy, Hurst exponent

Degenerate inputs (zero variance, silent signals) map to fixed finite values
so a feature vector never holds NaN or Inf.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln

from .wavelet import dwt_db5

REGISTRY_VERSION = "kdf-feat-41/v1"
N_FEATURES = 41


class InvalidInputError(ValueError):
    """Signal does not meet a feature's preconditions."""


def _feature_names() -> list[str]:
    names = ["curve_length", "avg_nonlinear_energy", "rms", "n_extrema", "zcr",
             "kurtosis", "skewness", "hjorth_activity", "hjorth_mobility",
             "hjorth_complexity", "mean_pf", "max_pf", "min_pf", "total_power"]
    for band in ("A3", "D3", "D2", "D1"):
        for half in ("former", "later"):
            for stat in ("mean", "std", "kurt"):
                names.append(f"{band}_{half}_{stat}")
    names += ["apen", "sampen", "hurst"]
    return names


FEATURE_NAMES = _feature_names()
assert len(FEATURE_NAMES) == N_FEATURES


@dataclass(frozen=True)
class EegWindow:
    """One ``C x N`` signal window with its label (-1 = unlabeled)."""

    samples: np.ndarray
    sample_rate_hz: float
    label: int = -1
    subject_id: int = 0

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 16:
            raise InvalidInputError(f"window must be C x N with C>=1, N>=16; got {x.shape}")
        if not np.isfinite(x).all():
            raise InvalidInputError("window holds non-finite samples")
        if not self.sample_rate_hz > 0:
            raise InvalidInputError("sample rate must be positive")
        object.__setattr__(self, "samples", x)

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    registry_version: str = REGISTRY_VERSION


def _vec(x, min_len: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size < min_len:
        raise InvalidInputError(f"{what} needs at least {min_len} samples, got {x.size}")
    if not np.isfinite(x).all():
        raise InvalidInputError(f"{what} got non-finite samples")
    return x


def _moments(x: np.ndarray) -> tuple[float, float]:
    """Standardised third and fourth central moments (plain m4/m2**2)."""
    if x.size == 0 or np.ptp(x) == 0:
        return 0.0, 0.0
    xc = x - x.mean()
    m2 = np.mean(xc * xc)
    m3 = np.mean(xc**3)
    m4 = np.mean(xc**4)
    return float(m3 / m2**1.5), float(m4 / m2**2)


def _kurtosis(x: np.ndarray) -> float:
    return _moments(x)[1]


# ---------------------------------------------------------------- temporal
def curve_length(x) -> float:
    x = _vec(x, 2, "curve_length")
    return float(np.abs(np.diff(x)).sum())


def avg_nonlinear_energy(x) -> float:
    """Mean magnitude of the Teager operator ``x[i]**2 - x[i-1]*x[i+1]``."""
    x = _vec(x, 3, "avg_nonlinear_energy")
    return float(np.abs(x[1:-1] ** 2 - x[:-2] * x[2:]).mean())


class TemporalStats(NamedTuple):
    rms: float
    n_extrema: int
    zcr: int
    kurtosis: float
    skewness: float


def temporal_stats(x) -> TemporalStats:
    x = _vec(x, 4, "temporal_stats")
    d = np.diff(x)
    skew, kurt = _moments(x)
    return TemporalStats(
        rms=float(np.sqrt(np.mean(x * x))),
        n_extrema=int(np.count_nonzero(d[:-1] * d[1:] < 0)),
        zcr=int(np.count_nonzero(x[:-1] * x[1:] < 0)),
        kurtosis=kurt,
        skewness=skew,
    )


class Hjorth(NamedTuple):
    activity: float
    mobility: float
    complexity: float


def _ratio_sqrt(num: float, den: float) -> float:
    return float(np.sqrt(num / den)) if den > 0 else 0.0


def hjorth(x) -> Hjorth:
    x = _vec(x, 3, "hjorth")
    dx = np.diff(x)
    ddx = np.diff(dx)
    v0, v1 = np.var(x), np.var(dx)
    v2 = np.var(ddx) if ddx.size else 0.0
    if np.ptp(x) == 0:
        return Hjorth(0.0, 0.0, 0.0)
    mob = _ratio_sqrt(v1, v0)
    mob_d = _ratio_sqrt(v2, v1)
    return Hjorth(float(v0), mob, mob_d / mob if mob > 0 else 0.0)


# ---------------------------------------------------------------- spectral
class Spectral(NamedTuple):
    mean_pf: float
    max_pf: float
    min_pf: float
    total_power: float


def periodogram(x, fs: float) -> tuple[np.ndarray, np.ndarray]:
    """One-sided rectangular-window PSD. ``sum(P) * fs/N == mean(x**2)``."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    spec = np.abs(np.fft.rfft(x)) ** 2 / (fs * n)
    if n % 2 == 0:
        spec[1:-1] *= 2
    else:
        spec[1:] *= 2
    return np.fft.rfftfreq(n, d=1.0 / fs), spec


def spectral_features(x, fs: float) -> Spectral:
    x = _vec(x, 64, "spectral_features")
    if x.size & (x.size - 1):
        raise InvalidInputError(f"spectral_features needs a power-of-two length, got {x.size}")
    if not fs > 0:
        raise InvalidInputError("sample rate must be positive")
    freqs, psd = periodogram(x, fs)
    total = psd.sum()
    if total == 0:
        return Spectral(0.0, 0.0, 0.0, 0.0)
    body = psd[1:]
    return Spectral(
        mean_pf=float((freqs * psd).sum() / total),
        max_pf=float(freqs[1 + np.argmax(body)]),
        min_pf=float(freqs[1 + np.argmin(body)]),
        total_power=float(total * fs / x.size),
    )


# ---------------------------------------------------------------- time-frequency
def timefreq_features(x) -> np.ndarray:
    """24 half-band statistics in A3, D3, D2, D1 x former/later x mean/std/kurt order."""
    x = _vec(x, 8, "timefreq_features")
    try:
        bands = dwt_db5(x, levels=3)
    except ValueError as exc:
        raise InvalidInputError(str(exc)) from exc
    out = []
    for c in bands:
        cut = (c.size + 1) // 2
        for half in (c[:cut], c[cut:]):
            if half.size == 0:
                out += [0.0, 0.0, 0.0]
                continue
            flat = np.ptp(half) == 0
            out += [float(half.mean()), 0.0 if flat else float(half.std()), _kurtosis(half)]
    return np.array(out)


# ---------------------------------------------------------------- nonlinear
class Nonlinear(NamedTuple):
    apen: float
    sampen: float
    hurst: float


def _cheb_within(x: np.ndarray, m: int, count: int, r: float) -> np.ndarray:
    """``within[i, j]`` when templates ``x[i:i+m]`` and ``x[j:j+m]`` are r-close."""
    diff = np.abs(x[:, None] - x[None, :])
    d = diff[:count, :count].copy()
    for k in range(1, m):
        np.maximum(d, diff[k:k + count, k:k + count], out=d)
    return d <= r


def approximate_entropy(x, m: int = 2, r: float | None = None) -> float:
    x = _vec(x, m + 2, "approximate_entropy")
    if np.ptp(x) == 0:
        return 0.0
    sd = x.std()
    r = 0.2 * sd if r is None else r
    n = x.size

    def phi(mm):
        count = n - mm + 1
        c = _cheb_within(x, mm, count, r).mean(axis=1)
        return np.mean(np.log(c))

    return float(phi(m) - phi(m + 1))


def sample_entropy(x, m: int = 2, r: float | None = None) -> float:
    """Sample entropy with N-m templates for both lengths.

    When no (m+1)-matches exist the value saturates at
    ``log((N-m)(N-m-1)/2)``, the largest finite value the estimator can reach.
    """
    x = _vec(x, m + 2, "sample_entropy")
    if np.ptp(x) == 0:
        return 0.0
    sd = x.std()
    r = 0.2 * sd if r is None else r
    n = x.size
    count = n - m
    # symmetric match matrices with a true diagonal: pairs i < j only
    b = (np.count_nonzero(_cheb_within(x, m, count, r)) - count) // 2
    a = (np.count_nonzero(_cheb_within(x, m + 1, count, r)) - count) // 2
    if a == 0 or b == 0:
        return float(np.log(count * (count - 1) / 2))
    return float(-np.log(a / b))


def expected_rs(n: int) -> float:
    """Anis-Lloyd expected R/S of ``n`` i.i.d. samples, with Peters' small-n factor.

    The gamma ratio is taken in log space, so no large-n approximation is needed.
    """
    i = np.arange(1, n)
    tail = np.sum(np.sqrt((n - i) / i))
    lead = np.exp(gammaln((n - 1) / 2) - gammaln(n / 2)) / np.sqrt(np.pi)
    return float((n - 0.5) / n * lead * tail)


def hurst_rs(x, min_block: int = 8) -> float:
    """Bias-corrected rescaled-range Hurst exponent over dyadic block sizes.

    Mean R/S per block size is divided by its expectation under i.i.d. noise;
    the exponent is 0.5 plus the log-log least-squares slope of that ratio.
    """
    x = _vec(x, 2 * min_block, "hurst_rs")
    if np.ptp(x) == 0:
        return 0.5
    sizes, rs = [], []
    n = min_block
    while n <= x.size:
        blocks = x[: (x.size // n) * n].reshape(-1, n)
        dev = blocks - blocks.mean(axis=1, keepdims=True)
        z = np.cumsum(dev, axis=1)
        r = z.max(axis=1) - z.min(axis=1)
        s = blocks.std(axis=1)
        ok = s > 0
        if ok.any():
            sizes.append(n)
            rs.append(np.mean(r[ok] / s[ok]) / expected_rs(n))
        n *= 2
    if len(sizes) < 2:
        return 0.5
    slope = np.polyfit(np.log(sizes), np.log(rs), 1)[0]
    return float(0.5 + slope)


def nonlinear_features(x) -> Nonlinear:
    x = _vec(x, 64, "nonlinear_features")
    if np.ptp(x) == 0:
        return Nonlinear(0.0, 0.0, 0.5)
    return Nonlinear(approximate_entropy(x), sample_entropy(x), hurst_rs(x))


# ---------------------------------------------------------------- assembly
def channel_features(x, fs: float) -> np.ndarray:
    """The 41 registry features of one channel."""
    x = np.asarray(x, dtype=np.float64)
    ts = temporal_stats(x)
    hj = hjorth(x)
    sp = spectral_features(x, fs)
    nl = nonlinear_features(x)
    head = [curve_length(x), avg_nonlinear_energy(x), ts.rms, ts.n_extrema, ts.zcr,
            ts.kurtosis, ts.skewness, hj.activity, hj.mobility, hj.complexity,
            sp.mean_pf, sp.max_pf, sp.min_pf, sp.total_power]
    out = np.concatenate([np.array(head, dtype=np.float64), timefreq_features(x),
                          np.array(nl, dtype=np.float64)])
    return out


def extract_features(w: EegWindow) -> FeatureVector:
    """Channel-major concatenation of per-channel features (length ``41*C``)."""
    vals = np.concatenate([channel_features(row, w.sample_rate_hz) for row in w.samples])
    if not np.isfinite(vals).all():
        raise FloatingPointError("non-finite feature value")
    return FeatureVector(vals)


def extract_feature_matrix(samples: np.ndarray, fs: float) -> np.ndarray:
    """Features for a stack of windows shaped ``(n, C, N)`` -> ``(n, 41*C)``."""
    samples = np.asarray(samples, dtype=np.float64)
    return np.stack([extract_features(EegWindow(w, fs)).values for w in samples])


def feature_column_names(n_channels: int) -> list[str]:
    return [f"f{i:03d}" for i in range(N_FEATURES * n_channels)]


def write_feature_csv(path, subjects, labels, features: np.ndarray, config: dict | None = None):
    """Feature cache: ``subject,label,f000..`` with round-trip exact floats.

    A single leading ``#`` line carries the producing run's config when given.
    """
    features = np.asarray(features)
    n_cols = features.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if config is not None:
            fh.write("# " + json.dumps(config, sort_keys=True) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject", "label"] + [f"f{i:03d}" for i in range(n_cols)])
        for s, y, row in zip(subjects, labels, features):
            writer.writerow([int(s), int(y)] + [repr(float(v)) for v in row])


def read_feature_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    body = rows[1:]
    subjects = np.array([int(r[0]) for r in body], dtype=np.int64)
    labels = np.array([int(r[1]) for r in body], dtype=np.int64)
    feats = np.array([[float(v) for v in r[2:]] for r in body], dtype=np.float64)
    return subjects, labels, feats
