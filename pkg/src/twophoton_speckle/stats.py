"""Estimators over Monte Carlo speckle samples.

A :class:`SampleSet` keeps power sums of I1 and I2 per *segment*, where a
segment is the intersection of one RNG block with one jackknife group.
Totals are reduced with :func:`math.fsum`, which is exactly rounded, so
merging partial sets in any order or grouping gives bit-identical
moments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

__all__ = [
    "CHANNELS",
    "Estimate",
    "HistogramSpec",
    "Histogram",
    "SampleSet",
    "merge",
    "mean",
    "variance",
    "visibility",
    "skewness",
    "purity_estimate",
    "histogram",
    "ks_distance",
    "ks_test",
    "summary",
]

CHANNELS = ("I1", "I2")
MIN_COUNT = 100
DEFAULT_GROUPS = 100


def _channel(channel) -> int:
    try:
        return CHANNELS.index(channel)
    except ValueError:
        raise ValueError(f"channel must be one of {CHANNELS}, got {channel!r}") from None


@dataclass(frozen=True)
class Estimate:
    value: float
    std_error: float

    def __post_init__(self):
        if not math.isfinite(self.std_error) or self.std_error < 0:
            raise ValueError(f"invalid standard error {self.std_error!r}")

    def within(self, target: float, n_sigma: float = 3.0) -> bool:
        return abs(self.value - target) <= n_sigma * self.std_error

    def as_dict(self) -> dict:
        return {"value": self.value, "std_error": self.std_error}


@dataclass(frozen=True)
class HistogramSpec:
    bins: int
    lo: float
    hi: float
    log: bool = False

    def __post_init__(self):
        if self.bins < 2:
            raise ValueError("histogram needs at least 2 bins")
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or not self.hi > self.lo:
            raise ValueError(f"invalid histogram range ({self.lo}, {self.hi})")
        if self.log and not self.lo > 0:
            raise ValueError("log-spaced histogram needs a positive lower edge")

    def edges(self) -> np.ndarray:
        if self.log:
            return np.geomspace(self.lo, self.hi, self.bins + 1)
        return np.linspace(self.lo, self.hi, self.bins + 1)


@dataclass(frozen=True)
class Histogram:
    """Binned counts; samples outside the edges go to under/overflow."""

    spec: HistogramSpec
    counts: np.ndarray
    underflow: int = 0
    overflow: int = 0

    @classmethod
    def from_values(cls, spec: HistogramSpec, values) -> "Histogram":
        values = np.asarray(values, dtype=float)
        edges = spec.edges()
        idx = np.searchsorted(edges, values, side="right") - 1
        # the top edge is inclusive
        idx[values == edges[-1]] = spec.bins - 1
        under = int(np.count_nonzero(idx < 0))
        over = int(np.count_nonzero(idx >= spec.bins))
        inside = idx[(idx >= 0) & (idx < spec.bins)]
        counts = np.bincount(inside, minlength=spec.bins).astype(np.int64)
        return cls(spec, counts, under, over)

    @property
    def edges(self) -> np.ndarray:
        return self.spec.edges()

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.underflow + self.overflow

    def density(self) -> np.ndarray:
        """``count / (N * width)`` with N the total including out-of-range samples."""
        if self.total == 0:
            raise ValueError("histogram is empty")
        return self.counts / (self.total * np.diff(self.edges))

    def __add__(self, other: "Histogram") -> "Histogram":
        if self.spec != other.spec:
            raise ValueError("cannot add histograms with different binning")
        return Histogram(self.spec, self.counts + other.counts, self.underflow + other.underflow, self.overflow + other.overflow)

    def to_csv(self) -> str:
        edges = self.edges
        lines = ["bin_left,bin_right,count,density"]
        dens = self.density() if self.total else np.zeros(self.spec.bins)
        for lo, hi, c, d in zip(edges[:-1], edges[1:], self.counts, dens):
            lines.append(f"{lo:.17g},{hi:.17g},{int(c)},{d:.17g}")
        return "\n".join(lines) + "\n"


class SampleSet:
    """Accumulated I1/I2 samples: segment power sums, histograms, raw subset."""

    def __init__(self, keys, counts, sums, n_groups, histograms=None, raw_ids=None, raw_values=None):
        self.keys = np.asarray(keys, dtype=np.int64).reshape(-1, 2)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.sums = np.asarray(sums, dtype=float).reshape(-1, 2, 4)
        self.n_groups = int(n_groups)
        self.histograms = dict(histograms or {})
        self.raw_ids = np.zeros(0, dtype=np.int64) if raw_ids is None else np.asarray(raw_ids, dtype=np.int64)
        self.raw_values = np.zeros((0, 2)) if raw_values is None else np.asarray(raw_values, dtype=float).reshape(-1, 2)

    @classmethod
    def from_values(
        cls,
        I1,
        I2,
        trial_ids=None,
        total_trials=None,
        n_groups=DEFAULT_GROUPS,
        block_id=0,
        hist_specs=None,
        retain=None,
    ) -> "SampleSet":
        """Accumulate one block of samples.

        ``trial_ids`` default to ``0..n-1`` and ``total_trials`` to ``n``;
        trial ``t`` belongs to jackknife group ``t * n_groups // total_trials``.
        ``retain`` is a boolean mask of samples kept raw (default: all).
        """
        values = np.column_stack([np.asarray(I1, dtype=float), np.asarray(I2, dtype=float)])
        n = len(values)
        trial_ids = np.arange(n, dtype=np.int64) if trial_ids is None else np.asarray(trial_ids, dtype=np.int64)
        total_trials = n if total_trials is None else int(total_trials)
        n_groups = max(1, min(int(n_groups), total_trials))
        groups = trial_ids * n_groups // total_trials
        present = np.unique(groups)
        keys, counts, sums = [], [], []
        for g in present:
            sel = values[groups == g]
            keys.append((block_id, g))
            counts.append(len(sel))
            sums.append([[np.sum(sel[:, ch] ** p) for p in (1, 2, 3, 4)] for ch in (0, 1)])
        hists = {}
        for name, spec in (hist_specs or {}).items():
            hists[name] = Histogram.from_values(spec, values[:, _channel(name)])
        retain = np.ones(n, dtype=bool) if retain is None else np.asarray(retain, dtype=bool)
        return cls(keys, counts, np.reshape(sums, (-1, 2, 4)), n_groups, hists, trial_ids[retain], values[retain])

    # --- reductions ---------------------------------------------------------

    @property
    def count(self) -> int:
        return int(self.counts.sum())

    def power_sums(self, channel) -> np.ndarray:
        """``[sum x, sum x^2, sum x^3, sum x^4]`` for one channel."""
        ch = _channel(channel)
        return np.array([math.fsum(self.sums[:, ch, p]) for p in range(4)])

    def raw_moments(self, channel) -> np.ndarray:
        """``[<x>, <x^2>, <x^3>, <x^4>]``."""
        if self.count == 0:
            raise ValueError("sample set is empty")
        return self.power_sums(channel) / self.count

    def group_table(self):
        """Per-group ``(counts[G], sums[G, 2, 4])`` reduced exactly."""
        groups = self.keys[:, 1]
        gc = np.zeros(self.n_groups, dtype=np.int64)
        gs = np.zeros((self.n_groups, 2, 4))
        for g in range(self.n_groups):
            sel = groups == g
            gc[g] = self.counts[sel].sum()
            for ch in range(2):
                for p in range(4):
                    gs[g, ch, p] = math.fsum(self.sums[sel, ch, p])
        return gc, gs

    def raw(self, channel) -> np.ndarray:
        """Retained raw samples of one channel in trial order."""
        order = np.argsort(self.raw_ids, kind="stable")
        return self.raw_values[order, _channel(channel)]

    @property
    def raw_trial_ids(self) -> np.ndarray:
        return np.sort(self.raw_ids)

    def samples_csv(self) -> str:
        order = np.argsort(self.raw_ids, kind="stable")
        lines = ["trial_id,I1,I2"]
        for t, (a, b) in zip(self.raw_ids[order], self.raw_values[order]):
            lines.append(f"{int(t)},{a:.17g},{b:.17g}")
        return "\n".join(lines) + "\n"


def merge(*sets: SampleSet) -> SampleSet:
    """Union of partial sample sets covering disjoint trials."""
    if not sets:
        raise ValueError("nothing to merge")
    n_groups = {s.n_groups for s in sets}
    if len(n_groups) != 1:
        raise ValueError("cannot merge sample sets with different jackknife groupings")
    keys = np.concatenate([s.keys for s in sets])
    order = np.lexsort((keys[:, 1], keys[:, 0]))
    keys = keys[order]
    if len(keys) > 1 and np.any(np.all(keys[1:] == keys[:-1], axis=1)):
        raise ValueError("sample sets overlap (duplicate segment)")
    counts = np.concatenate([s.counts for s in sets])[order]
    sums = np.concatenate([s.sums for s in sets])[order]
    hists = {}
    for s in sets:
        for name, h in s.histograms.items():
            hists[name] = hists[name] + h if name in hists else h
    raw_ids = np.concatenate([s.raw_ids for s in sets])
    raw_values = np.concatenate([s.raw_values for s in sets])
    ro = np.argsort(raw_ids, kind="stable")
    return SampleSet(keys, counts, sums, n_groups.pop(), hists, raw_ids[ro], raw_values[ro])


# --- estimators -------------------------------------------------------------


def _require(samples: SampleSet, minimum=MIN_COUNT):
    if samples.count < minimum:
        raise ValueError(f"need at least {minimum} samples, have {samples.count}")


def _central(m):
    m1, m2, m3, m4 = m
    mu2 = m2 - m1**2
    mu3 = m3 - 3 * m1 * m2 + 2 * m1**3
    mu4 = m4 - 4 * m1 * m3 + 6 * m1**2 * m2 - 3 * m1**4
    return mu2, mu3, mu4


def mean(samples: SampleSet, channel) -> Estimate:
    _require(samples, 2)
    m = samples.raw_moments(channel)
    mu2 = _central(m)[0]
    return Estimate(float(m[0]), math.sqrt(max(mu2, 0.0) / samples.count))


def variance(samples: SampleSet, channel) -> Estimate:
    """Sample variance with the large-n standard error ``sqrt((mu4 - mu2^2)/n)``."""
    _require(samples, 2)
    n = samples.count
    mu2, _, mu4 = _central(samples.raw_moments(channel))
    return Estimate(float(mu2 * n / (n - 1)), math.sqrt(max(mu4 - mu2**2, 0.0) / n))


def _visibility(m1, m2):
    return m2 / m1**2 - 1.0


def visibility(samples: SampleSet, channel) -> Estimate:
    """Speckle visibility ``<I^2>/<I>^2 - 1`` with a delta-method error."""
    _require(samples)
    m1, m2, m3, m4 = samples.raw_moments(channel)
    if m1 == 0:
        raise ValueError("visibility undefined for zero mean")
    n = samples.count
    g1 = -2.0 * m2 / m1**3
    g2 = 1.0 / m1**2
    var_m1 = m2 - m1**2
    cov = m3 - m1 * m2
    var_m2 = m4 - m2**2
    var = (g1 * g1 * var_m1 + 2 * g1 * g2 * cov + g2 * g2 * var_m2) / n
    return Estimate(float(_visibility(m1, m2)), math.sqrt(max(var, 0.0)))


def skewness(samples: SampleSet, channel) -> Estimate:
    """Sample skewness; the error is the normal-theory ``sqrt(6/n)``."""
    _require(samples)
    mu2, mu3, _ = _central(samples.raw_moments(channel))
    return Estimate(float(mu3 / mu2**1.5), math.sqrt(6.0 / samples.count))


def _purity_from_sums(count, s):
    m = s[:, :2] / count
    if m[0, 0] == 0 or m[1, 0] == 0:
        raise ValueError("purity undefined for zero mean")
    v1 = _visibility(m[0, 0], m[0, 1])
    v2 = _visibility(m[1, 0], m[1, 1])
    return v2 - 2.0 * v1


def purity_estimate(samples: SampleSet) -> Estimate:
    """``V2 - 2 V1`` with a delete-one-group jackknife standard error."""
    _require(samples)
    gc, gs = samples.group_table()
    keep = gc > 0
    gc, gs = gc[keep], gs[keep]
    total_c = samples.count
    total_s = np.array([[samples.power_sums(ch)[p] for p in range(4)] for ch in CHANNELS])
    value = _purity_from_sums(total_c, total_s)
    G = len(gc)
    if G < 2:
        raise ValueError("jackknife needs at least two groups")
    loo = np.array([_purity_from_sums(total_c - gc[g], total_s - gs[g]) for g in range(G)])
    se = math.sqrt((G - 1) / G * np.sum((loo - loo.mean()) ** 2))
    return Estimate(float(value), se)


def histogram(samples: SampleSet, channel, bins: int, range: tuple[float, float], log: bool = False) -> Histogram:
    """Histogram of the retained raw samples of one channel."""
    spec = HistogramSpec(int(bins), float(range[0]), float(range[1]), log)
    values = samples.raw(channel)
    if len(values) == 0:
        raise ValueError(f"no raw samples retained for channel {channel}")
    return Histogram.from_values(spec, values)


def ks_distance(samples, channel, reference_cdf) -> float:
    """Sup-norm distance between the empirical CDF and ``reference_cdf``.

    ``samples`` is a :class:`SampleSet` (its retained raw samples are used)
    or a plain array.
    """
    values = samples.raw(channel) if isinstance(samples, SampleSet) else np.asarray(samples, dtype=float)
    if len(values) == 0:
        raise ValueError("no samples for KS distance")
    x = np.sort(values)
    F = np.asarray(reference_cdf(x), dtype=float)
    if np.any(~np.isfinite(F)) or F.min() < -1e-12 or F.max() > 1 + 1e-12 or np.any(np.diff(F) < -1e-12):
        raise ValueError("reference is not a valid CDF")
    n = len(x)
    upper = np.arange(1, n + 1) / n - F
    lower = F - np.arange(n) / n
    return float(max(upper.max(), lower.max(), 0.0))


def ks_test(samples, channel, reference_cdf) -> dict:
    """KS distance with its effective sample size and asymptotic p-value."""
    n = len(samples.raw(channel)) if isinstance(samples, SampleSet) else len(samples)
    d = ks_distance(samples, channel, reference_cdf)
    return {"distance": d, "n": n, "pvalue": float(sps.kstwo.sf(d, n))}


def summary(samples: SampleSet, ks: dict | None = None) -> dict:
    """JSON summary of a run; estimators below 100 samples are ``null``."""
    out = {"n": samples.count}
    enough = samples.count >= MIN_COUNT
    for ch in CHANNELS:
        if samples.count >= 2:
            out[f"mean_{ch}"] = mean(samples, ch).value
            out[f"var_{ch}"] = variance(samples, ch).value
        else:
            out[f"mean_{ch}"] = float(samples.raw_moments(ch)[0])
            out[f"var_{ch}"] = None
    out["V1"] = visibility(samples, "I1").value if enough else None
    out["V1_stderr"] = visibility(samples, "I1").std_error if enough else None
    out["V2"] = visibility(samples, "I2").value if enough else None
    out["V2_stderr"] = visibility(samples, "I2").std_error if enough else None
    if enough:
        p = purity_estimate(samples)
        out["purity"], out["purity_stderr"] = p.value, p.std_error
    else:
        out["purity"] = out["purity_stderr"] = None
    out["ks"] = ks or {}
    return out
