"""Closed-form speckle distributions and the pure-state P1 -> P2 transform.

Scales follow the physical parameters as

    a1 = alpha1 * sigma2          (mean single-photon current)
    a2 = alpha2 * sigma2**2       (mean biphoton current)
    beta = alpha2 * sigma2 / alpha1 = a2 / a1

The eigenvalue formulas need high-order derivatives in an auxiliary
variable x at x = 1. They are evaluated exactly as the t^n Taylor
coefficient of a product of series in t = x - 1, with every coefficient
carried as (sign, log|value|) so that multiplicities in the hundreds
neither overflow nor underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import gammaln, logsumexp

from .bessel import log_bessel_k_int, log_bessel_k_table
from .states import EigenvalueSpectrum

__all__ = [
    "ScaleParams",
    "TabulatedDensity",
    "AnalyticError",
    "pdf_p1_schmidt",
    "pdf_p2_k",
    "pdf_p2_exponential",
    "pdf_p1_general",
    "pdf_p2_general",
    "transform_p1_to_p2",
    "log_grid",
    "quadrature_rule",
    "pdf_moments",
    "cdf_from_pdf",
]

COALESCE_TOL = 1e-6
NORMALIZATION_TOL = 1e-6
_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


class AnalyticError(ValueError):
    pass


@dataclass(frozen=True)
class ScaleParams:
    a1: float
    a2: float
    beta: float

    def __post_init__(self):
        if not (self.a1 > 0 and self.a2 > 0 and self.beta > 0):
            raise ValueError("scale parameters must be positive")
        if not math.isclose(self.beta, self.a2 / self.a1, rel_tol=1e-12):
            raise ValueError("beta must equal a2 / a1")

    @classmethod
    def from_physical(cls, alpha1: float = 1.0, alpha2: float = 1.0, sigma2: float = 1.0) -> "ScaleParams":
        return cls(alpha1 * sigma2, alpha2 * sigma2**2, alpha2 * sigma2 / alpha1)


def _prepare(x):
    x = np.asarray(x, dtype=float)
    return x, np.atleast_1d(x)


def _finish(x, out):
    out = out.reshape(np.shape(x))
    return float(out) if out.ndim == 0 else out


# --- Schmidt-rank-M pure state and the exponential limit ----------------------


def pdf_p1_schmidt(M: int, a1: float, I1):
    """Single-photon speckle of the maximally entangled rank-M state.

    Gamma law with shape 2M and mean ``a1`` (chi-square with 4M degrees
    of freedom).
    """
    x, flat = _prepare(I1)
    k = 2 * M
    out = np.zeros(flat.shape)
    pos = flat > 0
    xp = flat[pos]
    out[pos] = np.exp(k * math.log(k / a1) + (k - 1) * np.log(xp) - k * xp / a1 - gammaln(k))
    if k == 1:
        out[flat == 0] = 1.0 / a1
    return _finish(x, out)


def pdf_p2_k(M: int, a2: float, I2):
    """K-distribution of two-photon speckle for the rank-M entangled state.

    ``(4M / (a2 (2M-1)!)) y^(M-1/2) K_{2M-1}(2 sqrt(y))`` with
    ``y = 2M I2 / a2``; at ``I2 = 0`` the right limit ``2M / ((2M-1) a2)``.
    """
    x, flat = _prepare(I2)
    out = np.zeros(flat.shape)
    pos = flat > 0
    y = 2 * M * flat[pos] / a2
    logk = log_bessel_k_int(2 * M - 1, 2.0 * np.sqrt(y))
    out[pos] = np.exp(math.log(4 * M / a2) - gammaln(2 * M) + (M - 0.5) * np.log(y) + logk)
    out[flat == 0] = 2 * M / ((2 * M - 1) * a2)
    return _finish(x, out)


def pdf_p2_exponential(a2: float, I2):
    """Exponential speckle with mean ``a2``."""
    x, flat = _prepare(I2)
    out = np.where(flat >= 0, np.exp(-np.clip(flat, 0, None) / a2) / a2, 0.0)
    return _finish(x, out)


# --- general eigenvalue spectrum ----------------------------------------------


def _signed_log_conv(la, sa, lb, sb, n):
    """First ``n + 1`` coefficients of the product of two signed-log series."""
    lc = np.full(n + 1, -np.inf)
    sc = np.zeros(n + 1)
    for j in range(n + 1):
        terms = la[: j + 1] + lb[j::-1]
        signs = sa[: j + 1] * sb[j::-1]
        if np.all(np.isneginf(terms)):
            continue
        val, sign = logsumexp(terms, b=signs, return_sign=True)
        lc[j], sc[j] = val, sign
    return lc, sc


def _companion_series(spec: EigenvalueSpectrum, m: int, n: int):
    """Taylor coefficients in t of ``prod_{m' != m} (1 - (1+t) r')^(-mu')``.

    Here ``r' = gamma_{m'} / gamma_m``.
    """
    gammas, mus = spec.gammas, spec.multiplicities
    la = np.full(n + 1, -np.inf)
    la[0] = 0.0
    sa = np.zeros(n + 1)
    sa[0] = 1.0
    k = np.arange(n + 1)
    for j, (g, mu) in enumerate(zip(gammas, mus)):
        if j == m:
            continue
        r = g / gammas[m]
        if abs(1.0 - r) < COALESCE_TOL:
            raise AnalyticError(
                f"eigenvalues {gammas[m]!r} and {g!r} nearly coincide; "
                "re-cluster the spectrum with a coarser degeneracy_tol"
            )
        rho = r / (1.0 - r)
        lb = -mu * math.log(abs(1.0 - r)) + gammaln(mu + k) - gammaln(k + 1) - gammaln(mu) + k * math.log(abs(rho))
        sb = np.sign(1.0 - r) ** mu * np.sign(rho) ** k
        la, sa = _signed_log_conv(la, sa, lb, sb.astype(float), n)
    return la, sa


def _eigen_sum(spec: EigenvalueSpectrum, x, scale, kernel_series, log_prefactor):
    """Sum over clusters of ``prefactor_m * (-1)^n [t^n] kernel(1+t) g_m(1+t)``."""
    out = np.zeros(x.shape)
    for m, (gamma, mu) in enumerate(spec.entries):
        n = mu - 1
        lg, sg = _companion_series(spec, m, n)
        lam = x / (scale * gamma)
        la, sa = kernel_series(lam, n)  # shape (len(x), n + 1)
        terms = la + lg[::-1][None, :]
        signs = sa * sg[::-1][None, :] * (-1.0) ** n
        val, sign = logsumexp(terms, b=signs, axis=1, return_sign=True)
        out += sign * np.exp(log_prefactor(gamma) + val)
    return out


def _exp_series(lam, n):
    # e^{-lam (1+t)} = e^{-lam} sum_k (-lam)^k t^k / k!
    k = np.arange(n + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        loglam = np.log(lam)[:, None]
        la = -lam[:, None] + np.where(k == 0, 0.0, k * loglam) - gammaln(k + 1)
    sa = np.broadcast_to((-1.0) ** k, la.shape)
    return la, sa


def _k0_series(lam, n):
    # K0(2 sqrt(lam (1+t))): the k-th t-derivative at t=0 is
    # (-1)^k lam^{k/2} K_k(2 sqrt(lam)).
    k = np.arange(n + 1)
    z = 2.0 * np.sqrt(lam)
    logk = log_bessel_k_table(n, z).T
    la = 0.5 * k * np.log(lam)[:, None] + logk - gammaln(k + 1)
    sa = np.broadcast_to((-1.0) ** k, la.shape)
    return la, sa


def pdf_p1_general(spec: EigenvalueSpectrum, a1: float, I1):
    """Single-photon speckle for an arbitrary reduced density spectrum.

    Valid for any two-photon state; ``spec`` lists the distinct eigenvalues
    of the reduced density matrix with their multiplicities.
    """
    x, flat = _prepare(I1)
    out = np.zeros(flat.shape)
    pos = flat >= 0
    if np.any(pos):
        out[pos] = _eigen_sum(spec, flat[pos], a1, _exp_series, lambda g: -math.log(a1 * g))
    return _finish(x, np.clip(out, 0.0, None))


def pdf_p2_general(spec: EigenvalueSpectrum, a2: float, I2):
    """Two-photon speckle of a pure state from its Schmidt spectrum.

    Only meaningful for pure states. ``I2 = 0`` is evaluated at
    ``1e-300 * a2``, i.e. as the right limit.
    """
    x, flat = _prepare(I2)
    out = np.zeros(flat.shape)
    pos = flat >= 0
    if np.any(pos):
        xs = np.maximum(flat[pos], 1e-300 * a2)
        out[pos] = _eigen_sum(spec, xs, a2, _k0_series, lambda g: math.log(2.0 / (a2 * g)))
    return _finish(x, np.clip(out, 0.0, None))


# --- tabulated densities and the integral transform ---------------------------


def log_grid(scale: float, lo: float = 1e-4, hi: float = 50.0, points: int = 2000) -> np.ndarray:
    """Log-spaced abscissae on ``[lo, hi] * scale``."""
    return np.geomspace(lo * scale, hi * scale, points)


class TabulatedDensity:
    """A density sampled on a grid, interpolated as PCHIP of log-density vs log-x."""

    def __init__(self, grid, density):
        grid = np.asarray(grid, dtype=float)
        density = np.asarray(density, dtype=float)
        if grid.ndim != 1 or len(grid) < 2:
            raise ValueError("grid needs at least two points")
        if grid.shape != density.shape:
            raise ValueError("grid and density differ in shape")
        if np.any(np.diff(grid) <= 0) or grid[0] < 0:
            raise ValueError("grid must be strictly increasing and non-negative")
        if np.any(density < 0) or not np.all(np.isfinite(density)):
            raise ValueError("density must be finite and non-negative")
        self.grid = grid
        self.density = density
        usable = (grid > 0) & (density > 0)
        self._span = (grid[usable][0], grid[usable][-1]) if usable.sum() >= 2 else None
        if self._span is not None:
            self._interp = PchipInterpolator(np.log(grid[usable]), np.log(density[usable]), extrapolate=False)

    @classmethod
    def from_pdf(cls, pdf, grid) -> "TabulatedDensity":
        grid = np.asarray(grid, dtype=float)
        return cls(grid, pdf(grid))

    def __call__(self, x):
        x, flat = _prepare(x)
        out = np.zeros(flat.shape)
        if self._span is not None:
            inside = (flat >= self._span[0]) & (flat <= self._span[1])
            out[inside] = np.exp(self._interp(np.log(flat[inside])))
        return _finish(x, out)

    def _integral(self, f):
        # trapezoid in u = ln x on the positive part of the grid, linear
        # trapezoid on a leading [0, g1] interval
        g = self.grid
        pos = g > 0
        gp, fp = g[pos], f[pos]
        total = float(np.sum(0.5 * (fp[1:] * gp[1:] + fp[:-1] * gp[:-1]) * np.diff(np.log(gp))))
        if not pos[0]:
            total += 0.5 * (f[0] + f[1]) * g[1]
        return total

    def _tails(self, f):
        g = self.grid
        left = 0.0
        if g[0] > 0 and f[0] > 0:
            # power law f ~ x^s below the first node
            s = math.log(f[1] / f[0]) / math.log(g[1] / g[0]) if f[1] > 0 else 0.0
            left = g[0] * f[0] / (s + 1.0) if s > -1.0 else g[0] * f[0]
        right = 0.0
        if f[-1] > 0 and f[-2] > f[-1]:
            right = f[-1] * (g[-1] - g[-2]) / math.log(f[-2] / f[-1])
        return left + right

    def normalization(self) -> float:
        """Grid mass with power-law left and exponential right tail corrections."""
        return self._integral(self.density) + self._tails(self.density)

    def moment(self, k: int) -> float:
        f = self.grid**k * self.density
        return self._integral(f) + self._tails(f)

    def to_csv(self) -> str:
        lines = ["x,pdf"] + [f"{a:.17g},{b:.17g}" for a, b in zip(self.grid, self.density)]
        return "\n".join(lines) + "\n"


def transform_p1_to_p2(p1: TabulatedDensity, params: ScaleParams, I2_grid) -> TabulatedDensity:
    """Two-photon speckle of a pure state from its single-photon speckle.

        P2(I2) = (1/beta) int_0^inf dI1 P1(I1)/I1 exp(-I2 / (beta I1))

    The I1 integral runs over the tabulation range in ``u = ln I1`` with
    8-point Gauss-Legendre on every grid interval. The relation holds only
    for pure states; checking that is up to the caller.
    """
    I2_grid = np.asarray(I2_grid, dtype=float)
    if I2_grid.size == 0:
        raise ValueError("I2 grid is empty")
    norm = p1.normalization()
    if abs(norm - 1.0) > NORMALIZATION_TOL:
        raise ValueError(f"input density is not normalized (mass {norm:.9g})")
    g = p1.grid[p1.grid > 0]
    u = np.log(g)
    a, b = u[:-1], u[1:]
    nodes = (0.5 * (a + b))[:, None] + (0.5 * (b - a))[:, None] * _GL_X[None, :]
    weights = ((0.5 * (b - a))[:, None] * _GL_W[None, :]).ravel()
    nodes = nodes.ravel()
    I1 = np.exp(nodes)
    w = p1(I1) * weights / params.beta
    keep = w > 0
    I1, w = I1[keep], w[keep]
    out = np.empty(I2_grid.shape)
    for i, y in enumerate(I2_grid):
        out[i] = np.dot(np.exp(-y / (params.beta * I1)), w) if y >= 0 else 0.0
    return TabulatedDensity(I2_grid, out)


# --- quadrature helpers -------------------------------------------------------


def quadrature_rule(scale: float, lo: float = 1e-10, hi: float = 80.0, points: int = 4000):
    """Gauss-Legendre nodes/weights for ``int_0^{hi*scale}``.

    Intervals are ``[0, lo*scale]`` followed by a geometric grid; returns
    ``(edges, nodes[intervals, 8], weights[intervals, 8])``.
    """
    edges = np.concatenate([[0.0], np.geomspace(lo * scale, hi * scale, points)])
    a, b = edges[:-1], edges[1:]
    nodes = (0.5 * (a + b))[:, None] + (0.5 * (b - a))[:, None] * _GL_X[None, :]
    weights = (0.5 * (b - a))[:, None] * _GL_W[None, :]
    return edges, nodes, weights


def pdf_moments(pdf, scale: float, orders=(0, 1, 2), **kw) -> list[float]:
    """``int x^k pdf(x) dx`` for each k in ``orders``."""
    _, nodes, weights = quadrature_rule(scale, **kw)
    vals = pdf(nodes.ravel()) * weights.ravel()
    x = nodes.ravel()
    return [math.fsum(vals * x**k) for k in orders]


def cdf_from_pdf(pdf, scale: float, **kw):
    """CDF by cumulative quadrature, linearly interpolated between nodes."""
    edges, nodes, weights = quadrature_rule(scale, **kw)
    piece = np.sum(pdf(nodes.ravel()).reshape(nodes.shape) * weights, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(piece)])
    cum = np.maximum.accumulate(np.clip(cum, 0.0, 1.0))

    def cdf(x):
        x = np.asarray(x, dtype=float)
        return np.interp(x, edges, cum, left=0.0, right=cum[-1])

    cdf.total = float(cum[-1])
    return cdf
