"""Gaussian random-scattering model and the speckle currents it produces.

Only the two scattering-matrix rows seen by the detectors, ``v = S[k, :]``
and ``v' = S[k', :]``, are ever drawn. Randomness is counter based: trial
``t`` under seed ``s`` reads a fixed window of a Philox stream keyed by
``s``, so every sample is a function of ``(seed, trial_id)`` alone and
sharding trials across processes cannot change the result.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import stats
from .states import ReducedDensityMatrix, StateEnsemble, reduced_density

__all__ = [
    "ScatteringModel",
    "DetectorPair",
    "Efficiencies",
    "SpeckleSample",
    "ENSEMBLES",
    "BLOCK_SIZE",
    "sample_rows",
    "sample_rows_unitary",
    "haar_unitary",
    "intensity_single",
    "intensity_pair",
    "speckle_sample",
    "run_ensemble",
]

BLOCK_SIZE = 8192
RAW_CAP = 1_000_000
ENSEMBLES = ("gaussian", "unitary")
_STREAM_TAG = {"gaussian": 0, "unitary": 1}


@dataclass(frozen=True)
class ScatteringModel:
    """Mode count ``dim`` and second moment ``sigma2 = <|S_kq|^2>``."""

    dim: int
    sigma2: float

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")

    @classmethod
    def from_transport(cls, dim: int, mean_free_path: float, length: float) -> "ScatteringModel":
        """Transmission through a slab: ``sigma2 = 2 l / (L N)``."""
        if not (mean_free_path > 0 and length > 0):
            raise ValueError("mean free path and length must be positive")
        return cls(dim, 2.0 * mean_free_path / (length * dim))


@dataclass(frozen=True)
class DetectorPair:
    k: int
    k_prime: int

    def __post_init__(self):
        if self.k == self.k_prime:
            raise ValueError("coincidence detectors must sit at distinct modes (k != k')")
        if self.k < 0 or self.k_prime < 0:
            raise ValueError("detector indices must be non-negative")


@dataclass(frozen=True)
class Efficiencies:
    alpha1: float = 1.0
    alpha2: float = 1.0

    def __post_init__(self):
        if not (self.alpha1 > 0 and self.alpha2 > 0):
            raise ValueError("detection efficiencies must be positive")


@dataclass(frozen=True)
class SpeckleSample:
    v: np.ndarray
    v_prime: np.ndarray
    I1: float
    I2: float


# --- random rows ------------------------------------------------------------


def _uniforms(seed: int, ensemble: str, first_trial: int, n_trials: int, dim: int) -> np.ndarray:
    """``(n_trials, 4 * dim)`` uniforms; trial t occupies counters ``t*dim ..``."""
    if not 0 <= seed < 2**64:
        raise ValueError("seed must fit in an unsigned 64-bit integer")
    key = np.array([seed, _STREAM_TAG[ensemble]], dtype=np.uint64)
    counter = np.array([first_trial * dim, 0, 0, 0], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key, counter=counter))
    return gen.random((n_trials, 4 * dim))


def _complex_normals(u: np.ndarray) -> np.ndarray:
    """Box-Muller: the first half of ``u`` sets radii, the second half phases.

    Gives circular complex normals with ``E|z|^2 = 1``.
    """
    half = u.shape[-1] // 2
    radius = np.sqrt(-np.log1p(-u[..., :half]))
    return radius * np.exp((2j * np.pi) * u[..., half:])


def _gaussian_rows(u, sigma2):
    z = _complex_normals(u) * math.sqrt(sigma2)
    half = z.shape[-1] // 2
    return z[..., :half], z[..., half:]


def _unitary_rows(u, sigma2):
    # Gram-Schmidt of two Ginibre vectors: a uniformly random orthonormal
    # pair, i.e. two rows of a Haar unitary.
    z = _complex_normals(u)
    dim = z.shape[-1] // 2
    g1, g2 = z[..., :dim], z[..., dim:]
    u1 = g1 / np.linalg.norm(g1, axis=-1, keepdims=True)
    w = g2 - np.sum(u1.conj() * g2, axis=-1, keepdims=True) * u1
    u2 = w / np.linalg.norm(w, axis=-1, keepdims=True)
    scale = math.sqrt(dim * sigma2)
    return u1 * scale, u2 * scale


_ROWS = {"gaussian": _gaussian_rows, "unitary": _unitary_rows}


def sample_rows(model: ScatteringModel, trial_id: int, seed: int):
    """Rows ``(v, v')`` of ``S`` for one trial of the Gaussian model."""
    u = _uniforms(seed, "gaussian", trial_id, 1, model.dim)[0]
    return _gaussian_rows(u, model.sigma2)


def sample_rows_unitary(model: ScatteringModel, trial_id: int, seed: int):
    """Two distinct rows of a Haar unitary, scaled so ``E|entry|^2 = sigma2``."""
    if model.dim < 2:
        raise ValueError("unitary rows need dim >= 2")
    u = _uniforms(seed, "unitary", trial_id, 1, model.dim)[0]
    return _unitary_rows(u, model.sigma2)


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Full Haar unitary from the phase-corrected QR of a Ginibre matrix."""
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


# --- currents ---------------------------------------------------------------


_GATHER_CHUNK = 2048


class _Bilinear:
    """Batched bilinear forms ``x . A_j . y`` for a list of matrices ``A_j``.

    Matrices with few nonzeros are evaluated by gathering the nonzero
    entries of all of them at once; dense ones by a matrix product.
    Returns an array of shape ``(..., len(mats))``.
    """

    def __init__(self, mats):
        self.n = len(mats)
        self.dense = []
        rows, cols, vals, owner = [], [], [], []
        for j, a in enumerate(mats):
            a = np.asarray(a, dtype=complex)
            r, c = np.nonzero(a)
            if len(r) <= a.size // 4:
                rows.append(r)
                cols.append(c)
                vals.append(a[r, c])
                owner.append(np.full(len(r), j))
            else:
                self.dense.append((j, a))
        if rows:
            self.rows = np.concatenate(rows)
            self.cols = np.concatenate(cols)
            self.vals = np.concatenate(vals)
            self.owner = np.concatenate(owner)
        else:
            self.rows = self.cols = self.owner = np.zeros(0, dtype=int)
            self.vals = np.zeros(0, dtype=complex)

    def __call__(self, x, y):
        out = np.zeros(x.shape[:-1] + (self.n,), dtype=complex)
        for lo in range(0, len(self.rows), _GATHER_CHUNK):
            sl = slice(lo, lo + _GATHER_CHUNK)
            terms = x[..., self.rows[sl]] * y[..., self.cols[sl]] * self.vals[sl]
            owner = self.owner[sl]
            for j in np.unique(owner):
                out[..., j] += terms[..., owner == j].sum(axis=-1)
        for j, a in self.dense:
            out[..., j] = np.sum((x @ a) * y, axis=-1)
        return out


def _check_dim(vec, dim):
    if np.shape(vec)[-1] != dim:
        raise ValueError(f"vector of length {np.shape(vec)[-1]} does not match dim {dim}")


class _Currents:
    """Precomputed operators for evaluating I1 and I2 on batches of rows."""

    def __init__(self, state: StateEnsemble, rho1: ReducedDensityMatrix | None = None):
        rho1 = reduced_density(state) if rho1 is None else rho1
        self.dim = state.dim
        self.rho1 = _Bilinear([rho1.entries])
        self.weights = state.weights
        self.coeffs = _Bilinear(state.matrices)

    def single(self, V, alpha1):
        _check_dim(V, self.dim)
        return alpha1 * self.rho1(V, V.conj())[..., 0].real.clip(min=0.0)

    def pair(self, V, Vp, alpha2):
        _check_dim(V, self.dim)
        _check_dim(Vp, self.dim)
        amp = self.coeffs(V, Vp)
        return alpha2 * ((amp.real**2 + amp.imag**2) @ self.weights)


def intensity_single(v, rho1: ReducedDensityMatrix, alpha1: float = 1.0):
    """Single-photon current ``alpha1 * v . rho1 . v^*`` (batched over leading axes)."""
    v = np.asarray(v, dtype=complex)
    _check_dim(v, rho1.dim)
    out = alpha1 * np.einsum("...q,qr,...r->...", v, rho1.entries, v.conj()).real
    out = np.clip(out, 0.0, None)
    return float(out) if out.ndim == 0 else out


def intensity_pair(v, v_prime, state: StateEnsemble, alpha2: float = 1.0):
    """Biphoton current ``alpha2 * sum_j p_j |v^T c_j v'|^2``.

    For a component ``c_j`` the quartic sum over ``rho`` factorizes into the
    squared modulus of a bilinear form, so the cost is O(N^2) per component
    rather than O(N^4).
    """
    v = np.asarray(v, dtype=complex)
    v_prime = np.asarray(v_prime, dtype=complex)
    _check_dim(v, state.dim)
    _check_dim(v_prime, state.dim)
    out = np.zeros(np.broadcast_shapes(v.shape, v_prime.shape)[:-1])
    for p, c in zip(state.weights, state.matrices):
        amp = np.einsum("...q,qr,...r->...", v, c, v_prime)
        out = out + p * np.abs(amp) ** 2
    out = alpha2 * out
    return float(out) if out.ndim == 0 else out


def speckle_sample(model, state, eff, trial_id, seed, ensemble="gaussian") -> SpeckleSample:
    """One full trial: rows and both currents."""
    sampler = sample_rows if ensemble == "gaussian" else sample_rows_unitary
    v, vp = sampler(model, trial_id, seed)
    rho1 = reduced_density(state)
    return SpeckleSample(v, vp, intensity_single(v, rho1, eff.alpha1), intensity_pair(v, vp, state, eff.alpha2))


# --- ensembles --------------------------------------------------------------


@dataclass(frozen=True)
class _Job:
    model: ScatteringModel
    state: StateEnsemble
    eff: Efficiencies
    seed: int
    ensemble: str
    trials: int
    n_groups: int
    hist_specs: dict
    raw_stride: int


def _run_block(job: _Job, block_id: int, currents: _Currents | None = None) -> stats.SampleSet:
    first = block_id * BLOCK_SIZE
    n = min(BLOCK_SIZE, job.trials - first)
    currents = currents or _Currents(job.state)
    u = _uniforms(job.seed, job.ensemble, first, n, job.model.dim)
    V, Vp = _ROWS[job.ensemble](u, job.model.sigma2)
    I1 = currents.single(V, job.eff.alpha1)
    I2 = currents.pair(V, Vp, job.eff.alpha2)
    ids = np.arange(first, first + n, dtype=np.int64)
    return stats.SampleSet.from_values(
        I1,
        I2,
        trial_ids=ids,
        total_trials=job.trials,
        n_groups=job.n_groups,
        block_id=block_id,
        hist_specs=job.hist_specs,
        retain=ids % job.raw_stride == 0,
    )


def _run_blocks(job: _Job, block_ids) -> list[stats.SampleSet]:
    currents = _Currents(job.state)
    return [_run_block(job, b, currents) for b in block_ids]


def default_hist_specs(model: ScatteringModel, eff: Efficiencies, bins: int = 100, span: float = 20.0) -> dict:
    """Linear bins on ``[0, span * <I>]`` using the analytic means."""
    return {
        "I1": stats.HistogramSpec(bins, 0.0, span * eff.alpha1 * model.sigma2),
        "I2": stats.HistogramSpec(bins, 0.0, span * eff.alpha2 * model.sigma2**2),
    }


def run_ensemble(
    model: ScatteringModel,
    detector: DetectorPair,
    state: StateEnsemble,
    eff: Efficiencies = Efficiencies(),
    trials: int = 1000,
    seed: int = 0,
    *,
    ensemble: str = "gaussian",
    workers: int = 1,
    hist_specs: dict | None = None,
    n_groups: int = stats.DEFAULT_GROUPS,
    raw_cap: int = RAW_CAP,
) -> stats.SampleSet:
    """Run ``trials`` independent disorder realizations.

    Trials are cut into fixed blocks of :data:`BLOCK_SIZE`; blocks are
    distributed over ``workers`` processes and merged by block index, so
    the result does not depend on ``workers``. Raw samples are kept for
    every ``ceil(trials / raw_cap)``-th trial.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if ensemble not in ENSEMBLES:
        raise ValueError(f"ensemble must be one of {ENSEMBLES}")
    if model.dim != state.dim:
        raise ValueError(f"model dim {model.dim} does not match state dim {state.dim}")
    if max(detector.k, detector.k_prime) >= model.dim:
        raise ValueError("detector index outside the mode range")
    if ensemble == "unitary" and model.dim < 2:
        raise ValueError("unitary rows need dim >= 2")
    hist_specs = default_hist_specs(model, eff) if hist_specs is None else hist_specs
    job = _Job(model, state, eff, int(seed), ensemble, int(trials), n_groups, hist_specs, max(1, math.ceil(trials / raw_cap)))
    blocks = list(range(math.ceil(trials / BLOCK_SIZE)))
    workers = max(1, min(int(workers), len(blocks)))
    if workers == 1:
        parts = _run_blocks(job, blocks)
    else:
        shards = [blocks[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = [p for shard in pool.map(_run_blocks, [job] * workers, shards) for p in shard]
    return stats.merge(*parts)


def available_workers() -> int:
    return os.cpu_count() or 1
