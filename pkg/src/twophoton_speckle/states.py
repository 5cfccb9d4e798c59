"""Two-photon density matrices held as weighted pure-state ensembles.

A state is a list of ``(p_j, c_j)`` with ``c_j`` a symmetric ``N x N``
amplitude matrix normalized to ``Tr c c^dagger = 1``. The full
``N^2 x N^2`` density matrix

    rho[(q1, q2), (q1', q2')] = sum_j p_j c_j[q1, q2] conj(c_j[q1', q2'])

is never built here; everything needed downstream (purity, the reduced
single-photon matrix, the biphoton current) is computed from the
components directly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "CoefficientMatrix",
    "StateEnsemble",
    "ReducedDensityMatrix",
    "EigenvalueSpectrum",
    "StateError",
    "make_pure_entangled",
    "make_fully_mixed",
    "make_general_pure",
    "purity",
    "reduced_density",
    "schmidt_spectrum",
    "state_from_dict",
    "state_to_dict",
    "load_state",
    "default_pairing",
]

NORM_TOL = 1e-12
MIN_WEIGHT = 1e-12
ZERO_EIGENVALUE = 1e-12
DEFAULT_DEGENERACY_TOL = 1e-9


class StateError(ValueError):
    """Raised when a state description violates its invariants."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CoefficientMatrix:
    """Symmetric, unit-norm two-photon amplitude matrix ``c``."""

    entries: np.ndarray

    def __post_init__(self):
        c = _frozen(self.entries)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise StateError(f"coefficient matrix must be square, got {c.shape}")
        if not np.allclose(c, c.T, rtol=0, atol=NORM_TOL):
            raise StateError("coefficient matrix must be symmetric")
        norm = np.sum(np.abs(c) ** 2)
        if abs(norm - 1.0) > NORM_TOL:
            raise StateError(f"coefficient matrix has Tr cc^dagger = {norm!r}, expected 1")
        object.__setattr__(self, "entries", c)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def __eq__(self, other):
        if not isinstance(other, CoefficientMatrix):
            return NotImplemented
        return np.array_equal(self.entries, other.entries)

    __hash__ = None


@dataclass(frozen=True)
class StateEnsemble:
    """Mixture ``rho = sum_j p_j |c_j><c_j|`` of two-photon pure states."""

    dim: int
    components: tuple[tuple[float, CoefficientMatrix], ...]

    def __post_init__(self):
        comps = tuple((float(p), c) for p, c in self.components)
        if not comps:
            raise StateError("state needs at least one component")
        for p, c in comps:
            if not p > MIN_WEIGHT:
                raise StateError(f"component weight {p!r} must exceed {MIN_WEIGHT}")
            if c.dim != self.dim:
                raise StateError(f"component of dim {c.dim} in a dim-{self.dim} state")
        total = math.fsum(p for p, _ in comps)
        if abs(total - 1.0) > NORM_TOL:
            raise StateError(f"weights sum to {total!r}, expected 1")
        object.__setattr__(self, "components", comps)

    @property
    def weights(self) -> np.ndarray:
        return np.array([p for p, _ in self.components])

    @property
    def matrices(self) -> list[np.ndarray]:
        return [c.entries for _, c in self.components]

    @property
    def is_pure(self) -> bool:
        return len(self.components) == 1


@dataclass(frozen=True)
class ReducedDensityMatrix:
    """Single-photon density matrix ``rho1 = sum_j p_j c_j c_j^dagger``."""

    entries: np.ndarray

    def __post_init__(self):
        r = _frozen(self.entries)
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise StateError("reduced density matrix must be square")
        if not np.allclose(r, r.conj().T, rtol=0, atol=NORM_TOL):
            raise StateError("reduced density matrix must be Hermitian")
        if abs(np.trace(r).real - 1.0) > NORM_TOL:
            raise StateError("reduced density matrix must have unit trace")
        if np.linalg.eigvalsh(r).min() < -NORM_TOL:
            raise StateError("reduced density matrix must be positive semidefinite")
        object.__setattr__(self, "entries", r)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def trace_square(self) -> float:
        """``Tr (rho1)^2``."""
        return float(np.sum(np.abs(self.entries) ** 2))


@dataclass(frozen=True)
class EigenvalueSpectrum:
    """Distinct positive eigenvalues ``gamma_m`` with multiplicities ``mu_m``."""

    entries: tuple[tuple[float, int], ...]
    warnings: tuple[str, ...] = field(default=())

    def __post_init__(self):
        ents = tuple((float(g), int(m)) for g, m in self.entries)
        if not ents:
            raise StateError("spectrum is empty")
        for g, m in ents:
            if not g > 0 or m < 1:
                raise StateError(f"invalid spectrum entry ({g}, {m})")
        gammas = [g for g, _ in ents]
        if any(b >= a for a, b in zip(gammas, gammas[1:])):
            raise StateError("spectrum eigenvalues must be strictly decreasing")
        total = math.fsum(g * m for g, m in ents)
        if abs(total - 1.0) > 1e-10:
            raise StateError(f"spectrum violates the sum rule: sum mu*gamma = {total!r}")
        object.__setattr__(self, "entries", ents)
        object.__setattr__(self, "warnings", tuple(self.warnings))

    @property
    def gammas(self) -> np.ndarray:
        return np.array([g for g, _ in self.entries])

    @property
    def multiplicities(self) -> np.ndarray:
        return np.array([m for _, m in self.entries], dtype=int)

    @classmethod
    def from_pairs(cls, pairs) -> "EigenvalueSpectrum":
        """Build from ``[(gamma, mu), ...]`` in any order."""
        pairs = sorted(((float(g), int(m)) for g, m in pairs), reverse=True)
        return cls(tuple(pairs))


def _check_pairing(pairing, dim):
    pairing = [tuple(int(i) for i in pair) for pair in pairing]
    if not pairing:
        raise StateError("pairing must contain at least one pair")
    if any(len(pair) != 2 for pair in pairing):
        raise StateError("each pairing entry must be an index pair")
    flat = [i for pair in pairing for i in pair]
    if 2 * len(pairing) > dim:
        raise StateError(f"{len(pairing)} pairs do not fit into {dim} modes")
    if len(set(flat)) != len(flat):
        raise StateError("pairing indices must be distinct")
    if min(flat) < 0 or max(flat) >= dim:
        raise StateError(f"pairing indices must lie in [0, {dim})")
    return pairing


def default_pairing(M: int) -> list[tuple[int, int]]:
    """Pairs ``(2i, 2i + 1)`` for ``i < M``."""
    return [(2 * i, 2 * i + 1) for i in range(M)]


def _pair_matrix(pairs, dim):
    c = np.zeros((dim, dim), dtype=complex)
    amp = 1.0 / math.sqrt(2 * len(pairs))
    for a, b in pairs:
        c[a, b] = c[b, a] = amp
    return c


def make_pure_entangled(M: int, pairing: Sequence | None = None, dim: int | None = None) -> StateEnsemble:
    """Maximally entangled pure state of Schmidt rank ``M``.

    ``c[q_m, -q_m] = c[-q_m, q_m] = 1/sqrt(2M)`` for each pair in
    ``pairing`` (default ``(2i, 2i+1)``); ``dim`` defaults to ``2M``.
    """
    if M < 1:
        raise StateError("Schmidt rank M must be >= 1")
    pairing = default_pairing(M) if pairing is None else pairing
    dim = 2 * M if dim is None else dim
    if len(pairing) != M:
        raise StateError(f"expected {M} pairs, got {len(pairing)}")
    pairs = _check_pairing(pairing, dim)
    return StateEnsemble(dim, ((1.0, CoefficientMatrix(_pair_matrix(pairs, dim))),))


def make_fully_mixed(M: int, pairing: Sequence | None = None, dim: int | None = None) -> StateEnsemble:
    """Classical mixture of the ``M`` pair states, each with weight ``1/M``."""
    if M < 1:
        raise StateError("Schmidt rank M must be >= 1")
    pairing = default_pairing(M) if pairing is None else pairing
    dim = 2 * M if dim is None else dim
    if len(pairing) != M:
        raise StateError(f"expected {M} pairs, got {len(pairing)}")
    pairs = _check_pairing(pairing, dim)
    comps = tuple((1.0 / M, CoefficientMatrix(_pair_matrix([pair], dim))) for pair in pairs)
    return StateEnsemble(dim, comps)


def _symmetrized(c_raw) -> np.ndarray:
    c = np.asarray(c_raw, dtype=complex)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise StateError(f"coefficient matrix must be square, got {c.shape}")
    c = 0.5 * (c + c.T)
    norm = math.sqrt(float(np.sum(np.abs(c) ** 2)))
    if norm == 0.0:
        raise StateError("coefficient matrix vanishes after symmetrization")
    return c / norm


def make_general_pure(c_raw) -> StateEnsemble:
    """Pure state from an arbitrary amplitude matrix.

    The antisymmetric part of ``c_raw`` does not contribute to the
    two-photon state, so it is dropped before renormalizing.
    """
    c = _symmetrized(c_raw)
    return StateEnsemble(c.shape[0], ((1.0, CoefficientMatrix(c)),))


def purity(state: StateEnsemble) -> float:
    """``Tr rho^2 = sum_{j,j'} p_j p_j' |Tr(c_j c_j'^dagger)|^2``."""
    p = state.weights
    flat = np.array([c.ravel() for c in state.matrices])
    overlaps = np.abs(flat.conj() @ flat.T) ** 2
    return float(p @ overlaps @ p)


def reduced_density(state: StateEnsemble) -> ReducedDensityMatrix:
    rho1 = sum(p * (c @ c.conj().T) for p, c in zip(state.weights, state.matrices))
    rho1 = 0.5 * (rho1 + rho1.conj().T)
    return ReducedDensityMatrix(rho1)


def schmidt_spectrum(rho1: ReducedDensityMatrix, degeneracy_tol: float = DEFAULT_DEGENERACY_TOL) -> EigenvalueSpectrum:
    """Cluster the eigenvalues of ``rho1`` into ``(gamma_m, mu_m)`` groups.

    Neighbouring eigenvalues (sorted descending) join a cluster when their
    relative gap is below ``degeneracy_tol``. Eigenvalues below 1e-12 are
    dropped. Gaps in ``[tol, 10 tol]`` are reported in ``warnings`` since
    the grouping there is sensitive to rounding.
    """
    eig = np.sort(np.linalg.eigvalsh(rho1.entries))[::-1]
    eig = eig[eig > ZERO_EIGENVALUE]
    clusters = [[eig[0]]]
    warnings = []
    for prev, cur in zip(eig, eig[1:]):
        gap = (prev - cur) / prev
        if gap < degeneracy_tol:
            clusters[-1].append(cur)
        else:
            if gap <= 10 * degeneracy_tol:
                warnings.append(
                    f"eigenvalues {prev:.17g} and {cur:.17g} have relative gap {gap:.3g}, "
                    f"close to degeneracy_tol={degeneracy_tol:g}"
                )
            clusters.append([cur])
    entries = tuple((math.fsum(cl) / len(cl), len(cl)) for cl in clusters)
    return EigenvalueSpectrum(entries, tuple(warnings))


# --- JSON descriptions -------------------------------------------------------


def state_from_dict(doc: dict) -> StateEnsemble:
    """Build a state from its JSON description.

    Accepted forms::

        {"dim": N, "components": [{"weight": p, "entries": [[row, col, re, im], ...]}]}
        {"pure_entangled": {"M": m}}          # optional "dim"
        {"fully_mixed": {"M": m}}

    Component entries are symmetrized and normalized like
    :func:`make_general_pure`.
    """
    if "pure_entangled" in doc or "fully_mixed" in doc:
        kind = "pure_entangled" if "pure_entangled" in doc else "fully_mixed"
        params = doc[kind]
        M = int(params["M"])
        dim = int(params.get("dim", doc.get("dim", 2 * M)))
        pairing = params.get("pairing")
        maker = make_pure_entangled if kind == "pure_entangled" else make_fully_mixed
        return maker(M, pairing, dim)
    try:
        dim = int(doc["dim"])
        raw = doc["components"]
    except KeyError as exc:
        raise StateError(f"state description is missing {exc}") from None
    comps = []
    for comp in raw:
        c = np.zeros((dim, dim), dtype=complex)
        for row, col, re, im in comp["entries"]:
            row, col = int(row), int(col)
            if not (0 <= row < dim and 0 <= col < dim):
                raise StateError(f"entry index ({row}, {col}) outside dim {dim}")
            c[row, col] += complex(re, im)
        comps.append((float(comp["weight"]), CoefficientMatrix(_symmetrized(c))))
    total = math.fsum(p for p, _ in comps)
    if abs(total - 1.0) > 1e-9:
        raise StateError(f"weights sum to {total!r}, expected 1")
    return StateEnsemble(dim, tuple((p / total, c) for p, c in comps))


def state_to_dict(state: StateEnsemble) -> dict:
    comps = []
    for p, c in zip(state.weights, state.matrices):
        rows, cols = np.nonzero(c)
        comps.append(
            {
                "weight": float(p),
                "entries": [[int(r), int(k), float(c[r, k].real), float(c[r, k].imag)] for r, k in zip(rows, cols)],
            }
        )
    return {"dim": state.dim, "components": comps}


def load_state(path) -> StateEnsemble:
    with open(path) as fh:
        return state_from_dict(json.load(fh))
