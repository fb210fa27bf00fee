"""Dense complex linear algebra on truncated single- and multi-mode Fock spaces.

Operators are built at full (n_max+1) dimension per mode and embedded into the
joint space by tensor products.  Generators are truncated before
exponentiation, so every unitary produced here is exactly unitary; truncation
accuracy is assessed by the doubling test in :func:`adaptive_cutoff` rather
than a priori bounds.  hbar = 1 throughout.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

HERMITICITY_TOL = 1e-9
UNITARITY_TOL = 1e-6


class CutoffError(ValueError):
    """Raised when a truncation is too small for the requested operation."""


@dataclass(frozen=True)
class FockCutoff:
    """Truncation of the bosonic Hilbert space: states |0..n_max> per mode."""

    n_max: int
    modes: int = 1

    def __post_init__(self) -> None:
        if self.n_max < 1:
            raise ValueError(f"n_max must be >= 1, got {self.n_max}")
        if self.modes < 1:
            raise ValueError(f"modes must be >= 1, got {self.modes}")

    @property
    def dim_per_mode(self) -> int:
        return self.n_max + 1

    @property
    def dim(self) -> int:
        return (self.n_max + 1) ** self.modes

    def check_mode(self, mode: int) -> None:
        if not 0 <= mode < self.modes:
            raise IndexError(f"mode {mode} out of range for {self.modes} modes")


def _embed(op: np.ndarray, cutoff: FockCutoff, mode: int) -> np.ndarray:
    """Tensor a single-mode operator with identities on all other modes.

    Mode 0 is the leftmost (most significant) tensor factor.
    """
    if cutoff.modes == 1:
        return op
    d = cutoff.dim_per_mode
    out = np.array([[1.0 + 0.0j]])
    for m in range(cutoff.modes):
        out = np.kron(out, op if m == mode else np.eye(d, dtype=complex))
    return out


def annihilation_matrix(cutoff: FockCutoff, mode: int = 0) -> np.ndarray:
    """Matrix of b on the given mode: <n-1|b|n> = sqrt(n)."""
    cutoff.check_mode(mode)
    d = cutoff.dim_per_mode
    b = np.zeros((d, d), dtype=complex)
    ns = np.arange(1, d)
    b[ns - 1, ns] = np.sqrt(ns)
    return _embed(b, cutoff, mode)


def creation_matrix(cutoff: FockCutoff, mode: int = 0) -> np.ndarray:
    """Matrix of b† on the given mode."""
    return annihilation_matrix(cutoff, mode).conj().T


def number_matrix(cutoff: FockCutoff, mode: int = 0) -> np.ndarray:
    """Diagonal number operator N = b†b on the given mode."""
    cutoff.check_mode(mode)
    d = cutoff.dim_per_mode
    return _embed(np.diag(np.arange(d, dtype=complex)), cutoff, mode)


def vacuum_state(cutoff: FockCutoff) -> np.ndarray:
    """Joint vacuum |0,...,0>."""
    v = np.zeros(cutoff.dim, dtype=complex)
    v[0] = 1.0
    return v


def _expm_antihermitian(g: np.ndarray) -> np.ndarray:
    """exp(g) for anti-Hermitian g, via eigendecomposition of i*g."""
    return herm_expm(1j * g, 1.0)


def displacement_matrix(beta: complex, cutoff: FockCutoff, mode: int = 0) -> np.ndarray:
    """Unitary D(beta) = exp(beta b† - beta* b) on the given mode.

    The exponential is taken on the single-mode block and tensored with
    identities afterwards; the generator commutes with the embedding, so this
    is exact and keeps the eigendecomposition at single-mode dimension.
    """
    cutoff.check_mode(mode)
    single = FockCutoff(n_max=cutoff.n_max, modes=1)
    bdag = creation_matrix(single)
    g = beta * bdag - np.conj(beta) * bdag.conj().T
    u = _expm_antihermitian(g)
    _check_unitary(u, "displacement_matrix")
    return _embed(u, cutoff, mode)


def rotation_matrix(theta: float, cutoff: FockCutoff, mode: int = 0) -> np.ndarray:
    """Phase rotation U(theta) = exp(-i theta N), diagonal with entries e^{-i theta n}."""
    cutoff.check_mode(mode)
    d = cutoff.dim_per_mode
    diag = np.exp(-1j * theta * np.arange(d))
    return _embed(np.diag(diag), cutoff, mode)


def rotation_phases(theta: float, cutoff: FockCutoff, mode: int = 0) -> np.ndarray:
    """Diagonal of rotation_matrix as a vector over the joint basis."""
    cutoff.check_mode(mode)
    d = cutoff.dim_per_mode
    single = np.exp(-1j * theta * np.arange(d))
    out = np.ones(1, dtype=complex)
    for m in range(cutoff.modes):
        out = np.kron(out, single if m == mode else np.ones(d))
    return out


def squeeze_matrix(z: complex, cutoff: FockCutoff, mode: int = 0) -> np.ndarray:
    """Unitary S(z) = exp[(z* b^2 - z b†^2)/2] on the given mode."""
    cutoff.check_mode(mode)
    single = FockCutoff(n_max=cutoff.n_max, modes=1)
    bdag = creation_matrix(single)
    b = bdag.conj().T
    g = 0.5 * (np.conj(z) * (b @ b) - z * (bdag @ bdag))
    u = _expm_antihermitian(g)
    _check_unitary(u, "squeeze_matrix")
    return _embed(u, cutoff, mode)


def _check_unitary(u: np.ndarray, label: str) -> None:
    defect = np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0])))
    if defect > UNITARITY_TOL:
        raise CutoffError(f"{label}: unitarity defect {defect:.2e} exceeds {UNITARITY_TOL}")


# ---------------------------------------------------------------------------
# Hermitian matrix exponential with a per-matrix eigendecomposition cache.

_eig_cache: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
_eig_lock = threading.Lock()


def herm_eig(h: np.ndarray, tol: float = HERMITICITY_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Hermitian matrix, cached by matrix identity.

    Repeated calls with the same array object reuse the decomposition, so
    many evolution times cost one eigh.  Safe for concurrent reads.
    """
    defect = np.max(np.abs(h - h.conj().T))
    scale = max(1.0, np.max(np.abs(h)))
    if defect > tol * scale:
        raise ValueError(f"matrix is not Hermitian: defect {defect:.2e}")
    key = id(h)
    with _eig_lock:
        hit = _eig_cache.get(key)
        if hit is not None and hit[0] is h:
            return hit[1], hit[2]
    w, v = np.linalg.eigh(0.5 * (h + h.conj().T))
    with _eig_lock:
        _eig_cache[key] = (h, w, v)
        if len(_eig_cache) > 64:
            _eig_cache.pop(next(iter(_eig_cache)))
    return w, v


def herm_expm(h: np.ndarray, t: float) -> np.ndarray:
    """exp(-i H t) for Hermitian H, via cached eigendecomposition."""
    w, v = herm_eig(h)
    return (v * np.exp(-1j * w * t)) @ v.conj().T


def adaptive_cutoff(spec, beta_max: float, tol: float = 1e-8, ceiling: int = 256) -> FockCutoff:
    """Smallest n_max in a doubling sequence adequate for displacements up to beta_max.

    The convergence observable is the displaced-vacuum energy <0|D† H D|0>
    (the vacuum diagonal of the numerically displaced Hamiltonian, i.e. the
    constant term as seen at finite truncation): n_max is accepted once this
    value moves by less than tol when n_max doubles.  The floor is
    ceil(4 (beta_max^2 + d)).
    """
    from . import hamiltonian as _ham

    floor = max(int(math.ceil(4.0 * (beta_max**2 + spec.max_order))), spec.max_order + 1, 2)

    def displaced_vacuum_energy(n_max: int) -> float:
        cut = FockCutoff(n_max=n_max, modes=spec.modes)
        h = _ham.build_matrix(spec, cut)
        v = vacuum_state(cut)
        for m in range(spec.modes):
            v = displacement_matrix(beta_max, cut, m) @ v
        return float(np.real(v.conj() @ (h @ v)))

    if floor > ceiling:
        raise CutoffError(f"ceiling {ceiling} is below the floor {floor}")
    n = floor
    val = displaced_vacuum_energy(n)
    while n <= ceiling:
        n2 = 2 * n
        val2 = displaced_vacuum_energy(n2)
        if abs(val2 - val) < tol:
            return FockCutoff(n_max=n, modes=spec.modes)
        n, val = n2, val2
    raise CutoffError(
        f"adaptive_cutoff did not converge below n_max={ceiling} (last change {abs(val2 - val):.2e})"
    )
