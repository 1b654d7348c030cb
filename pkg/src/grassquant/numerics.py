"""Complex-matrix primitives and Grassmannian geometry.

Subspaces are represented by semi-unitary matrices (tall complex matrices Q
with Q^H Q = I); all routines treat them as points on the Grassmann manifold,
i.e. only the column span matters. Structural checks use SEMI_UNITARY_TOL,
reconstruction identities RECONSTRUCTION_TOL.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalFailure

SEMI_UNITARY_TOL = 1e-10
RECONSTRUCTION_TOL = 1e-9


def as_complex_matrix(a) -> np.ndarray:
    """Coerce input to a 2-D complex128 array."""
    m = np.asarray(a, dtype=np.complex128)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={m.ndim}")
    return m


def is_semi_unitary(q: np.ndarray, tol: float = SEMI_UNITARY_TOL) -> bool:
    """True when q^H q = I within tol (columns orthonormal)."""
    q = np.asarray(q)
    gram = q.conj().T @ q
    return bool(np.max(np.abs(gram - np.eye(q.shape[1]))) <= tol)


def check_subspace_basis(q: np.ndarray, tol: float = SEMI_UNITARY_TOL) -> np.ndarray:
    """Validate a subspace basis: 2-D, m <= n, semi-unitary. Returns the array."""
    q = as_complex_matrix(q)
    n, m = q.shape
    if m > n:
        raise ValueError(f"subspace dimension {m} exceeds ambient dimension {n}")
    if not is_semi_unitary(q, tol):
        raise ValueError("matrix is not semi-unitary within tolerance")
    return q


def phase_fix_columns(u: np.ndarray, v: np.ndarray | None = None,
                      tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray | None]:
    """Rotate each column of u so its first entry of magnitude > tol is real
    and nonnegative; the same rotation is applied to the matching column of v
    (keeps u diag(s) v^H invariant). Removes the column-phase ambiguity of
    SVD/QR factors so regression output is stable.
    """
    u = u.copy()
    v = v.copy() if v is not None else None
    for j in range(u.shape[1]):
        col = u[:, j]
        nz = np.flatnonzero(np.abs(col) > tol)
        if nz.size == 0:
            continue
        pivot = col[nz[0]]
        rot = np.conj(pivot) / np.abs(pivot)
        u[:, j] *= rot
        u[nz[0], j] = np.abs(pivot)  # pin exactly real
        if v is not None:
            v[:, j] *= rot
    return u, v


def compact_svd(h: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Compact SVD h = u @ diag(s) @ v^H for a tall matrix (n >= m).

    Returns (u, s, v) with u n-by-m semi-unitary, s descending, v m-by-m
    unitary. Column phases follow the convention of phase_fix_columns.
    """
    h = as_complex_matrix(h)
    n, m = h.shape
    if n < m:
        raise ValueError(f"compact_svd expects n >= m, got {n}x{m}")
    try:
        u, s, vh = np.linalg.svd(h, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"SVD did not converge for shape {n}x{m}: {exc}") from exc
    u, v = phase_fix_columns(u, vh.conj().T)
    return u, s, v


def chordal_distance(u: np.ndarray, q: np.ndarray) -> float:
    """Normalized squared chordal distance 1 - tr(q^H u u^H q) / m.

    Symmetric, in [0, 1], invariant under right-multiplication of either
    argument by a unitary; 0 iff the spans coincide, 1 iff orthogonal.
    """
    u = np.asarray(u)
    q = np.asarray(q)
    if u.shape != q.shape:
        raise ValueError(f"shape mismatch: {u.shape} vs {q.shape}")
    m = u.shape[1]
    overlap = np.sum(np.abs(u.conj().T @ q) ** 2)
    return float(min(1.0, max(0.0, 1.0 - overlap / m)))


def complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard circularly-symmetric complex Gaussian CN(0, 1) entries."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def random_semiunitary(n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """Isotropically distributed (Haar) m-dim subspace basis in C^n.

    QR orthonormalization of an n-by-m complex Gaussian matrix with the
    R-diagonal forced real positive, which yields the Haar subspace
    distribution and a deterministic representative for a given rng state.
    """
    if m > n:
        raise ValueError(f"m={m} exceeds n={n}")
    g = complex_gaussian(rng, (n, m))
    q, r = np.linalg.qr(g)
    # fix the gauge: make diag(r) real positive
    d = np.diagonal(r)
    absd = np.abs(d)
    rot = np.where(absd > 0, np.conj(d) / np.where(absd > 0, absd, 1.0), 1.0)
    return q * rot[np.newaxis, :]


def inv_sqrt_hermitian(a: np.ndarray, eig_floor: float = 1e-12) -> np.ndarray:
    """Inverse matrix square root A^{-1/2} of a Hermitian positive definite A.

    The result S is Hermitian and satisfies S A S = I. Raises
    NumericalFailure when A deviates from Hermitian or has an eigenvalue
    below eig_floor (degenerate quantization step).
    """
    a = as_complex_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"expected square matrix, got {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.conj().T)) > 1e-10 * scale:
        raise NumericalFailure("matrix is not Hermitian within 1e-10")
    w, vec = np.linalg.eigh(a)
    if np.min(w) <= eig_floor:
        raise NumericalFailure(f"near-singular matrix: min eigenvalue {np.min(w):.3e}")
    s = (vec * (1.0 / np.sqrt(w))) @ vec.conj().T
    return (s + s.conj().T) / 2.0


def complement_completion(q: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of a unit vector.

    For q in C^d returns W of shape d-by-(d-1) with W^H W = I and q^H W = 0.
    Built from the Householder reflector mapping q onto e_1 (columns 2..d of
    the reflector), so W depends only on span(q): transmitter and receiver
    reconstruct identical stage matrices from a fed-back codebook index.
    """
    q = np.asarray(q, dtype=np.complex128)
    if q.ndim == 2:
        if q.shape[1] != 1:
            raise ValueError(f"expected a single column, got {q.shape}")
        q = q[:, 0]
    d = q.shape[0]
    if d < 2:
        raise ValueError(f"complement needs dimension >= 2, got {d}")
    nrm = np.linalg.norm(q)
    if abs(nrm - 1.0) > 1e-8:
        raise ValueError(f"expected a unit vector, got norm {nrm}")
    # v = q + e^{i arg(q_0)} e_1; reflector H = I - 2 v v^H / ||v||^2 is
    # unitary Hermitian with H q proportional to e_1, never degenerate.
    absq0 = np.abs(q[0])
    phase = q[0] / absq0 if absq0 > 0 else 1.0
    v = q.copy()
    v[0] += phase
    h = np.eye(d, dtype=np.complex128) - 2.0 * np.outer(v, v.conj()) / np.vdot(v, v).real
    return h[:, 1:]


def batch_complement_completion(qs: np.ndarray) -> np.ndarray:
    """Vectorized complement_completion for rows of qs (shape (s, d)).

    Returns (s, d, d-1). Same reflector construction, same floats, as the
    single-vector routine.
    """
    s, d = qs.shape
    q0 = qs[:, 0]
    absq0 = np.abs(q0)
    phase = np.where(absq0 > 0, q0 / np.where(absq0 > 0, absq0, 1.0), 1.0)
    v = qs.copy()
    v[:, 0] += phase
    nrm2 = np.sum(np.abs(v) ** 2, axis=1).real
    h = np.broadcast_to(np.eye(d, dtype=np.complex128), (s, d, d)).copy()
    h -= 2.0 * v[:, :, None] * v[:, None, :].conj() / nrm2[:, None, None]
    return h[:, :, 1:]
