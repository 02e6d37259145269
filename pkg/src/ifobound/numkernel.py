"""Dense linear-algebra kernel.

Points are plain 1-d ``float64`` arrays (finite truncations of l2 sequences).
Orthonormal families are stored column-wise in a ``(dim, size)`` array.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .errors import ContractViolation, ConvergenceError, SingularityError

ORTHO_TOL = 1e-10
IN_SPAN_TOL = 1e-10
DENSE_EIG_MAX_DIM = 512


def as_point(x) -> np.ndarray:
    """Return ``x`` as a finite 1-d float64 array."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ContractViolation(f"expected a 1-d point, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ContractViolation("point has non-finite coordinates")
    return x


class OrthonormalFamily:
    """Ordered orthonormal family ``[s_1, ..., s_size]`` in ``R^dim``.

    Instances are treated as immutable; :func:`gram_schmidt_extend` returns a
    new family.
    """

    __slots__ = ("_members",)

    def __init__(self, members: np.ndarray):
        members = np.asarray(members, dtype=np.float64)
        if members.ndim != 2:
            raise ContractViolation("family members must be stored as a (dim, size) array")
        if members.shape[1] > members.shape[0]:
            raise ContractViolation(
                f"family of size {members.shape[1]} cannot be orthonormal in dim {members.shape[0]}"
            )
        members.setflags(write=False)
        self._members = members

    @classmethod
    def empty(cls, dim: int) -> "OrthonormalFamily":
        return cls(np.zeros((dim, 0)))

    @classmethod
    def from_vectors(cls, vectors, dim: int | None = None) -> "OrthonormalFamily":
        vectors = [np.asarray(v, dtype=np.float64) for v in vectors]
        if not vectors:
            if dim is None:
                raise ContractViolation("dim is required for an empty family")
            return cls.empty(dim)
        dims = {v.shape for v in vectors}
        if len(dims) != 1:
            raise ContractViolation(f"family members have mismatched dimensions {sorted(dims)}")
        return cls(np.column_stack(vectors))

    @property
    def members(self) -> np.ndarray:
        return self._members

    @property
    def dim(self) -> int:
        return self._members.shape[0]

    @property
    def size(self) -> int:
        return self._members.shape[1]

    def __len__(self) -> int:
        return self.size

    def __getitem__(self, k: int) -> np.ndarray:
        return self._members[:, k]

    def orthonormality_defect(self) -> float:
        """Largest ``|<s_i, s_j> - delta_ij|`` over all pairs."""
        if self.size == 0:
            return 0.0
        gram = self._members.T @ self._members
        return float(np.max(np.abs(gram - np.eye(self.size))))

    def is_orthonormal(self, tol: float = ORTHO_TOL) -> bool:
        return self.orthonormality_defect() <= tol

    def __repr__(self) -> str:
        return f"OrthonormalFamily(dim={self.dim}, size={self.size})"


def family_apply(S: OrthonormalFamily, x) -> np.ndarray:
    """Return ``S x = sum_i x(i) s_i``; coordinates of ``x`` beyond ``S.size`` are ignored."""
    x = as_point(x)
    if x.shape[0] < S.size:
        raise ContractViolation(f"need at least {S.size} coefficients, got {x.shape[0]}")
    return S.members @ x[: S.size]


def family_transpose_apply(S: OrthonormalFamily, x, pad_to: int | None = None) -> np.ndarray:
    """Return the coefficient sequence ``(<s_i, x>)_i``, optionally zero-padded."""
    x = as_point(x)
    if x.shape[0] != S.dim:
        raise ContractViolation(f"point has dim {x.shape[0]}, family lives in dim {S.dim}")
    coef = S.members.T @ x
    if pad_to is not None:
        if pad_to < S.size:
            raise ContractViolation(f"cannot pad {S.size} coefficients down to {pad_to}")
        out = np.zeros(pad_to)
        out[: S.size] = coef
        return out
    return coef


def _check_component(i: int, n: int) -> None:
    if n < 1:
        raise ContractViolation(f"component count must be positive, got {n}")
    if not 0 <= i < n:
        raise ContractViolation(f"component index {i} out of range for n={n}")


def q_embed(i: int, n: int, x) -> np.ndarray:
    """Scatter ``x`` onto the interleaved coordinates of component ``i`` (0-based).

    Coordinate ``j`` of ``x`` lands on ambient coordinate ``j*n + i``.
    """
    _check_component(i, n)
    x = as_point(x)
    out = np.zeros(n * x.shape[0])
    out[i::n] = x
    return out


def q_restrict(i: int, n: int, y) -> np.ndarray:
    """Gather the interleaved coordinates ``i, i+n, i+2n, ...`` of ``y`` (0-based ``i``)."""
    _check_component(i, n)
    y = as_point(y)
    if y.shape[0] % n:
        raise ContractViolation(f"ambient dim {y.shape[0]} is not a multiple of n={n}")
    return y[i::n].copy()


def q_family(i: int, n: int, dim: int) -> OrthonormalFamily:
    """Explicit ``[e_i, e_{n+i}, ...]`` family in ``R^(n*dim)``; slow path used for cross-checks."""
    _check_component(i, n)
    members = np.zeros((n * dim, dim))
    members[np.arange(dim) * n + i, np.arange(dim)] = 1.0
    return OrthonormalFamily(members)


def _residual(S: OrthonormalFamily, v: np.ndarray) -> np.ndarray:
    # classical Gram-Schmidt applied twice
    r = v.copy()
    if S.size:
        for _ in range(2):
            r -= S.members @ (S.members.T @ r)
    return r


def gram_schmidt_extend(S: OrthonormalFamily, v, tol: float = IN_SPAN_TOL) -> OrthonormalFamily:
    """Append the normalized residual of ``v`` unless ``v`` already lies in ``Span(S)``.

    ``v`` counts as in the span when ``||v - S S^T v|| <= tol * ||v||`` (or ``v = 0``).
    """
    if tol <= 0:
        raise ContractViolation("tol must be positive")
    v = as_point(v)
    if v.shape[0] != S.dim:
        raise ContractViolation(f"vector has dim {v.shape[0]}, family lives in dim {S.dim}")
    vnorm = np.linalg.norm(v)
    if vnorm == 0.0:
        return S
    r = _residual(S, v)
    rnorm = np.linalg.norm(r)
    if rnorm <= tol * vnorm:
        return S
    return OrthonormalFamily(np.column_stack([S.members, r / rnorm]))


def project_span(S: OrthonormalFamily, x) -> np.ndarray:
    """Orthogonal projection ``S S^T x``."""
    return family_apply(S, family_transpose_apply(S, x))


def dist_to_span(S: OrthonormalFamily, x) -> float:
    x = as_point(x)
    return float(np.linalg.norm(x - project_span(S, x)))


def mirror_about_span(S: OrthonormalFamily, x) -> np.ndarray:
    """Reflection ``2 P x - x`` through ``Span(S)``."""
    x = as_point(x)
    return 2.0 * project_span(S, x) - x


def tridiag_spd_solve(diag, off, rhs) -> np.ndarray:
    """Solve a symmetric positive definite tridiagonal system.

    Parameters
    ----------
    diag : array_like, shape (m,)
        Main diagonal.
    off : array_like, shape (m-1,)
        Sub/super diagonal.
    rhs : array_like, shape (m,)

    Raises
    ------
    SingularityError
        If the Cholesky factorization meets a non-positive pivot.
    """
    diag = np.asarray(diag, dtype=np.float64)
    off = np.asarray(off, dtype=np.float64)
    rhs = as_point(rhs)
    m = diag.shape[0]
    if off.shape[0] != max(m - 1, 0) or rhs.shape[0] != m:
        raise ContractViolation(
            f"inconsistent tridiagonal shapes: diag {diag.shape}, off {off.shape}, rhs {rhs.shape}"
        )
    # upper banded storage: row 0 holds the superdiagonal, row 1 the diagonal
    ab = np.zeros((2, m))
    ab[0, 1:] = off
    ab[1] = diag
    try:
        return scipy.linalg.solveh_banded(ab, rhs, lower=False, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise SingularityError(f"tridiagonal matrix is not positive definite: {exc}") from exc


def extreme_eigs_sym(apply, dim: int, tol: float = 1e-8, maxiter: int | None = None):
    """Smallest and largest eigenvalues of a symmetric operator given matrix-free.

    Small operators (``dim <= 512``) are materialized and solved densely; larger
    ones go through implicitly restarted Lanczos.

    Returns
    -------
    (lambda_min, lambda_max) : tuple of float
    """
    if dim < 1:
        raise ContractViolation("dim must be >= 1")
    if dim <= DENSE_EIG_MAX_DIM:
        A = np.column_stack([apply(e) for e in np.eye(dim)])
        asym = np.max(np.abs(A - A.T)) if dim > 1 else 0.0
        if asym > 1e-8 * max(1.0, np.max(np.abs(A))):
            raise ContractViolation(f"operator is not symmetric (defect {asym:.3e})")
        w = np.linalg.eigvalsh(0.5 * (A + A.T))
        return float(w[0]), float(w[-1])

    op = scipy.sparse.linalg.LinearOperator((dim, dim), matvec=apply, dtype=np.float64)
    v0 = np.ones(dim) / np.sqrt(dim)
    out = []
    for which in ("SA", "LA"):
        try:
            w = scipy.sparse.linalg.eigsh(
                op, k=1, which=which, tol=tol, maxiter=maxiter, v0=v0, return_eigenvectors=False
            )
        except scipy.sparse.linalg.ArpackNoConvergence as exc:
            best = exc.eigenvalues[0] if len(exc.eigenvalues) else None
            raise ConvergenceError(f"Lanczos did not converge for {which}", best_estimate=best) from exc
        out.append(float(w[0]))
    return out[0], out[1]
