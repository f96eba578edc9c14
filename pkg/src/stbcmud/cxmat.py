"""Small dense complex matrix kernel.

Matrices are plain 2-D ``numpy`` arrays of ``complex128`` (``ComplexMat``).
The helpers here add the dimension checks and tolerance policy the rest of
the package relies on, plus :class:`AlamoutiBlock`, the 2x2 matrix
``[[a, b], [-b*, a*]]`` whose algebra is closed under products, sums,
Hermitian transpose and inversion.

Most functions also accept stacks of matrices with leading batch axes;
the Monte Carlo engine relies on that.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "STRUCT_TOL",
    "DECOMP_TOL",
    "DimensionError",
    "SingularMatrixError",
    "AlamoutiBlock",
    "as_cmat",
    "hermitian",
    "matmul",
    "frob_norm_sq",
    "alamouti_norm_sq",
    "alamouti_inverse",
    "alamouti_inv_matrix",
    "is_alamouti",
    "numerical_rank",
    "det",
    "eig_real_sym",
    "kron",
]

STRUCT_TOL = 1e-12
DECOMP_TOL = 1e-8


class DimensionError(ValueError):
    """Raised when matrix shapes are incompatible."""


class SingularMatrixError(ValueError):
    """Raised when a matrix that must be inverted is (numerically) singular."""


def as_cmat(m) -> np.ndarray:
    """Return ``m`` as a complex128 array with at least two dimensions."""
    arr = np.asarray(m, dtype=np.complex128)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix entries must be finite")
    return arr


@dataclass(frozen=True)
class AlamoutiBlock:
    """The 2x2 matrix ``[[a, b], [-conj(b), conj(a)]]``.

    ``a`` and ``b`` may be scalars or equally shaped arrays (a batch of
    blocks).
    """

    a: complex
    b: complex

    @classmethod
    def from_matrix(cls, m, tol: float = STRUCT_TOL) -> "AlamoutiBlock":
        m = np.asarray(m, dtype=np.complex128)
        if m.shape[-2:] != (2, 2):
            raise DimensionError(f"expected 2x2 block, got {m.shape[-2:]}")
        if not is_alamouti(m, tol):
            raise ValueError("matrix does not have the Alamouti conjugate pattern")
        return cls(m[..., 0, 0], m[..., 0, 1])

    def matrix(self) -> np.ndarray:
        a = np.asarray(self.a, dtype=np.complex128)
        b = np.asarray(self.b, dtype=np.complex128)
        out = np.empty(np.broadcast(a, b).shape + (2, 2), dtype=np.complex128)
        out[..., 0, 0] = a
        out[..., 0, 1] = b
        out[..., 1, 0] = -np.conj(b)
        out[..., 1, 1] = np.conj(a)
        return out

    def norm_sq(self):
        """``|a|^2 + |b|^2``; the block satisfies ``A^H A = norm_sq * I``."""
        return np.abs(self.a) ** 2 + np.abs(self.b) ** 2

    def __matmul__(self, other: "AlamoutiBlock") -> "AlamoutiBlock":
        # [[a,b],[-b*,a*]] @ [[c,d],[-d*,c*]] stays in the same family
        a, b, c, d = self.a, self.b, other.a, other.b
        return AlamoutiBlock(a * c - b * np.conj(d), a * d + b * np.conj(c))

    def hermitian(self) -> "AlamoutiBlock":
        return AlamoutiBlock(np.conj(self.a), -self.b)


def hermitian(m) -> np.ndarray:
    """Conjugate transpose over the last two axes."""
    return np.conj(np.swapaxes(np.asarray(m, dtype=np.complex128), -1, -2))


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul needs matrices (ndim >= 2)")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"cannot multiply {a.shape[-2:]} by {b.shape[-2:]}")
    return a @ b


def frob_norm_sq(m):
    """Sum of squared magnitudes over the last two axes."""
    m = np.asarray(m)
    return np.sum(m.real**2 + m.imag**2, axis=(-2, -1))


def alamouti_norm_sq(m):
    """Squared spectral norm of a stack of Alamouti blocks.

    For a matrix made of vertically stacked Alamouti blocks, ``M^H M`` is a
    multiple of ``I_2`` and this returns that multiple (half the Frobenius
    norm). This is the norm under which ``K^{-1} = K^H / ||K||^2``.
    """
    return 0.5 * frob_norm_sq(m)


def alamouti_inverse(blk: AlamoutiBlock) -> AlamoutiBlock:
    n = blk.norm_sq()
    if np.any(n <= STRUCT_TOL):
        raise SingularMatrixError("Alamouti block is singular (|a|^2+|b|^2 == 0)")
    h = blk.hermitian()
    return AlamoutiBlock(h.a / n, h.b / n)


def alamouti_inv_matrix(m, floor: float = STRUCT_TOL) -> np.ndarray:
    """Invert a stack of 2x2 Alamouti matrices as ``m^H / (|a|^2+|b|^2)``."""
    m = np.asarray(m, dtype=np.complex128)
    n = alamouti_norm_sq(m)
    if np.any(n <= floor):
        raise SingularMatrixError("Alamouti block is singular")
    return hermitian(m) / n[..., None, None]


def is_alamouti(m, tol: float = STRUCT_TOL) -> bool:
    m = np.asarray(m, dtype=np.complex128)
    if m.shape[-2:] != (2, 2):
        return False
    scale = max(1.0, float(np.max(np.abs(m), initial=0.0)))
    return bool(
        np.all(np.abs(m[..., 1, 0] + np.conj(m[..., 0, 1])) <= tol * scale)
        and np.all(np.abs(m[..., 1, 1] - np.conj(m[..., 0, 0])) <= tol * scale)
    )


def numerical_rank(m, tol: float = 1e-9) -> int:
    """Number of singular values above ``tol`` times the largest one."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    s = np.linalg.svd(as_cmat(m), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > tol * s[0]))


def det(m) -> complex:
    m = as_cmat(m)
    if m.shape[0] != m.shape[1]:
        raise DimensionError(f"determinant of non-square {m.shape}")
    return complex(np.linalg.det(m))


def eig_real_sym(m, tol: float = 1e-10):
    """Eigenpairs of a real symmetric matrix, eigenvalues ascending.

    Returns a list of ``(eigenvalue, eigenvector)`` with each eigenvector an
    ``(n, 1)`` column.
    """
    m = as_cmat(m)
    if m.shape[0] != m.shape[1]:
        raise DimensionError(f"eigen-decomposition of non-square {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m))))
    if np.max(np.abs(m.imag), initial=0.0) > tol * scale:
        raise ValueError("matrix is not real")
    r = m.real
    if np.max(np.abs(r - r.T), initial=0.0) > tol * scale:
        raise ValueError("matrix is not symmetric")
    w, v = np.linalg.eigh(0.5 * (r + r.T))
    return [(float(w[i]), v[:, i : i + 1].astype(np.complex128)) for i in range(w.size)]


def kron(a, b) -> np.ndarray:
    return np.kron(as_cmat(a), as_cmat(b))
