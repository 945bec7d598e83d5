"""Small complex linear algebra, centered modulo, seeded RNG streams and a
finite-difference gradient oracle.

Complex values are plain ``numpy.complex128`` arrays (float64 re/im pairs).
"""

from __future__ import annotations

import numpy as np
import scipy.linalg


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a solve hits a singular or non positive-definite system."""


_HERMITIAN_TOL = 1e-10


def cmod(u, p):
    """Centered modulo ``u - p*floor(u/p + 1/2)``, result in ``[-p/2, p/2)``.

    Works elementwise on arrays. Ties at half a period resolve downward, so
    ``cmod(a, 2a) == cmod(-a, 2a) == -a``.
    """
    if not np.all(np.asarray(p) > 0):
        raise ValueError("period must be positive")
    u = np.asarray(u, dtype=float)
    out = u - p * np.floor(u / p + 0.5)
    # u/p + 1/2 can round up across an integer for u just below p/2
    out = np.where(out >= 0.5 * p, out - p, out)
    out = np.where(out < -0.5 * p, out + p, out)
    if out.ndim == 0:
        return float(out)
    return out


def solve_hermitian(A, b):
    """Solve ``A x = b`` for Hermitian positive-definite ``A`` via Cholesky."""
    A = np.asarray(A, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got shape {A.shape}")
    if np.max(np.abs(A - A.conj().T), initial=0.0) > _HERMITIAN_TOL:
        raise ValueError("A is not Hermitian")
    try:
        factor = scipy.linalg.cho_factor(A, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(str(exc)) from exc
    return scipy.linalg.cho_solve(factor, b)


def lstsq(A, b, rcond: float = 1e-12):
    """Least-squares solution of ``A x ~= b`` for a tall full-rank ``A``.

    Uses a QR factorization; a rank-deficient ``A`` raises
    :class:`SingularMatrixError` instead of returning a minimum-norm answer.
    """
    A = np.asarray(A, dtype=complex)
    b = np.asarray(b, dtype=complex)
    rows, cols = A.shape
    if rows < cols:
        raise ValueError("lstsq needs rows >= cols")
    q, r = np.linalg.qr(A, mode="reduced")
    diag = np.abs(np.diag(r))
    if cols and diag.min() <= rcond * max(diag.max(), 1.0):
        raise SingularMatrixError("matrix is rank deficient")
    return scipy.linalg.solve_triangular(r, q.conj().T @ b)


def finite_diff_grad(f, x, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a real vector."""
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        g[i] = (fp - fm) / (2.0 * eps)
    return grad


class RngStream:
    """Reproducible random substream keyed by ``(master_seed, stream_id)``.

    Backed by numpy's Philox-4x64 counter-based generator. The key is derived
    through :class:`numpy.random.SeedSequence` with ``stream_id`` as the spawn
    key, so draws are identical across platforms and do not depend on the
    order in which streams are created.
    """

    def __init__(self, master_seed: int, stream_id: int | tuple[int, ...] = 0):
        if isinstance(stream_id, int):
            stream_id = (stream_id,)
        self.master_seed = int(master_seed)
        self.stream_id = tuple(int(s) for s in stream_id)
        seq = np.random.SeedSequence(self.master_seed, spawn_key=self.stream_id)
        self.generator = np.random.Generator(np.random.Philox(seq))

    def child(self, *ids: int) -> "RngStream":
        return RngStream(self.master_seed, self.stream_id + tuple(ids))

    def __repr__(self) -> str:
        return f"RngStream(master_seed={self.master_seed}, stream_id={self.stream_id})"

    # thin pass-throughs used by the simulator
    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def choice(self, values, size=None):
        return self.generator.choice(values, size=size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def complex_normal(self, size=None, var: float = 1.0):
        """Circularly-symmetric complex Gaussian with ``E|z|^2 = var``."""
        scale = np.sqrt(var / 2.0)
        return self.generator.normal(0.0, scale, size) + 1j * self.generator.normal(0.0, scale, size)


def as_stream(rng, default_id: int = 0) -> RngStream:
    """Accept an ``RngStream`` or an integer seed."""
    if isinstance(rng, RngStream):
        return rng
    return RngStream(int(rng), default_id)
