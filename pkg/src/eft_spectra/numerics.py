r"""Numerical kernels used by every other module.

* :func:`scaled_bessel_i` -- :math:`e^{-\beta} I_j(\beta)` by Miller's backward
  recurrence, normalised with :math:`I_0 + 2\sum_{j\ge1} I_j = e^{\beta}`.
* :func:`chebyshev_t` -- :math:`T_k(x) = \cos(k \arccos x)`.
* :func:`sym_eig` -- symmetric eigendecomposition, eigenvalues descending.
* :class:`RngStream` -- counter-based normal deviates keyed by ``(seed, stream_id)``.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import ContractError, DomainError

__all__ = [
    "scaled_bessel_i",
    "scaled_bessel_array",
    "bessel_tail",
    "chebyshev_t",
    "SymEigResult",
    "sym_eig",
    "jacobi_eig",
    "RngStream",
    "rng_normal",
]

# ---------------------------------------------------------------------------
# scaled modified Bessel functions
# ---------------------------------------------------------------------------

_SERIES_BETA_MAX = 1.0  # below this the power series is cheaper and exact enough
_RESCALE_AT = 1e250


@numba.njit(cache=True)
def _miller_backward(beta: float, n_start: int) -> np.ndarray:
    # unnormalised minimal solution of I_{j-1} = I_{j+1} + (2j/beta) I_j
    out = np.zeros(n_start + 1)
    nxt = 0.0
    cur = 1.0
    out[n_start] = cur
    for j in range(n_start, 0, -1):
        prev = nxt + (2.0 * j / beta) * cur
        out[j - 1] = prev
        nxt = cur
        cur = prev
        if prev > _RESCALE_AT:
            inv = 1.0 / _RESCALE_AT
            for i in range(j - 1, n_start + 1):
                out[i] *= inv
            nxt *= inv
            cur *= inv
    return out


def _series_array(beta: float, j_max: int) -> np.ndarray:
    # e^{-b} (b/2)^j sum_m (b^2/4)^m / (m! (m+j)!), computed in log space per order
    j = np.arange(j_max + 1, dtype=float)
    q = beta * beta / 4.0
    with np.errstate(divide="ignore"):
        log_lead = j * math.log(beta / 2.0) - np.array([math.lgamma(v + 1.0) for v in j]) - beta
    total = np.ones_like(j)
    term = np.ones_like(j)
    for m in range(1, 60):
        term = term * q / (m * (m + j))
        total += term
        if np.all(term < 1e-18 * total):
            break
    return np.exp(log_lead) * total


def _start_order(beta: float, j_max: int) -> int:
    # e^{-b} I_j(b) ~ exp(-j^2/(2b)); 12 sqrt(b) puts the start beyond exp(-72)
    return int(max(j_max, math.ceil(12.0 * math.sqrt(beta)))) + 40


@functools.lru_cache(maxsize=64)
def _cached_array(beta: float, j_max: int) -> np.ndarray:
    if beta <= _SERIES_BETA_MAX:
        arr = _series_array(beta, j_max)
    else:
        n = _start_order(beta, j_max)
        raw = _miller_backward(beta, n)
        norm = raw[0] + 2.0 * math.fsum(raw[1:])
        arr = raw[: j_max + 1] / norm
    arr.setflags(write=False)
    return arr


def _check_beta(beta: float) -> float:
    beta = float(beta)
    if not math.isfinite(beta) or beta <= 0.0:
        raise DomainError(f"beta must be positive and finite, got {beta!r}")
    return beta


def scaled_bessel_array(beta: float, j_max: int) -> np.ndarray:
    r"""Return :math:`e^{-\beta} I_j(\beta)` for ``j = 0..j_max`` (read-only array)."""
    beta = _check_beta(beta)
    if j_max < 0:
        raise DomainError(f"order must be non-negative, got {j_max}")
    return _cached_array(beta, int(j_max))


def scaled_bessel_i(j: int, beta: float) -> float:
    r"""Scaled modified Bessel function of the first kind, :math:`e^{-\beta} I_j(\beta)`.

    Parameters
    ----------
    j : int
        Non-negative order.
    beta : float
        Positive argument.

    Raises
    ------
    DomainError
        If ``beta`` is not positive and finite, or ``j < 0``.
    """
    if int(j) != j or j < 0:
        raise DomainError(f"order must be a non-negative integer, got {j!r}")
    return float(scaled_bessel_array(beta, int(j))[int(j)])


def bessel_tail(beta: float, k: int) -> float:
    r"""Return :math:`2\sum_{j>k} e^{-\beta} I_j(\beta)`.

    Summed directly from the tail so the result keeps full relative accuracy
    when it is far below machine epsilon (it equals
    :math:`1 - e^{-\beta}I_0 - 2\sum_{j=1}^{k} e^{-\beta}I_j` in exact arithmetic).
    """
    beta = _check_beta(beta)
    if k < 0:
        raise DomainError("k must be non-negative")
    span = 64
    while True:
        arr = scaled_bessel_array(beta, k + span)
        tail = arr[k + 1 :]
        total = math.fsum(tail)
        if total == 0.0 or tail[-1] <= 1e-17 * total:
            return 2.0 * total
        span *= 2


# ---------------------------------------------------------------------------
# Chebyshev polynomials
# ---------------------------------------------------------------------------

_CHEB_CLAMP = 1e-12


def chebyshev_t(k, x):
    """Chebyshev polynomial of the first kind via ``cos(k arccos x)``.

    Broadcasts over ``k`` and ``x``. Arguments within 1e-12 outside [-1, 1]
    are clamped; anything further out raises :class:`DomainError`.
    """
    xa = np.asarray(x, dtype=float)
    ka = np.asarray(k)
    if np.any(ka < 0):
        raise DomainError("Chebyshev degree must be non-negative")
    if np.any(~np.isfinite(xa)) or np.any(np.abs(xa) > 1.0 + _CHEB_CLAMP):
        raise DomainError("Chebyshev argument outside [-1, 1]")
    out = np.cos(ka * np.arccos(np.clip(xa, -1.0, 1.0)))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# symmetric eigendecomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SymEigResult:
    """Eigenpairs of a real symmetric matrix, eigenvalues in descending order."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    # first component that is not numerically zero is made positive
    if vecs.size == 0:
        return vecs
    mags = np.abs(vecs)
    tol = 1e-12 * mags.max(axis=0, keepdims=True)
    first = np.argmax(mags > tol, axis=0)
    signs = np.sign(vecs[first, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


@numba.njit(cache=True)
def _jacobi_core(a: np.ndarray, tol: float, max_sweeps: int):
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(max_sweeps):
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off += 2.0 * a[p, q] * a[p, q]
        if math.sqrt(off) <= tol:
            return a, v, True
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for r in range(n):
                    arp = a[r, p]
                    arq = a[r, q]
                    a[r, p] = c * arp - s * arq
                    a[r, q] = s * arp + c * arq
                for r in range(n):
                    apr = a[p, r]
                    aqr = a[q, r]
                    a[p, r] = c * apr - s * aqr
                    a[q, r] = s * apr + c * aqr
                for r in range(n):
                    vrp = v[r, p]
                    vrq = v[r, q]
                    v[r, p] = c * vrp - s * vrq
                    v[r, q] = s * vrp + c * vrq
    return a, v, False


def jacobi_eig(a: np.ndarray, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigensolver; stops when off(A) <= 1e-14 ||A||_F.

    Returns unsorted ``(eigenvalues, eigenvectors)``.
    """
    work = np.array(a, dtype=float, copy=True)
    tol = 1e-14 * float(np.linalg.norm(work))
    diag, vecs, ok = _jacobi_core(work, tol, max_sweeps)
    if not ok:
        raise ArithmeticError("Jacobi iteration did not converge")
    return np.diag(diag).copy(), vecs


def sym_eig(matrix, method: str = "lapack") -> SymEigResult:
    """Eigendecomposition of a real symmetric matrix.

    Parameters
    ----------
    matrix : array_like
        Square, finite, symmetric to 1e-10 relative (infinity norm).
    method : {"lapack", "jacobi"}
        ``"lapack"`` uses ``numpy.linalg.eigh``; ``"jacobi"`` the cyclic Jacobi
        sweep in :func:`jacobi_eig` (small matrices).

    Returns
    -------
    SymEigResult
        Eigenvalues descending; eigenvector columns in the same order with the
        first non-negligible component of each column positive.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise ContractError(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError("matrix has non-finite entries")
    scale = float(np.max(np.abs(a).sum(axis=1)))
    asym = float(np.max(np.abs(a - a.T).sum(axis=1)))
    if asym > 1e-10 * max(scale, np.finfo(float).tiny):
        raise ContractError(f"matrix not symmetric (asymmetry {asym:.3e}, norm {scale:.3e})")
    a = 0.5 * (a + a.T)
    if method == "lapack":
        w, v = np.linalg.eigh(a)
    elif method == "jacobi":
        w, v = jacobi_eig(a)
    else:
        raise ContractError(f"unknown eigensolver {method!r}")
    order = np.argsort(-w, kind="stable")
    return SymEigResult(w[order], _fix_signs(v[:, order]))


# ---------------------------------------------------------------------------
# counter-based random streams
# ---------------------------------------------------------------------------

_U64 = 1 << 64
_TWO_M53 = 2.0**-53


@dataclass
class RngStream:
    """Deterministic normal deviates keyed by ``(seed, stream_id)``.

    Draw number ``i`` is a pure function of ``(seed, stream_id, i)``: it uses
    Philox block ``counter + i`` and Box--Muller on two of its words. The
    object only tracks how many draws have been consumed, so splitting one
    request into several gives the same numbers.
    """

    seed: int
    stream_id: int = 0
    counter: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            val = int(getattr(self, name))
            if not 0 <= val < _U64:
                raise DomainError(f"{name} must be an unsigned 64-bit integer, got {val}")
            setattr(self, name, val)

    def _uniform_pairs(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        bitgen = np.random.Philox(key=(self.stream_id << 64) | self.seed, counter=self.counter)
        raw = bitgen.random_raw(4 * n).reshape(n, 4)
        self.counter += n
        u1 = ((raw[:, 0] >> np.uint64(11)).astype(float) + 1.0) * _TWO_M53  # (0, 1]
        u2 = (raw[:, 1] >> np.uint64(11)).astype(float) * _TWO_M53  # [0, 1)
        return u1, u2

    def standard_normal(self, size: int | None = None):
        n = 1 if size is None else int(size)
        u1, u2 = self._uniform_pairs(n)
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return float(z[0]) if size is None else z

    def normal(self, mu=0.0, sigma=1.0, size: int | None = None):
        """Normal deviates; ``sigma == 0`` returns ``mu`` exactly (a draw is still consumed)."""
        sig = np.asarray(sigma, dtype=float)
        if np.any(sig < 0) or np.any(~np.isfinite(sig)):
            raise DomainError("sigma must be non-negative and finite")
        z = self.standard_normal(size)
        return np.where(sig == 0.0, mu, mu + sig * z) if size is not None else (
            float(mu) if sigma == 0 else float(mu + sigma * z)
        )


def rng_normal(stream: RngStream, mu: float, sigma: float) -> float:
    """Single normal deviate from ``stream`` (advances it by one draw)."""
    return stream.normal(mu, sigma)
