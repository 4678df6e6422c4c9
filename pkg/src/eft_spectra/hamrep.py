r"""One-norms and energy shifts of electronic-structure Hamiltonian representations.

Integrals use chemist notation, :math:`g_{pqrs} = (pq|rs)`, and the spin-free
Hamiltonian

.. math::

    \hat H = E_{\rm nuc} + \sum_{pq} t_{pq} E_{pq} + \tfrac12\sum_{pqrs} g_{pqrs} E_{pq}E_{rs},
    \qquad t_{pq} = h_{pq} - \tfrac12\sum_r g_{prrq}.

Each calculator returns a :class:`NormShift`; ``offset`` is the signed
identity coefficient and ``beta`` its magnitude. Block encodings rescale by
``lambda`` after subtracting ``offset``.
"""
from __future__ import annotations

import io
import math
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ContractError, ParseError, ValidationError
from .spectrum import write_atomic

__all__ = [
    "IntegralTensors",
    "NormShift",
    "DfLeaf",
    "DfFactors",
    "ThcFactors",
    "BlissParams",
    "effective_one_body",
    "one_body_eigs",
    "pauli_norm_shift",
    "double_factorize",
    "df_norm_shift",
    "thc_norm_shift",
    "thc_from_df",
    "bliss_transform",
    "load_integrals",
    "write_integrals",
    "load_thc",
    "write_thc",
    "write_df",
]

_SYM_TOL = 1e-10


def _sym_violation(g: np.ndarray) -> float:
    return max(
        float(np.max(np.abs(g - g.transpose(1, 0, 2, 3)))),
        float(np.max(np.abs(g - g.transpose(0, 1, 3, 2)))),
        float(np.max(np.abs(g - g.transpose(2, 3, 0, 1)))),
    )


def _symmetrize_g(g: np.ndarray) -> np.ndarray:
    g = 0.5 * (g + g.transpose(1, 0, 2, 3))
    g = 0.5 * (g + g.transpose(0, 1, 3, 2))
    return 0.5 * (g + g.transpose(2, 3, 0, 1))


@dataclass(frozen=True)
class IntegralTensors:
    """One- and two-electron integrals (Hartree) for ``n`` spatial orbitals."""

    h: np.ndarray
    g: np.ndarray
    e_nuc: float = 0.0
    nelec: int | None = None

    def __post_init__(self):
        h = np.array(self.h, dtype=float)
        g = np.array(self.g, dtype=float)
        n = h.shape[0]
        if h.shape != (n, n) or g.shape != (n, n, n, n):
            raise ValidationError(f"inconsistent shapes h{h.shape} g{g.shape}")
        if np.max(np.abs(h - h.T), initial=0.0) > _SYM_TOL:
            raise ValidationError("h is not symmetric")
        if n and _sym_violation(g) > _SYM_TOL:
            raise ValidationError("g lacks 8-fold symmetry")
        h.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "e_nuc", float(self.e_nuc))

    @property
    def n(self) -> int:
        return self.h.shape[0]

    def permuted(self, perm) -> "IntegralTensors":
        """Same Hamiltonian with orbitals relabelled by ``perm``."""
        p = np.asarray(perm)
        return IntegralTensors(self.h[np.ix_(p, p)], self.g[np.ix_(p, p, p, p)], self.e_nuc, self.nelec)


class NormShift(NamedTuple):
    lambda_: float
    beta: float
    offset: float  # signed identity coefficient, beta == |offset|


def effective_one_body(t: IntegralTensors) -> np.ndarray:
    """``t_pq = h_pq - 1/2 sum_r g_prrq``."""
    tm = t.h - 0.5 * np.einsum("prrq->pq", t.g)
    return 0.5 * (tm + tm.T)


def _f_matrix(t: IntegralTensors) -> np.ndarray:
    f = effective_one_body(t) + np.einsum("pqrr->pq", t.g)
    return 0.5 * (f + f.T)


def one_body_eigs(t: IntegralTensors) -> np.ndarray:
    """Eigenvalues ``f^o`` of ``f_pq = t_pq + sum_r g_pqrr``."""
    return np.linalg.eigvalsh(_f_matrix(t))


def pauli_norm_shift(t: IntegralTensors) -> NormShift:
    """Jordan--Wigner Pauli one-norm (identity excluded) and shift."""
    h, g = t.h, t.g
    one = h + np.einsum("pqrr->pq", g) - 0.5 * np.einsum("prrq->pq", g)
    lam1 = np.abs(one).sum()
    # same-spin two-body strings: 1/2 sum_{p>r, s>q} |g_pqrs - g_psrq|
    diff = np.abs(g - g.transpose(0, 3, 2, 1))
    n = t.n
    pr = np.tril(np.ones((n, n), dtype=bool), -1)  # p > r
    mask = pr[:, None, :, None] & pr.T[None, :, None, :]  # index order (p, q, r, s), s > q
    lam2 = 0.5 * diff[mask].sum()
    lam3 = 0.25 * np.abs(g).sum()
    offset = (t.e_nuc + np.trace(h) + 0.5 * np.einsum("pprr->", g)
              - 0.25 * np.einsum("prrp->", g))
    return NormShift(float(lam1 + lam2 + lam3), abs(float(offset)), float(offset))


# ---------------------------------------------------------------------------
# double factorisation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DfLeaf:
    """``g^t_{pqrs} = sign * sum_kl U_pk U_qk W_k W_l U_rl U_sl``."""

    U: np.ndarray
    W: np.ndarray
    sign: int
    eigenvalue: float


@dataclass(frozen=True)
class DfFactors:
    leaves: list[DfLeaf]
    residual: float  # Frobenius norm of g minus the reconstruction

    @property
    def count(self) -> int:
        return len(self.leaves)

    def reconstruct(self) -> np.ndarray:
        n = self.leaves[0].U.shape[0] if self.leaves else 0
        out = np.zeros((n, n, n, n))
        for lf in self.leaves:
            L = (lf.U * lf.W) @ lf.U.T
            out += lf.sign * np.einsum("pq,rs->pqrs", L, L)
        return out


def double_factorize(t: IntegralTensors, n_df: int) -> DfFactors:
    """Truncated eigendecomposition of the ``n^2 x n^2`` supermatrix ``g_(pq),(rs)``.

    The ``n_df`` eigenvectors with the largest ``|e_t|`` are reshaped to
    symmetric matrices, diagonalised into ``U^t diag(w^t) U^t^T`` and scaled to
    ``W^t = sqrt(|e_t|) w^t``; ``sign`` records the sign of ``e_t``.
    """
    if n_df < 1:
        raise ContractError("n_df must be >= 1")
    n = t.n
    sup = t.g.reshape(n * n, n * n)
    e, v = np.linalg.eigh(0.5 * (sup + sup.T))
    order = np.argsort(-np.abs(e), kind="stable")[: min(n_df, n * n)]
    leaves = []
    approx = np.zeros_like(sup)
    for idx in order:
        vec = v[:, idx]
        approx += e[idx] * np.outer(vec, vec)
        L = vec.reshape(n, n)
        w, U = np.linalg.eigh(0.5 * (L + L.T))
        leaves.append(DfLeaf(U, math.sqrt(abs(e[idx])) * w, 1 if e[idx] >= 0 else -1, float(e[idx])))
    residual = float(np.linalg.norm(sup - approx))
    return DfFactors(leaves, residual)


def df_norm_shift(t: IntegralTensors, f: DfFactors) -> NormShift:
    """``lambda = sum|f^o| + 1/4 sum_t (sum_k |W^t_k|)^2``;
    ``offset = e_nuc + sum f^o - 1/2 sum_t sign_t (sum_k W^t_k)^2``."""
    fo = one_body_eigs(t)
    two = sum(float(np.abs(lf.W).sum()) ** 2 for lf in f.leaves)
    signed = sum(lf.sign * float(lf.W.sum()) ** 2 for lf in f.leaves)
    offset = t.e_nuc + float(fo.sum()) - 0.5 * signed
    return NormShift(float(np.abs(fo).sum() + 0.25 * two), abs(offset), offset)


# ---------------------------------------------------------------------------
# tensor hypercontraction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThcFactors:
    """``g_pqrs ~ sum_{mu nu} chi_p^mu chi_q^mu zeta_{mu nu} chi_r^nu chi_s^nu``."""

    chi: np.ndarray  # n x M, unit-norm columns
    zeta: np.ndarray  # M x M symmetric

    def __post_init__(self):
        chi = np.array(self.chi, dtype=float)
        zeta = np.array(self.zeta, dtype=float)
        if chi.ndim != 2 or zeta.shape != (chi.shape[1], chi.shape[1]):
            raise ValidationError("chi must be n x M and zeta M x M")
        if np.max(np.abs((chi**2).sum(axis=0) - 1.0), initial=0.0) > 1e-10:
            raise ValidationError("chi columns must have unit norm")
        if np.max(np.abs(zeta - zeta.T), initial=0.0) > 1e-10:
            raise ValidationError("zeta must be symmetric")
        object.__setattr__(self, "chi", chi)
        object.__setattr__(self, "zeta", zeta)

    @property
    def rank(self) -> int:
        return self.chi.shape[1]

    def reconstruct(self) -> np.ndarray:
        return np.einsum("pm,qm,mn,rn,sn->pqrs", self.chi, self.chi, self.zeta, self.chi, self.chi)


def thc_norm_shift(f_o, factors: ThcFactors, e_nuc: float = 0.0) -> NormShift:
    """``lambda = sum|f^o| + 1/2 sum|zeta|``; ``offset = e_nuc + sum f^o - 1/2 sum zeta``."""
    fo = np.asarray(f_o, dtype=float)
    offset = float(e_nuc) + float(fo.sum()) - 0.5 * float(factors.zeta.sum())
    lam = float(np.abs(fo).sum()) + 0.5 * float(np.abs(factors.zeta).sum())
    return NormShift(lam, abs(offset), offset)


def thc_from_df(f: DfFactors) -> ThcFactors:
    """Exact THC form of a DF decomposition (rank ``n * N_DF``, block-diagonal ``zeta``).

    Leaf ``t`` contributes the columns of ``U^t`` as ``chi`` and the block
    ``sign_t W^t W^t^T`` to ``zeta``. A stand-in when fitted factors are absent.
    """
    if not f.leaves:
        raise ContractError("empty DF factorisation")
    n = f.leaves[0].U.shape[0]
    chi = np.hstack([lf.U for lf in f.leaves])
    zeta = np.zeros((chi.shape[1], chi.shape[1]))
    for i, lf in enumerate(f.leaves):
        zeta[i * n : (i + 1) * n, i * n : (i + 1) * n] = lf.sign * np.outer(lf.W, lf.W)
    return ThcFactors(chi, zeta)


# ---------------------------------------------------------------------------
# BLISS
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlissParams:
    alpha1: float
    alpha2: float
    beta_mat: np.ndarray
    eta_particles: int

    def __post_init__(self):
        b = np.array(self.beta_mat, dtype=float)
        if b.ndim != 2 or b.shape[0] != b.shape[1]:
            raise ValidationError("beta_mat must be square")
        if np.max(np.abs(b - b.T), initial=0.0) > _SYM_TOL:
            raise ValidationError("beta_mat must be symmetric")
        object.__setattr__(self, "beta_mat", b)

    @classmethod
    def zero(cls, n: int, eta: int) -> "BlissParams":
        return cls(0.0, 0.0, np.zeros((n, n)), eta)


def bliss_transform(t: IntegralTensors, p: BlissParams) -> IntegralTensors:
    r"""Subtract ``alpha1 N + alpha2/2 N^2 + 1/2 B(N - eta)`` from the Hamiltonian.

    Tensor form:
    ``t' = t - alpha1 delta + 1/2 eta beta`` and
    ``g' = g - alpha2 delta delta - 1/2 (beta delta + delta beta)``.
    The constant ``alpha1 eta + alpha2 eta^2 / 2`` is added to ``e_nuc`` so the
    ``eta``-electron sector spectrum is unchanged, not merely shifted.
    """
    n = t.n
    if p.beta_mat.shape != (n, n):
        raise ContractError("beta_mat dimension does not match the orbital count")
    eye = np.eye(n)
    eta = p.eta_particles
    b = p.beta_mat
    t_new = effective_one_body(t) - p.alpha1 * eye + 0.5 * eta * b
    g_new = (t.g - p.alpha2 * np.einsum("pq,rs->pqrs", eye, eye)
             - 0.5 * (np.einsum("pq,rs->pqrs", b, eye) + np.einsum("pq,rs->pqrs", eye, b)))
    h_new = t_new + 0.5 * np.einsum("prrq->pq", g_new)
    e_new = t.e_nuc + p.alpha1 * eta + 0.5 * p.alpha2 * eta * eta
    return IntegralTensors(0.5 * (h_new + h_new.T), g_new, e_new, t.nelec)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

_NORB = re.compile(r"NORB\s*=\s*(\d+)", re.I)
_NELEC = re.compile(r"NELEC\s*=\s*(\d+)", re.I)


def load_integrals(path) -> IntegralTensors:
    """Read an FCIDUMP-style file (1-based indices, chemist notation).

    Missing symmetry partners are filled in; explicitly inconsistent partners
    are averaged with a warning when they differ by more than 1e-8.
    """
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as err:
        raise ParseError(f"cannot read {path}: {err}") from err
    header, body_start = [], None
    for i, line in enumerate(lines):
        header.append(line)
        stripped = line.strip()
        if stripped in ("/", "&END", "$END") or stripped.endswith("/") or stripped.upper().endswith("&END"):
            body_start = i + 1
            break
    if body_start is None:
        raise ParseError("header not terminated by '/' or '&END'")
    htext = " ".join(header)
    if "&FCI" not in htext.upper():
        raise ParseError("missing &FCI header", 1)
    m = _NORB.search(htext)
    if not m:
        raise ParseError("header lacks NORB", 1)
    n = int(m.group(1))
    me = _NELEC.search(htext)
    nelec = int(me.group(1)) if me else None
    h = np.zeros((n, n))
    g = np.zeros((n, n, n, n))
    seen_h = np.zeros((n, n), dtype=bool)
    seen_g = np.zeros((n, n, n, n), dtype=bool)
    e_nuc = 0.0
    worst = 0.0
    for lineno, line in enumerate(lines[body_start:], start=body_start + 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 5:
            raise ParseError(f"expected 'value p q r s', got {line!r}", lineno)
        try:
            val = float(parts[0].replace("D", "E").replace("d", "e"))
            p, q, r, s = (int(x) for x in parts[1:])
        except ValueError:
            raise ParseError(f"non-numeric entry {line!r}", lineno) from None
        if min(p, q, r, s) < 0 or max(p, q, r, s) > n:
            raise ParseError(f"index out of range 1..{n} in {line!r}", lineno)
        if p == q == r == s == 0:
            e_nuc = val
        elif r == 0 and s == 0:
            if p == 0 or q == 0:
                raise ParseError(f"bad one-electron indices in {line!r}", lineno)
            for a, b in ((p - 1, q - 1), (q - 1, p - 1)):
                if seen_h[a, b]:
                    worst = max(worst, abs(h[a, b] - val))
                    h[a, b] = 0.5 * (h[a, b] + val)
                else:
                    h[a, b] = val
                    seen_h[a, b] = True
        else:
            if 0 in (p, q, r, s):
                raise ParseError(f"bad two-electron indices in {line!r}", lineno)
            p, q, r, s = p - 1, q - 1, r - 1, s - 1
            for idx in {(p, q, r, s), (q, p, r, s), (p, q, s, r), (q, p, s, r),
                        (r, s, p, q), (s, r, p, q), (r, s, q, p), (s, r, q, p)}:
                if seen_g[idx]:
                    worst = max(worst, abs(g[idx] - val))
                    g[idx] = 0.5 * (g[idx] + val)
                else:
                    g[idx] = val
                    seen_g[idx] = True
    if worst > 1e-8:
        warnings.warn(f"integral symmetry violated by {worst:.2e}; symmetrised", stacklevel=2)
    h = 0.5 * (h + h.T)
    g = _symmetrize_g(g)
    return IntegralTensors(h, g, e_nuc, nelec)


def write_integrals(t: IntegralTensors, path, tol: float = 0.0) -> None:
    """Write unique integrals (``p>=q``, ``r>=s``, ``pq>=rs``) in FCIDUMP style."""
    n = t.n
    out = io.StringIO()
    nelec = t.nelec if t.nelec is not None else 0
    out.write(f"&FCI NORB={n},NELEC={nelec},MS2=0,\n ORBSYM={'1,' * n}\n ISYM=1,\n&END\n")
    for p in range(n):
        for q in range(p + 1):
            for r in range(n):
                for s in range(r + 1):
                    if p * (p + 1) // 2 + q < r * (r + 1) // 2 + s:
                        continue
                    v = t.g[p, q, r, s]
                    if abs(v) > tol:
                        out.write(f"{float(v)!r} {p + 1} {q + 1} {r + 1} {s + 1}\n")
    for p in range(n):
        for q in range(p + 1):
            v = t.h[p, q]
            if abs(v) > tol:
                out.write(f"{float(v)!r} {p + 1} {q + 1} 0 0\n")
    out.write(f"{float(t.e_nuc)!r} 0 0 0 0\n")
    write_atomic(path, out.getvalue())


def _read_block(lines, start, lineno0):
    rows = []
    i = start
    while i < len(lines) and not lines[i].lstrip().startswith("#"):
        if lines[i].strip():
            try:
                rows.append([float(x) for x in lines[i].split(",")])
            except ValueError:
                raise ParseError(f"non-numeric row {lines[i]!r}", lineno0 + i) from None
        i += 1
    return np.array(rows), i


def load_thc(path) -> ThcFactors:
    """Read ``# chi`` and ``# zeta`` CSV blocks."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as err:
        raise ParseError(f"cannot read {path}: {err}") from err
    blocks = {}
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        if line.startswith("#"):
            name = line.lstrip("#").split()[0].lower() if line.lstrip("#").split() else ""
            if name in ("chi", "zeta"):
                blocks[name], i = _read_block(lines, i + 1, 1)
                continue
        elif line:
            raise ParseError(f"data outside a block: {line!r}", i + 1)
        i += 1
    if set(blocks) != {"chi", "zeta"}:
        raise ParseError("THC file needs '# chi' and '# zeta' blocks")
    return ThcFactors(blocks["chi"], blocks["zeta"])


def write_thc(f: ThcFactors, path) -> None:
    n, m = f.chi.shape
    out = [f"# chi n={n} M={m}"]
    out += [",".join(repr(x) for x in row) for row in f.chi.tolist()]
    out.append(f"# zeta M={m}")
    out += [",".join(repr(x) for x in row) for row in f.zeta.tolist()]
    write_atomic(path, "\n".join(out) + "\n")


def write_df(f: DfFactors, path) -> None:
    """One row per (leaf, k): ``leaf,sign,k,W,U_0..U_{n-1}`` (column k of ``U``)."""
    n = f.leaves[0].U.shape[0] if f.leaves else 0
    out = ["leaf,sign,k,W," + ",".join(f"U_{i}" for i in range(n))]
    for t, lf in enumerate(f.leaves):
        for k in range(n):
            out.append(f"{t},{lf.sign},{k},{float(lf.W[k])!r}," + ",".join(repr(x) for x in lf.U[:, k].tolist()))
    write_atomic(path, "\n".join(out) + "\n")
