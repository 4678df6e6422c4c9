r"""Chebyshev-moment quantum Krylov subspace diagonalisation.

The Krylov basis is :math:`\{T_{k\Delta k}(\hat H)|\psi_0\rangle\}_{k<K'}`. Its
overlap and Hamiltonian matrices follow from moments alone through the
product rule :math:`T_aT_b = \tfrac12(T_{a+b} + T_{|a-b|})`:

.. math::

    S_{kj} = \tfrac12\big(\mu_{(k+j)\Delta k} + \mu_{|k-j|\Delta k}\big),\qquad
    H_{kj} = \tfrac14\big(\mu_{(k+j)\Delta k+1} + \mu_{|(k+j)\Delta k-1|}
             + \mu_{|(k-j)\Delta k+1|} + \mu_{|(k-j)\Delta k-1|}\big).

The generalised problem :math:`H\alpha = \lambda S\alpha` is solved after
projecting onto the dominant eigenvectors of :math:`S` (threshold or top-m).
Shot noise is emulated by Gaussian perturbation of each sampled moment, with
shots distributed proportionally to :math:`|\partial E_0/\partial\mu_k|`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ContractError, EmptySubspaceError, SearchError
from .numerics import RngStream, sym_eig
from .spectrum import MomentEntry, MomentTable, Spectrum, moment_table

__all__ = [
    "Policy",
    "threshold",
    "top_m",
    "KrylovConfig",
    "KrylovSolution",
    "Gradient",
    "TrialStats",
    "BudgetResult",
    "OverlapAnalysis",
    "required_degrees",
    "build_matrices",
    "brute_force_matrices",
    "solve_regularized",
    "energy_gradient",
    "allocate_shots",
    "inject_noise",
    "run_trials",
    "find_shot_budget",
    "overlap_analysis",
    "optimal_dk",
    "window_overlap",
]

EXACT_DEGREES = (0, 1)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Policy:
    """Overlap regularisation: keep eigenvalues above ``value`` or the top ``value``."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind == "threshold":
            if not self.value >= 0:
                raise ContractError("threshold must be non-negative")
        elif self.kind == "top_m":
            if int(self.value) != self.value or self.value < 1:
                raise ContractError("top_m needs a positive integer")
            object.__setattr__(self, "value", int(self.value))
        else:
            raise ContractError(f"unknown policy kind {self.kind!r}")

    def __str__(self) -> str:
        return f"threshold={self.value:g}" if self.kind == "threshold" else f"top{self.value}"

    @classmethod
    def parse(cls, text: str) -> "Policy":
        """Parse ``"threshold=1e-8"`` / ``"threshold"`` / ``"top3"`` / ``"top_m=3"``."""
        t = str(text).strip().lower()
        if t == "threshold":
            return threshold()
        if t.startswith("threshold="):
            return threshold(float(t.split("=", 1)[1]))
        if t.startswith("top_m="):
            return top_m(int(t.split("=", 1)[1]))
        if t.startswith("top") and t[3:].isdigit():
            return top_m(int(t[3:]))
        raise ContractError(f"cannot parse policy {text!r}")


def threshold(tau: float = 1e-8) -> Policy:
    return Policy("threshold", float(tau))


def top_m(m: int) -> Policy:
    return Policy("top_m", int(m))


@dataclass(frozen=True)
class KrylovConfig:
    """Krylov dimension ``k_dim`` (matrix size K'), degree step ``dk`` and policy."""

    k_dim: int
    dk: int = 1
    policy: Policy = field(default_factory=threshold)

    def __post_init__(self):
        if int(self.k_dim) != self.k_dim or self.k_dim < 1:
            raise ContractError("k_dim must be a positive integer")
        if int(self.dk) != self.dk or self.dk < 1:
            raise ContractError("dk must be a positive integer")

    @property
    def max_degree(self) -> int:
        return (2 * self.k_dim - 2) * self.dk + 1


def required_degrees(cfg: KrylovConfig) -> list[int]:
    """Every moment degree that enters the (K', dk) matrices."""
    m = np.arange(2 * cfg.k_dim - 1) * cfg.dk
    return sorted(set(m.tolist()) | set((m + 1).tolist()) | set(np.abs(m - 1).tolist()))


@dataclass(frozen=True)
class _IndexMaps:
    s_a: np.ndarray
    s_b: np.ndarray
    h: tuple[np.ndarray, ...]


def _index_maps(cfg: KrylovConfig) -> _IndexMaps:
    k = np.arange(cfg.k_dim)
    plus = (k[:, None] + k[None, :]) * cfg.dk
    minus = np.abs(k[:, None] - k[None, :]) * cfg.dk
    return _IndexMaps(plus, minus, (plus + 1, np.abs(plus - 1), minus + 1, np.abs(minus - 1)))


def _matrices_from_dense(mu: np.ndarray, maps: _IndexMaps) -> tuple[np.ndarray, np.ndarray]:
    s = 0.5 * (mu[maps.s_a] + mu[maps.s_b])
    h = 0.25 * (mu[maps.h[0]] + mu[maps.h[1]] + mu[maps.h[2]] + mu[maps.h[3]])
    return h, s


def _dense(moments: MomentTable, degrees: list[int]) -> np.ndarray:
    mu = np.full(max(degrees) + 1, np.nan)
    for d in degrees:
        if d not in moments:
            raise ContractError(f"moment table lacks degree {d}")
        mu[d] = moments.value(d)
    return mu


def build_matrices(moments: MomentTable, cfg: KrylovConfig) -> tuple[np.ndarray, np.ndarray]:
    """Assemble ``(H, S)`` from moments; raises if a needed degree is missing."""
    mu = _dense(moments, required_degrees(cfg))
    return _matrices_from_dense(mu, _index_maps(cfg))


def brute_force_matrices(s: Spectrum, cfg: KrylovConfig) -> tuple[np.ndarray, np.ndarray]:
    """Direct spectral sums ``sum_r p_r [lambda_r] T_a(lambda_r) T_b(lambda_r)``."""
    theta = np.arccos(s.values)
    v = np.cos(np.outer(np.arange(cfg.k_dim) * cfg.dk, theta))  # K' x R
    sm = (v * s.weights) @ v.T
    hm = (v * (s.weights * s.values)) @ v.T
    return hm, sm


# ---------------------------------------------------------------------------
# regularised solve
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KrylovSolution:
    h_mat: np.ndarray
    s_mat: np.ndarray
    kept_eigs: np.ndarray
    ritz_values: np.ndarray
    e0_norm: float
    e0_phys: float
    overlap_eigs: np.ndarray  # full overlap spectrum, descending


def _meta(meta) -> tuple[float, float]:
    if isinstance(meta, Spectrum):
        if meta.flipped:
            raise ContractError("QKSD expects an unflipped spectrum")
        return meta.shift, meta.scale
    shift, scale = meta
    return float(shift), float(scale)


def _kept_count(eigs: np.ndarray, policy: Policy) -> int:
    if policy.kind == "threshold":
        return int(np.count_nonzero(eigs > policy.value))
    return int(policy.value)


def _solve(h: np.ndarray, s: np.ndarray, policy: Policy) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    dim = s.shape[0]
    if policy.kind == "top_m" and policy.value > dim:
        raise ContractError(f"top_m={policy.value} exceeds matrix dimension {dim}")
    dec = sym_eig(s)
    eigs, vecs = dec.eigenvalues, dec.eigenvectors
    m = _kept_count(eigs, policy)
    if m == 0:
        raise EmptySubspaceError(f"no overlap eigenvalue above {policy.value:g}")
    kept = eigs[:m]
    if kept[-1] <= dim * np.finfo(float).eps * max(eigs[0], 0.0):
        raise EmptySubspaceError("retained overlap eigenvalue is not numerically positive")
    proj = vecs[:, :m] / np.sqrt(kept)
    heff = proj.T @ h @ proj
    ritz = np.linalg.eigvalsh(0.5 * (heff + heff.T))
    return ritz, kept, eigs


def solve_regularized(h_mat, s_mat, policy: Policy, spectrum_meta) -> KrylovSolution:
    """Whitened generalised eigensolve with overlap truncation.

    Parameters
    ----------
    h_mat, s_mat : ndarray
        Symmetric K' x K' Krylov matrices.
    policy : Policy
        ``threshold(tau)`` keeps overlap eigenvalues ``> tau``; ``top_m(m)``
        keeps the ``m`` largest (ties resolved by the descending stable order).
    spectrum_meta : Spectrum or (shift, scale)
        Affine map to physical energies.
    """
    h = np.asarray(h_mat, dtype=float)
    s = np.asarray(s_mat, dtype=float)
    if h.shape != s.shape or h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ContractError("h_mat and s_mat must be square and of equal shape")
    shift, scale = _meta(spectrum_meta)
    ritz, kept, eigs = _solve(h, s, policy)
    e0 = float(ritz[0])
    return KrylovSolution(h, s, kept, ritz, e0, shift + scale * e0, eigs)


# ---------------------------------------------------------------------------
# sensitivities and shot allocation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Gradient:
    """``dE0/d<T_k>`` in Hartree per unit moment, with per-degree stability flags."""

    degrees: np.ndarray
    values: np.ndarray
    unstable: np.ndarray
    kept: int

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.degrees.tolist(), self.values.tolist()))


def _e0_fixed(mu, maps, m):
    h, s = _matrices_from_dense(mu, maps)
    ritz, _, eigs = _solve(h, s, top_m(m))
    return float(ritz[0]), eigs


def energy_gradient(moments: MomentTable, cfg: KrylovConfig, policy: Policy | None = None,
                    meta=(0.0, 1.0), step: float = 1e-6) -> Gradient:
    """Central finite-difference gradient of the physical ground energy.

    The kept-subspace count found at the base point is frozen for the
    perturbed solves; a degree is flagged unstable when the policy would
    have kept a different count at ``mu_k +- step`` (or the frozen solve
    fails there, in which case its value is NaN).
    """
    policy = cfg.policy if policy is None else policy
    _, scale = _meta(meta)
    degrees = required_degrees(cfg)
    maps = _index_maps(cfg)
    mu = _dense(moments, degrees)
    h, s = _matrices_from_dense(mu, maps)
    _, kept, _ = _solve(h, s, policy)
    m = kept.size
    g = np.empty(len(degrees))
    flag = np.zeros(len(degrees), dtype=bool)
    for i, d in enumerate(degrees):
        vals = []
        for sgn in (1.0, -1.0):
            mp = mu.copy()
            mp[d] += sgn * step
            try:
                e, eigs = _e0_fixed(mp, maps, m)
            except (EmptySubspaceError, ContractError):
                e, eigs = np.nan, None
                flag[i] = True
            if eigs is not None and _kept_count(eigs, policy) != m:
                flag[i] = True
            vals.append(e)
        g[i] = scale * (vals[0] - vals[1]) / (2.0 * step)
    return Gradient(np.array(degrees), g, flag, m)


def allocate_shots(g, m_total: int, exact_degrees=EXACT_DEGREES) -> dict[int, int]:
    """Split ``m_total`` shots proportionally to ``|g_k|`` over sampled degrees.

    ``M_k = max(1, floor(|g_k| m_total / sum_j |g_j|))`` with the sum over
    sampled degrees; exact degrees (0 and 1) receive 0. An all-zero gradient
    falls back to a uniform split.
    """
    gd = g.as_dict() if isinstance(g, Gradient) else {int(k): float(v) for k, v in dict(g).items()}
    exact = set(exact_degrees)
    sampled = sorted(k for k in gd if k not in exact)
    m_total = int(m_total)
    if m_total < len(sampled):
        raise ContractError(f"m_total={m_total} is below the {len(sampled)} sampled degrees")
    mags = np.array([abs(gd[k]) for k in sampled])
    if np.any(~np.isfinite(mags)):
        raise ContractError("gradient has non-finite entries")
    total = mags.sum()
    if total == 0:
        mags = np.ones_like(mags)
        total = mags.sum()
    alloc = {k: 0 for k in gd if k in exact}
    for k, a in zip(sampled, mags):
        alloc[k] = max(1, int(math.floor(a * m_total / total)))
    return dict(sorted(alloc.items()))


def _noise_sigma(mu: np.ndarray, shots: np.ndarray) -> np.ndarray:
    return np.sqrt(np.clip(1.0 - mu * mu, 0.0, None) / shots)


def inject_noise(moments: MomentTable, allocation: Mapping[int, int], stream: RngStream) -> MomentTable:
    """Add ``N(0, (1 - mu_k^2)/M_k)`` to every non-exact moment.

    Draws are taken from ``stream`` in ascending degree order, one per
    sampled degree.
    """
    sampled = moments.sampled_degrees()
    shots = []
    for k in sampled:
        mk = int(allocation.get(k, 0))
        if mk < 1:
            raise ContractError(f"degree {k} needs at least one shot")
        shots.append(mk)
    ent = dict(moments.entries)
    if sampled:
        mu = np.array([moments.value(k) for k in sampled])
        z = stream.standard_normal(len(sampled))
        noisy = mu + _noise_sigma(mu, np.array(shots, dtype=float)) * z
        for k, v, mk in zip(sampled, noisy.tolist(), shots):
            ent[k] = MomentEntry(v, mk, False)
    return MomentTable(ent)


# ---------------------------------------------------------------------------
# Monte-Carlo trials and budget search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrialStats:
    m_total: int
    energies: np.ndarray  # Hartree, NaN for failed trials
    reference: float  # noiseless regularised energy (same policy)
    true_energy: float
    failed_trials: int
    mean_abs_err: float  # vs reference, over successful trials
    rmse: float  # vs true ground energy, over successful trials
    allocation: dict[int, int]
    overlap_eigs: np.ndarray

    @property
    def bias(self) -> float:
        return self.reference - self.true_energy


class _TrialSetup:
    """Noiseless reference, gradient and index maps shared by many trial batches."""

    def __init__(self, s: Spectrum, cfg: KrylovConfig, policy: Policy, gradient: Gradient | None = None):
        self.s, self.cfg, self.policy = s, cfg, policy
        self.degrees = required_degrees(cfg)
        self.table = moment_table(s, self.degrees)
        self.maps = _index_maps(cfg)
        self.mu = _dense(self.table, self.degrees)
        h, sm = _matrices_from_dense(self.mu, self.maps)
        self.solution = solve_regularized(h, sm, policy, s)
        self.gradient = gradient or energy_gradient(self.table, cfg, policy, s)
        self.sampled = np.array(self.table.sampled_degrees(), dtype=np.int64)

    def run(self, m_total: int, n_trials: int, seed: int) -> TrialStats:
        alloc = allocate_shots(self.gradient, m_total)
        shots = np.array([alloc[k] for k in self.sampled.tolist()], dtype=float)
        sigma = _noise_sigma(self.mu[self.sampled], shots)
        energies = np.full(n_trials, np.nan)
        for t in range(n_trials):
            z = RngStream(seed, t).standard_normal(self.sampled.size)
            mu = self.mu.copy()
            mu[self.sampled] += sigma * z
            h, sm = _matrices_from_dense(mu, self.maps)
            try:
                ritz, _, _ = _solve(h, sm, self.policy)
            except EmptySubspaceError:
                continue
            energies[t] = self.s.shift + self.s.scale * ritz[0]
        ok = np.isfinite(energies)
        ref = self.solution.e0_phys
        true = self.s.ground_energy
        mae = float(np.mean(np.abs(energies[ok] - ref))) if ok.any() else math.inf
        rmse = float(np.sqrt(np.mean((energies[ok] - true) ** 2))) if ok.any() else math.inf
        return TrialStats(int(m_total), energies, ref, true, int((~ok).sum()), mae, rmse, alloc,
                          self.solution.overlap_eigs)


def run_trials(s: Spectrum, cfg: KrylovConfig, policy: Policy | None = None, m_total: int = 10**6,
               n_trials: int = 100, seed: int = 0) -> TrialStats:
    """Monte-Carlo shot-noise statistics for one (spectrum, config, budget).

    Trial ``t`` draws its noise from ``RngStream(seed, t)``; failed solves
    count in ``failed_trials`` and are excluded from the error averages.
    """
    policy = cfg.policy if policy is None else policy
    return _TrialSetup(s, cfg, policy).run(m_total, n_trials, seed)


@dataclass(frozen=True)
class BudgetResult:
    m_total: int
    stats: TrialStats | None
    history: tuple[tuple[int, float, int], ...]  # (m_total, mean_abs_err, failed_trials)
    min_feasible: int


def find_shot_budget(s: Spectrum, cfg: KrylovConfig, policy: Policy | None = None,
                     target_err: float = 1e-3, n_trials: int = 100, seed: int = 0,
                     m_cap: float = 1e12) -> BudgetResult:
    """Smallest tested total shot count meeting ``target_err`` (Hartree).

    Success means no failed trial and mean absolute error against the
    noiseless regularised energy at most ``target_err``. The search starts at
    ``1/(s_min * target_err)^2``, moves by decades until the outcome flips,
    then refines the bracketing decade in steps of ``10**0.25``.
    """
    policy = cfg.policy if policy is None else policy
    setup = _TrialSetup(s, cfg, policy)
    min_m = int(setup.sampled.size)
    if min_m == 0 or math.isinf(target_err):
        return BudgetResult(min_m, None, (), min_m)
    if target_err <= 0:
        raise ContractError("target_err must be positive")
    cache: dict[int, TrialStats] = {}

    def ok(m: int) -> bool:
        if m not in cache:
            cache[m] = setup.run(m, n_trials, seed)
        st = cache[m]
        return st.failed_trials == 0 and st.mean_abs_err <= target_err

    def result(m: int) -> BudgetResult:
        hist = tuple((k, v.mean_abs_err, v.failed_trials) for k, v in cache.items())
        return BudgetResult(m, cache[m], hist, min_m)

    s_min = float(setup.solution.kept_eigs[-1])
    guess = 1.0 / (s_min * target_err) ** 2
    m = int(min(max(math.ceil(guess), min_m), m_cap))
    if ok(m):
        while True:
            lower = math.ceil(m / 10)
            if lower < min_m:
                if m == min_m or ok(min_m):
                    return result(min_m)
                lo, hi = min_m, m
                break
            if not ok(lower):
                lo, hi = lower, m
                break
            m = lower
    else:
        while True:
            upper = m * 10
            if upper > m_cap:
                raise SearchError(f"target {target_err:g} Ha not reached below the cap M={m_cap:g}")
            if ok(upper):
                lo, hi = m, upper
                break
            m = upper
    for step in (1, 2, 3):
        cand = math.ceil(lo * 10 ** (step / 4))
        if lo < cand < hi and ok(cand):
            return result(cand)
    return result(hi)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OverlapAnalysis:
    records: list[dict]  # K, dk, k_dim, s1, s2, s3
    slopes: dict[int, tuple[float, float, float]]  # dk -> fitted ds_r/dK on the largest-K half


def overlap_analysis(s: Spectrum, k_list, dk_list) -> OverlapAnalysis:
    """Top-three overlap eigenvalues for each maximal degree ``K`` and step ``dk``.

    The subspace for (K, dk) uses ``K' = K // dk`` vectors of degrees
    ``0, dk, ..., (K'-1) dk``, so a larger ``dk`` at the same ``K`` selects a
    principal submatrix of the ``dk = 1`` overlap.
    """
    k_list = sorted({int(k) for k in k_list})
    records = []
    slopes = {}
    for dk in dk_list:
        dk = int(dk)
        rows = []
        for K in k_list:
            k_dim = K // dk
            if k_dim < 1:
                continue
            cfg = KrylovConfig(k_dim, dk)
            deg = sorted(set((np.arange(2 * k_dim - 1) * dk).tolist()))
            table = moment_table(s, deg)
            mu = np.zeros(deg[-1] + 2)
            for d in deg:
                mu[d] = table.value(d)
            maps = _index_maps(cfg)
            sm = 0.5 * (mu[maps.s_a] + mu[maps.s_b])
            eig = np.sort(np.linalg.eigvalsh(sm))[::-1]
            top = np.zeros(3)
            top[: min(3, eig.size)] = eig[:3]
            rec = {"K": K, "dk": dk, "k_dim": k_dim, "s1": top[0], "s2": top[1], "s3": top[2]}
            rows.append(rec)
        records.extend(rows)
        if len(rows) >= 2:
            half = rows[len(rows) // 2 :] if len(rows) >= 4 else rows
            x = np.array([r["K"] for r in half], dtype=float)
            slopes[dk] = tuple(float(np.polyfit(x, [r[f"s{i}"] for r in half], 1)[0]) for i in (1, 2, 3))
    return OverlapAnalysis(records, slopes)


def optimal_dk(scale: float, lambda0_norm: float) -> float:
    """Degree step ``scale * sqrt(1 - lambda0^2)`` that keeps overlaps from cancelling."""
    if abs(lambda0_norm) > 1:
        raise ContractError("lambda0_norm must lie in [-1, 1]")
    return float(scale * math.sqrt(max(0.0, 1.0 - lambda0_norm**2)))


def window_overlap(k: int, dk: int, theta_a: float, theta_b: float, scale: float) -> tuple[float, float]:
    r"""Narrow-window estimate of :math:`\int \cos(k\theta)\cos((k+\Delta k)\theta)\,dE`.

    Returns ``(value, bound)`` with

    .. math::

        I \approx \lambda\sin\theta_*\,\frac{\cos(\Delta k(\theta_a+\theta_b)/2)\,
        \sin(\Delta k(\theta_a-\theta_b)/2)}{\Delta k},
        \qquad |I| \le \frac{\lambda\sin\theta_*}{\Delta k},

    where :math:`\theta_*` is the window midpoint and :math:`E = \lambda\cos\theta`.
    The fast carrier at frequency ``2k + dk`` is dropped, so the estimate is
    meant for large ``k``.
    """
    if not 0 <= theta_b < theta_a <= math.pi:
        raise ContractError("need 0 <= theta_b < theta_a <= pi")
    if dk < 1:
        raise ContractError("dk must be >= 1")
    mid = 0.5 * (theta_a + theta_b)
    amp = scale * math.sin(mid)
    value = amp * math.cos(dk * mid) * math.sin(0.5 * dk * (theta_a - theta_b)) / dk
    return value, amp / dk
