r"""Statistical phase estimation driven by Chebyshev moments.

The Heaviside step is smoothed by :math:`\mathrm{erf}(\sqrt{2\beta}\,x)` and
truncated to the odd Chebyshev series

.. math::

    Q_{\beta,K}(x) = 2e^{-\beta}\sqrt{2\beta/\pi}\Big[I_0 x + \sum_{j=1}^{K}(-1)^j I_j
        \Big(\frac{T_{2j+1}(x)}{2j+1} - \frac{T_{2j-1}(x)}{2j-1}\Big)\Big],

then :math:`H(x) = (Q_{\beta,K}(\sin x) + 1)/2 = F_0 + \sum_j F_{2j+1}
(e^{i(2j+1)x} - e^{-i(2j+1)x})`. Convolving ``H`` with the spectral measure in
arccos space at :math:`\pm\theta_r` gives

.. math::

    \tilde C_+(x) + \tilde C_-(x) = 2F_0 + \sum_{j\,\rm odd} 2F_j
        \big(e^{ijx} - e^{-ijx}\big)\langle T_j\rangle,

a function of Chebyshev moments only. A binary search on this curve locates
the ground-state jump, which is mapped back to an energy through ``cos``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import ContractError, DomainError, PreconditionError, SearchError
from .numerics import RngStream, bessel_tail, scaled_bessel_array
from .qksd import inject_noise
from .spectrum import MomentTable, Spectrum, flip_for_spe, moment_table

__all__ = [
    "HeavisideModel",
    "SearchConfig",
    "SpePlan",
    "SpeResult",
    "EnergyEstimate",
    "truncation_bound_new",
    "truncation_bound_old",
    "erf_chebyshev_coefficients",
    "q_function",
    "measured_truncation_error",
    "fourier_coefficients",
    "select_parameters",
    "acdf_value",
    "exact_cdf",
    "spe_allocate",
    "binary_search",
    "certify_spe_range",
    "invert_energy",
    "plan_spe",
    "execute_plan",
    "spe_run",
    "shots_for",
]


# ---------------------------------------------------------------------------
# truncation bounds
# ---------------------------------------------------------------------------


def _prefactor(beta: float, K: int) -> float:
    return math.sqrt(2.0 * beta / math.pi) / K


def truncation_bound_new(beta_erf: float, K: int) -> float:
    r"""Sup-norm bound on :math:`|\mathrm{erf}(\sqrt{2\beta}x) - Q_{\beta,K}(x)|` over [-1, 1].

    Equals :math:`\sqrt{2\beta/\pi}\,K^{-1}\,2\sum_{j>K} e^{-\beta}I_j(\beta)`,
    i.e. :math:`\sqrt{2\beta/\pi}K^{-1}(1 - e^{-\beta}I_0 - 2\sum_{j=1}^{K}e^{-\beta}I_j)`;
    the tail is summed directly to stay accurate below machine epsilon.
    """
    if K < 1:
        raise DomainError("K must be >= 1")
    return _prefactor(beta_erf, K) * bessel_tail(beta_erf, int(K))


def _old_terms(beta: float, K: int, t: np.ndarray) -> np.ndarray:
    gauss = 2.0 * np.exp(-(((K + 1) / t) ** 2))
    with np.errstate(over="ignore", under="ignore"):
        tail = 0.5 * np.exp(t * (1.0 - np.log(t)) - beta)
    return _prefactor(beta, K) * (gauss + tail)


def truncation_bound_old(beta_erf: float, K: int, t: float | None = None) -> float:
    r"""Earlier bound :math:`\sqrt{2\beta/\pi}K^{-1}[2e^{-((K+1)/t)^2} + \tfrac12(e/t)^t e^{-\beta}]`.

    ``t >= beta_erf`` is free; when omitted the bound is minimised over a
    logarithmic grid ``t in [beta, 10^8 beta]``.
    """
    if beta_erf <= 0:
        raise DomainError("beta_erf must be positive")
    if K < 1:
        raise DomainError("K must be >= 1")
    if t is not None:
        if t < beta_erf:
            raise DomainError(f"t={t} must be >= beta_erf={beta_erf}")
        return float(_old_terms(beta_erf, K, np.array([float(t)]))[0])
    grid = beta_erf * np.logspace(0.0, 8.0, 801)
    return float(_old_terms(beta_erf, K, grid).min())


# ---------------------------------------------------------------------------
# Fourier model
# ---------------------------------------------------------------------------


def _sine_coefficients(beta: float, K: int) -> np.ndarray:
    # b_{2m+1} for m = 0..K, where Q(sin x) = sum_m b_{2m+1} sin((2m+1) x)
    iv = np.zeros(K + 2)
    iv[: K + 1] = scaled_bessel_array(beta, K)
    c = 2.0 * math.sqrt(2.0 * beta / math.pi)
    m = np.arange(K + 1)
    return c * (iv[m] + iv[m + 1]) / (2 * m + 1)


def erf_chebyshev_coefficients(beta_erf: float, K: int) -> np.ndarray:
    """Chebyshev-T coefficients ``a_n`` (n = 0..2K+1) of ``Q_{beta,K}``."""
    b = _sine_coefficients(beta_erf, K)
    a = np.zeros(2 * K + 2)
    a[1::2] = b * (-1.0) ** np.arange(K + 1)
    return a


def q_function(x, beta_erf: float, K: int):
    """Evaluate ``Q_{beta,K}(x)`` by Clenshaw summation."""
    return np.polynomial.chebyshev.chebval(np.asarray(x, dtype=float), erf_chebyshev_coefficients(beta_erf, K))


def measured_truncation_error(beta_erf: float, K: int, n_grid: int = 100_001) -> float:
    """``max |erf(sqrt(2 beta) x) - Q_{beta,K}(x)|`` on a uniform grid of [-1, 1]."""
    x = np.linspace(-1.0, 1.0, n_grid)
    erf = np.vectorize(math.erf, otypes=[float])(math.sqrt(2.0 * beta_erf) * x)
    return float(np.max(np.abs(erf - q_function(x, beta_erf, K))))


@dataclass(frozen=True)
class HeavisideModel:
    """Truncated smooth-step Fourier model.

    ``coeffs[i]`` is :math:`F_{2i+1}` (purely imaginary); ``F0 = 1/2``.
    """

    sharpness: float
    order: int
    coeffs: np.ndarray
    bound_new: float
    bound_old: float
    F0: float = 0.5

    @property
    def degrees(self) -> np.ndarray:
        """Odd Chebyshev degrees ``1, 3, ..., 2K+1`` carrying a coefficient."""
        return 2 * np.arange(self.order + 1) + 1

    @property
    def max_degree(self) -> int:
        return 2 * self.order + 1

    @property
    def one_norm(self) -> float:
        return abs(self.F0) + float(np.abs(self.coeffs).sum())

    @property
    def sine_coefficients(self) -> np.ndarray:
        """``b_j`` with ``2 F_j (e^{ijx} - e^{-ijx}) = b_j sin(jx)``, i.e. ``b_j = 4 i F_j``."""
        return (4j * self.coeffs).real

    def heaviside(self, x):
        """``H(x) = F0 + sum_j F_j (e^{ijx} - e^{-ijx})``."""
        x = np.asarray(x, dtype=float)
        s = np.sin(np.multiply.outer(x, self.degrees)) @ (0.5 * self.sine_coefficients)
        return self.F0 + s


def fourier_coefficients(beta_erf: float, K: int) -> HeavisideModel:
    """Build :class:`HeavisideModel` from the sine expansion of ``Q(sin x)``.

    Uses :math:`T_{2m+1}(\\sin x) = (-1)^m \\sin((2m+1)x)` so that
    :math:`Q(\\sin x) = \\sum_m b_{2m+1}\\sin((2m+1)x)` with
    :math:`b_{2m+1} = 2\\sqrt{2\\beta/\\pi}\\,e^{-\\beta}(I_m + I_{m+1})/(2m+1)`
    (the :math:`I_{K+1}` term absent at ``m = K``), and
    :math:`F_{2m+1} = b_{2m+1}/(4i)`.
    """
    if beta_erf <= 0:
        raise DomainError("beta_erf must be positive")
    if K < 0:
        raise DomainError("K must be >= 0")
    coeffs = -0.25j * _sine_coefficients(beta_erf, K)
    kk = max(K, 1)
    return HeavisideModel(float(beta_erf), int(K), coeffs, truncation_bound_new(beta_erf, kk),
                          truncation_bound_old(beta_erf, kk))


def _smallest_beta(delta: float, epsilon: float, beta_max: float) -> float:
    s = math.sin(delta / 2.0)

    def ok(b):
        return math.erfc(math.sqrt(2.0 * b) * s) <= epsilon / 2.0

    lo, hi = 1.0, float(beta_max)
    if ok(lo):
        return lo
    if not ok(hi):
        raise SearchError(f"no beta_erf <= {beta_max:g} meets the erf sharpness requirement")
    while hi / lo - 1.0 > 1e-12:
        mid = math.sqrt(lo * hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _smallest_k(bound: Callable[[int], float], target: float, k_max: int) -> int:
    hi = 1
    while bound(hi) > target:
        hi *= 2
        if hi > k_max:
            raise SearchError(f"truncation order exceeds cap {k_max}")
    lo = hi // 2
    if lo < 1:
        return hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if bound(mid) <= target:
            hi = mid
        else:
            lo = mid
    return hi


def select_parameters(delta: float, epsilon: float, bound: str = "new", beta_max: float = 1e12,
                      k_max: int = 2**40) -> tuple[float, int]:
    """Smallest ``(beta_erf, K)`` meeting resolution ``delta`` (radians) and CDF error ``epsilon``.

    Half of ``epsilon`` goes to the erf sharpness,
    ``erfc(sqrt(2 beta) sin(delta/2)) <= epsilon/2`` (bisection in ``beta``),
    and half to truncation, ``bound(beta, K) <= epsilon/2`` (doubling then
    bisection in ``K``). ``bound`` is ``"new"`` or ``"old"``.
    """
    if not 0 < delta < math.pi / 4:
        raise DomainError("delta must lie in (0, pi/4)")
    if not 0 < epsilon < 0.5:
        raise DomainError("epsilon must lie in (0, 1/2)")
    beta = _smallest_beta(delta, epsilon, beta_max)
    if bound == "new":
        fn = lambda k: truncation_bound_new(beta, k)  # noqa: E731
    elif bound == "old":
        fn = lambda k: truncation_bound_old(beta, k)  # noqa: E731
    else:
        raise ContractError(f"unknown bound {bound!r}")
    return beta, _smallest_k(fn, epsilon / 2.0, k_max)


# ---------------------------------------------------------------------------
# ACDF
# ---------------------------------------------------------------------------


def _moment_vector(model: HeavisideModel, moments: MomentTable) -> tuple[float, np.ndarray]:
    mu0 = moments.value(0) if 0 in moments else None
    if mu0 is None:
        raise ContractError("moment table lacks degree 0")
    return mu0, np.array([moments.value(int(d)) for d in model.degrees])


def _acdf(model: HeavisideModel, mu0: float, mu: np.ndarray, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    w = model.sine_coefficients * mu
    flat = x.reshape(-1)
    out = np.empty(flat.size)
    step = max(1, 4_000_000 // model.degrees.size)
    for i in range(0, flat.size, step):
        out[i : i + step] = np.sin(np.outer(flat[i : i + step], model.degrees)) @ w
    return (2.0 * model.F0 * mu0 + out).reshape(x.shape)


def acdf_value(model: HeavisideModel, moments: MomentTable, x):
    r"""Approximate CDF sum :math:`\tilde C_+(x) + \tilde C_-(x)` from moments.

    For ``x < 0`` inside the certified range this tracks the arccos-space CDF
    of :math:`-\theta_r`; for ``x > 0`` it tracks one plus the CDF of
    :math:`\theta_r`. Broadcasts over ``x``.
    """
    mu0, mu = _moment_vector(model, moments)
    out = _acdf(model, mu0, mu, x)
    return float(out) if np.ndim(out) == 0 else out


def exact_cdf(s: Spectrum, x):
    """Exact ``C_+(x) + C_-(x)`` for the spectral measure at ``+-arccos(lambda_r)``."""
    theta = np.arccos(s.values)
    x = np.asarray(x, dtype=float)
    plus = (np.subtract.outer(x, theta) >= 0) @ s.weights
    minus = (np.add.outer(x, theta) >= 0) @ s.weights
    out = plus + minus
    return float(out) if out.ndim == 0 else out


def shots_for(model: HeavisideModel, eta: float, p_success: float | None = None) -> int:
    """``ceil(2 F^2 / eta^2)``, times ``ceil(ln(1/(1 - p_success)))`` when given."""
    m = math.ceil(2.0 * model.one_norm**2 / eta**2)
    if p_success is not None:
        if not 0 < p_success < 1:
            raise DomainError("p_success must lie in (0, 1)")
        m *= max(1, math.ceil(math.log(1.0 / (1.0 - p_success))))
    return m


def spe_allocate(model: HeavisideModel, m_total: int) -> dict[int, int]:
    """Importance-sampled shots ``M_j = max(1, floor(|F_j| m / sum|F|))`` over odd degrees.

    The sum runs over the sampled odd degrees; degree 0 is exact and gets 0.
    Because of the floor of one shot per degree, the realised total can
    exceed ``m_total`` when it is smaller than the number of degrees.
    """
    if m_total < 1:
        raise ContractError("m_total must be positive")
    mags = np.abs(model.coeffs)
    total = mags.sum()
    alloc = {0: 0}
    for d, a in zip(model.degrees.tolist(), mags.tolist()):
        alloc[d] = max(1, int(math.floor(a * m_total / total)))
    return alloc


# ---------------------------------------------------------------------------
# search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SearchConfig:
    """Level-crossing search parameters (radians in arccos space)."""

    eta: float
    delta: float
    level: float
    orientation: str
    interval: tuple[float, float]
    redraw_per_query: bool = False
    max_iter: int = 200

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise ContractError("eta must lie in (0, 1]")
        if self.delta <= 0:
            raise ContractError("delta must be positive")
        if self.orientation not in ("first-jump", "last-jump"):
            raise ContractError("orientation must be 'first-jump' or 'last-jump'")
        if not self.interval[0] < self.interval[1]:
            raise ContractError("interval must satisfy x_left < x_right")

    @classmethod
    def preset(cls, eta: float, delta: float, flipped: bool, **kw) -> "SearchConfig":
        """Default level and interval for unflipped (first jump) or flipped (last jump) spectra."""
        left = -(math.pi - delta) / 2.0
        if flipped:
            return cls(eta, delta, 1.0 - 0.75 * eta, "last-jump", (left, delta), **kw)
        return cls(eta, delta, 0.75 * eta, "first-jump", (left, 0.0), **kw)


def binary_search(model: HeavisideModel | None, noisy_moments, cfg: SearchConfig,
                  trace: list | None = None) -> float:
    """Locate the upward crossing of ``cfg.level`` by the ACDF.

    ``noisy_moments`` is a :class:`MomentTable` (one set reused for every
    query) or a callable ``x -> value`` (e.g. one that redraws noise per
    query). A query above the level moves the right end to
    ``x_m + 2 delta / 3``, otherwise the left end moves to ``x_m - 2 delta / 3``;
    the search stops once the bracket is at most ``2 delta`` wide and returns
    its midpoint. ``trace`` collects ``(x_m, value)`` pairs if given.
    """
    if callable(noisy_moments):
        query = noisy_moments
    else:
        mu0, mu = _moment_vector(model, noisy_moments)
        query = lambda x: float(_acdf(model, mu0, mu, x))  # noqa: E731
    xl, xr = map(float, cfg.interval)
    shift = 2.0 * cfg.delta / 3.0
    for _ in range(cfg.max_iter):
        if xr - xl <= 2.0 * cfg.delta:
            return 0.5 * (xl + xr)
        xm = 0.5 * (xl + xr)
        val = query(xm)
        if trace is not None:
            trace.append((xm, val))
        if val > cfg.level:
            xr = xm + shift
        else:
            xl = xm - shift
    raise SearchError(f"binary search did not converge in {cfg.max_iter} queries")


def certify_spe_range(s: Spectrum, delta: float) -> bool:
    """True iff every value lies in ``[sin(delta/2), 1]``."""
    return bool(s.values.min() >= math.sin(delta / 2.0) and s.values.max() <= 1.0)


class EnergyEstimate(NamedTuple):
    energy: float  # Hartree
    amplification: float  # |sin x*|, error reduction factor of the cos inversion


def invert_energy(x_star: float, meta: Spectrum | tuple) -> EnergyEstimate:
    """Energy from a crossing location ``x*`` in arccos space.

    ``meta`` is a spectrum (its transform is used) or ``(shift, scale, flipped)``.
    Flipped: ``E = shift + scale (1/2 - cos|x*|)``; otherwise ``E = shift + scale cos x*``.
    """
    if isinstance(meta, Spectrum):
        shift, scale, flipped = meta.shift, meta.scale, meta.flipped
    else:
        shift, scale, flipped = meta
    c = math.cos(abs(x_star))
    e = shift + scale * (0.5 - c) if flipped else shift + scale * c
    return EnergyEstimate(float(e), abs(math.sin(x_star)))


# ---------------------------------------------------------------------------
# end-to-end runs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpePlan:
    """Everything about an SPE run except its random draws."""

    spectrum: Spectrum  # flipped
    source_ground: float  # true ground energy, Hartree
    delta_target: float  # Hartree
    delta: float  # radians
    eta: float
    epsilon: float
    model: HeavisideModel
    m_total: int
    allocation: dict[int, int]
    moments: MomentTable
    search: SearchConfig


@dataclass(frozen=True)
class SpeResult:
    e0_phys: float
    K: int
    M: int
    x_star: float
    beta_erf: float
    eta: float
    delta_radians: float
    amplification_factor: float
    error: float
    success: bool
    queries: int = 0
    seed: int = 0

    def report(self) -> dict:
        return {
            "K": self.K,
            "M": self.M,
            "beta_erf": self.beta_erf,
            "eta": self.eta,
            "delta_radians": self.delta_radians,
            "x_star": self.x_star,
            "e0_hartree": self.e0_phys,
            "amplification_factor": self.amplification_factor,
            "success": self.success,
        }


def plan_spe(s: Spectrum, delta_target_hartree: float, p_success: float = 0.99, margin: float = 1e-3,
             eta: float | None = None, epsilon: float | None = None, x_hint: float | None = None,
             redraw_per_query: bool = False, beta_max: float = 1e12) -> SpePlan:
    """Choose resolution, model, shot count and search configuration.

    The Hartree target becomes ``delta = target / scale_eff`` (worst case of
    ``|d cos/dx| = 1``); with ``x_hint`` the conversion divides by
    ``|sin x_hint|`` instead (amplification-aware, opt-in). ``eta`` defaults to
    ``p0/2`` and ``epsilon`` to ``eta/8``.
    """
    flipped = s if s.flipped else flip_for_spe(s, margin)
    if delta_target_hartree <= 0:
        raise DomainError("delta_target_hartree must be positive")
    delta = delta_target_hartree / flipped.scale
    if x_hint is not None:
        delta /= max(abs(math.sin(x_hint)), 1e-12)
    delta = min(delta, math.pi / 4 * 0.999)
    if not certify_spe_range(flipped, delta):
        raise PreconditionError(
            f"spectral range condition fails: min value {flipped.values.min():.3g} < sin(delta/2)"
        )
    eta = flipped.p0 / 2.0 if eta is None else float(eta)
    epsilon = eta / 8.0 if epsilon is None else float(epsilon)
    beta, K = select_parameters(delta, epsilon, beta_max=beta_max)
    model = fourier_coefficients(beta, K)
    m_total = shots_for(model, eta, p_success)
    alloc = spe_allocate(model, m_total)
    moments = moment_table(flipped, [0, *model.degrees.tolist()])
    search = SearchConfig.preset(eta, delta, flipped=True, redraw_per_query=redraw_per_query)
    return SpePlan(flipped, flipped.ground_energy, delta_target_hartree, delta, eta, epsilon, model,
                   m_total, alloc, moments, search)


def execute_plan(plan: SpePlan, seed: int) -> SpeResult:
    """One seeded SPE run of ``plan``."""
    model = plan.model
    if plan.search.redraw_per_query:
        counter = iter(range(1 << 62))

        def query(x):
            noisy = inject_noise(plan.moments, plan.allocation, RngStream(seed, next(counter)))
            mu0, mu = _moment_vector(model, noisy)
            return float(_acdf(model, mu0, mu, x))

        source = query
    else:
        source = inject_noise(plan.moments, plan.allocation, RngStream(seed, 0))
    trace: list = []
    x_star = binary_search(model, source, plan.search, trace)
    est = invert_energy(x_star, plan.spectrum)
    err = abs(est.energy - plan.source_ground)
    return SpeResult(est.energy, model.order, plan.m_total, x_star, model.sharpness, plan.eta, plan.delta,
                     est.amplification, err, err <= plan.delta_target, len(trace), seed)


def spe_run(s: Spectrum, delta_target_hartree: float, p_success: float = 0.99, seed: int = 0,
            **kw) -> SpeResult:
    """Plan and execute a single SPE run (see :func:`plan_spe` for options)."""
    return execute_plan(plan_spe(s, delta_target_hartree, p_success, **kw), seed)
