"""Allan variance of the stabilized LO, with phase slips and dead time.

Three routes are provided:

* empirical: two-sample variance of simulated runs (:func:`empirical_allan`),
* semi-analytic: weighted estimator error ``c_T^2`` combined with the
  distribution of the first slip (:func:`allan_semianalytic`),
* closed form for white noise (:func:`allan_white_closed`).

All quantities use ``omega_0 = 1`` and times in units of ``1/gamma``.
:func:`scale_allan` converts to ``sigma^2 * tau * N_t / gamma``.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from . import streams
from .estimation import Protocol, mse_curve
from .noise import NoiseModel, StatisticsWarning, generate
from .spin import ParameterError, optimal_squeezing

MIN_SLIP_REALIZATIONS = 1000


class GridError(RuntimeError):
    """The optimum lies on the edge of the search grid."""


@dataclass(frozen=True)
class AllanResult:
    """Allan variance (``omega_0 = 1``) with its uncertainty.

    ``route`` is one of ``"empirical"``, ``"semianalytic"``, ``"closedform"``.
    """

    sigma2: float
    err: float
    route: str
    slip_prob: float

    def __post_init__(self):
        if self.sigma2 < 0 or self.err < 0:
            raise ParameterError("sigma2 and err must be >= 0")


def scale_allan(sigma2, tau, N_total, gamma=1.0):
    """``sigma^2 * tau * N_t / gamma``, the scaling used for stability plots."""
    return np.asarray(sigma2) * tau * N_total / gamma


# -- empirical route ---------------------------------------------------------


def two_sample_variance(y):
    """Two-sample variance of one run, ``sum (y[n+1]-y[n])^2 / (2K(K-1))``.

    Returns 0 for fewer than two values.
    """
    y = np.asarray(y, dtype=float)
    K = y.size
    if K < 2:
        return 0.0
    return float(np.sum(np.diff(y) ** 2) / (2.0 * K * (K - 1)))


def two_sample_rows(y, n_good):
    """Row-wise :func:`two_sample_variance` of a NaN-padded matrix."""
    y = np.asarray(y, dtype=float)
    d2 = np.nan_to_num(np.diff(y, axis=1) ** 2)
    K = np.asarray(n_good, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = d2.sum(axis=1) / (2.0 * K * (K - 1.0))
    return np.where(K >= 2, out, 0.0)


def _empirical(per_run, slipped):
    per_run = np.asarray(per_run, dtype=float)
    n = per_run.size
    if n == 0:
        raise ParameterError("no runs")
    err = per_run.std(ddof=1) / np.sqrt(n) if n > 1 else 0.0
    return AllanResult(float(per_run.mean()), float(err), "empirical", float(np.mean(slipped)))


def empirical_allan(y_series_collection, slipped=None):
    """Average two-sample variance over runs of possibly different lengths.

    Every run gets equal weight; runs with fewer than two values contribute
    zero.  ``slipped`` (booleans per run) sets the reported slip fraction;
    runs are inspected for a ``slip_cycle`` attribute otherwise.
    """
    series = list(y_series_collection)
    if slipped is None:
        slipped = [getattr(r, "slip_cycle", None) is not None for r in series]
    per_run = [two_sample_variance(getattr(r, "y", r)) for r in series]
    return _empirical(per_run, slipped)


def _block_stats(block):
    return two_sample_rows(block.y, block.n_good), block.slip_cycle > 0


def ensemble_allan(seed, config, n_reps, workers=1):
    """Empirical Allan variance of ``n_reps`` simulated runs of ``config``."""
    from .clock import run_blocks

    parts = run_blocks(seed, config, n_reps, _block_stats, workers)
    per_run = np.concatenate([p[0] for p in parts])
    slipped = np.concatenate([p[1] for p in parts])
    return _empirical(per_run, slipped)


# -- slip statistics -----------------------------------------------------------


def slip_p_white(T, gamma, ell):
    """Probability that a Gaussian phase of variance ``gamma*T`` leaves ``[-ell, ell]``."""
    v2 = gamma * np.asarray(T, dtype=float)
    with np.errstate(divide="ignore"):
        return special.erfc(ell / np.sqrt(2.0 * v2))


@dataclass(frozen=True)
class SlipPmf:
    """Distribution of the cycle of the first slip.

    ``P[n-1]`` is the probability of the first slip at cycle ``n``
    (``n = 1..M``); ``Q`` is the probability of no slip in ``M`` cycles.
    """

    P: np.ndarray
    Q: float

    @property
    def M(self):
        return self.P.size


def geometric_pmf(p, M):
    """First-slip law for i.i.d. cycles with slip probability ``p``."""
    if not 0 <= p <= 1:
        raise ParameterError("p must lie in [0, 1]")
    if M < 1:
        raise ParameterError("M must be >= 1")
    survive = np.cumprod(np.full(M, 1.0 - p))
    P = p * np.concatenate(([1.0], survive[:-1]))
    return SlipPmf(P, float(survive[-1]))


def empirical_pmf(first_exit, M, n_realizations=None):
    """First-slip law from observed first-exit cycles.

    ``first_exit`` holds 1-based cycle indices; values above ``M`` (or 0)
    mean no slip within ``M`` cycles.
    """
    first_exit = np.asarray(first_exit, dtype=np.int64)
    n = first_exit.size if n_realizations is None else int(n_realizations)
    if n < MIN_SLIP_REALIZATIONS:
        warnings.warn(
            f"only {n} realizations for an empirical slip law", StatisticsWarning, stacklevel=2
        )
    hit = first_exit[(first_exit >= 1) & (first_exit <= M)]
    P = np.bincount(hit, minlength=M + 1)[1:] / n
    return SlipPmf(P, float(1.0 - hit.size / n))


def total_slip_probability(pmf: SlipPmf):
    """Probability of at least one slip within the run, ``1 - Q``."""
    return 1.0 - pmf.Q


def _flicker_block(job):
    seed, b, count, n_max, thresholds = job
    x = generate(streams.stream(seed, b), NoiseModel.flicker(1.0), 1.0, n_max, count).values
    rec = np.maximum.accumulate(np.abs(x), axis=1)
    # number of leading windows inside the threshold = index of the first exit
    return np.stack([np.searchsorted(row, thresholds, side="right") for row in rec], axis=1)


@lru_cache(maxsize=16)
def _flicker_exit_table(seed, n_realizations, n_max, thresholds, workers=1):
    jobs = [
        (seed, b, count, n_max, np.asarray(thresholds))
        for b, _, count in streams.blocks(n_realizations)
    ]
    return np.concatenate(streams.pmap(_flicker_block, jobs, workers), axis=1)


@dataclass(frozen=True)
class SlipModel:
    """How the first-slip law is obtained for a noise model.

    White noise uses the geometric law.  Flicker noise uses free-running
    LO traces with one step per Ramsey window: the first window whose phase
    leaves ``[-ell, ell]`` marks the slip.  The traces are scale free, so one
    set of ``n_realizations`` traces serves every ``T``.
    """

    noise: NoiseModel
    ell: float
    n_realizations: int = 50_000
    seed: int = 0
    workers: int = 1

    def v2(self, T):
        return self.noise.phase_variance(T)

    def p(self, T):
        if self.noise.alpha != 0:
            raise ParameterError("per-cycle slip probability is defined for white noise")
        return float(slip_p_white(T, self.noise.gamma, self.ell))

    def pmfs(self, T_grid, tau, T_D=0.0):
        """First-slip laws for each ``T`` with ``floor(tau / (T + T_D))`` cycles.

        ``T_D`` may be a scalar or an array matching ``T_grid``.  Dead time
        only shortens the run; the flicker windows stay contiguous.
        """
        T_grid = np.atleast_1d(np.asarray(T_grid, dtype=float))
        T_D = np.broadcast_to(np.asarray(T_D, dtype=float), T_grid.shape)
        Ms = [_n_cycles(tau, T + td) for T, td in zip(T_grid, T_D)]
        if self.noise.alpha == 0 or self.noise.gamma == 0:
            if self.noise.gamma == 0:
                return [SlipPmf(np.zeros(M), 1.0) for M in Ms]
            return [geometric_pmf(self.p(T), M) for T, M in zip(T_grid, Ms)]
        if self.n_realizations < MIN_SLIP_REALIZATIONS:
            warnings.warn(
                f"only {self.n_realizations} realizations for an empirical slip law",
                StatisticsWarning,
                stacklevel=2,
            )
        thresholds = tuple(float(self.ell / (self.noise.gamma * T)) for T in T_grid)
        idx = _flicker_exit_table(
            int(self.seed), int(self.n_realizations), max(Ms), thresholds, self.workers
        )
        return [
            empirical_pmf(idx[i] + 1, M, self.n_realizations)
            for i, M in enumerate(Ms)
        ]

    def pmf(self, T, tau, T_D=0.0):
        return self.pmfs([T], tau, T_D)[0]


def slip_pmf(model: SlipModel, T, tau, T_D=0.0):
    """First-slip law ``P_T(n_c)`` and no-slip probability ``Q_T``."""
    return model.pmf(T, tau, T_D)


def _n_cycles(tau, T_C):
    M = int(np.floor(tau / T_C * (1 + 1e-12)))
    if M < 1:
        raise ParameterError("tau shorter than one cycle")
    return M


# -- weighted estimator error --------------------------------------------------

_THETA_GRID = np.unique(np.concatenate([np.linspace(0.0, 0.3, 601), np.arange(0.3, np.pi, 0.005), [np.pi]]))


@lru_cache(maxsize=64)
def _mse_table(protocol, N, s, s_eps):
    return mse_curve(protocol, _THETA_GRID, N, s, s_eps)


def c_T(protocol, N, v_T2, ell, s=None, s_eps=0.0):
    """Mean squared estimation error averaged over the phase distribution.

    The phase is Gaussian with variance ``v_T2``, conditioned on
    ``|theta| <= ell``.  The error profile is tabulated once per estimator on
    a grid that is 5e-4 fine below 0.3 rad and 5e-3 beyond, using the
    parity of the profile; the weighted average is a trapezoid rule.
    """
    protocol = Protocol.parse(protocol)
    if protocol is Protocol.HYBRID and s is None:
        s = optimal_squeezing(N)
    if v_T2 <= 0:
        return float(_mse_table(protocol, int(N), s, float(s_eps))[0])
    mse = _mse_table(protocol, int(N), s, float(s_eps))
    hi = min(ell, np.pi)
    keep = _THETA_GRID < hi
    x = np.append(_THETA_GRID[keep], hi)
    m = np.append(mse[keep], np.interp(hi, _THETA_GRID, mse))
    w = np.exp(-0.5 * x**2 / v_T2)
    norm = np.trapezoid(w, x)
    if not norm > 0:
        raise ArithmeticError("phase distribution has no weight inside the inversion region")
    return float(np.trapezoid(w * m, x) / norm)


# -- semi-analytic and closed-form routes --------------------------------------


def _slip_factor(pmf: SlipPmf):
    n = np.arange(2, pmf.M + 1)
    return pmf.Q / pmf.M + float(np.sum(pmf.P[1:] / n))


def allan_semianalytic(c_T2, pmf: SlipPmf, T, tau=None):
    """Slip-weighted Allan variance.

    ``c_T2 / T^2 * (Q/M + sum_{n>=2} P(n)/n)`` with ``M`` the number of cycles
    in ``pmf``.  ``tau`` is accepted for symmetry and not used.
    """
    return AllanResult(
        float(c_T2 / T**2 * _slip_factor(pmf)), 0.0, "semianalytic", total_slip_probability(pmf)
    )


def white_plateau(p):
    """``tau/T -> infinity`` limit of ``sum_{n>=2} (1-p)^(n-1) p / n``."""
    if p <= 0:
        return 0.0
    if p >= 1:
        return 0.0
    return p / (1.0 - p) * np.log(1.0 / p) - p


def _geometric_factor(p, M):
    if p <= 0:
        return 1.0 / M
    n = np.arange(2, M + 1)
    log_q = np.log1p(-p) if p < 1 else -np.inf
    terms = p * np.exp((n - 1) * log_q) / n if p < 1 else np.zeros(n.size)
    Q = np.exp(M * log_q) if p < 1 else 0.0
    return Q / M + float(terms.sum())


def allan_white_closed(protocol, N, T, tau, gamma, ell=None, s=None, T_D=0.0):
    """Closed-form Allan variance for white LO noise.

    ``c_T^2`` is ``1/N`` for the single protocol and the weighted error of
    :func:`c_T` otherwise.  ``N`` is the atom number per ensemble.
    """
    from .clock import inversion_half_width

    protocol = Protocol.parse(protocol)
    ell = inversion_half_width(protocol, N) if ell is None else ell
    p = float(slip_p_white(T, gamma, ell)) if gamma > 0 else 0.0
    M = _n_cycles(tau, T + T_D)
    if protocol is Protocol.SINGLE:
        c2 = 1.0 / N
    else:
        c2 = c_T(protocol, N, gamma * T, ell, s)
    slip = 1.0 - (1.0 - p) ** M
    return AllanResult(float(c2 / T**2 * _geometric_factor(p, M)), 0.0, "closedform", float(slip))


# -- dead time -----------------------------------------------------------------


def dick_sum(d, p, rtol=1e-10, k_max=2**27):
    """``sum_k sin^2(k pi d) / k^p`` with a rigorous truncation bound.

    The sum is split at ``K``: the tail of ``1/(2 k^p)`` is a Hurwitz zeta
    value and the oscillating tail is bounded by ``(K+1)^-p / (2|sin(pi d)|)``.
    ``K`` doubles until the bound is below ``rtol`` times the sum.

    Returns
    -------
    (value, bound)
    """
    if not 0 < d < 1:
        raise ParameterError("d must lie in (0, 1)")
    if d < 1e-12:
        raise ParameterError("d too small: sum diverges as d -> 0")
    sin_pd = abs(np.sin(np.pi * d))
    K, partial, done = 1024, 0.0, 0
    while True:
        for start in range(done + 1, K + 1, 1 << 20):
            k = np.arange(start, min(K, start + (1 << 20) - 1) + 1, dtype=float)
            partial += float(np.sum(np.sin(np.pi * d * k) ** 2 / k**p))
        done = K
        value = partial + 0.5 * float(special.zeta(p, K + 1))
        bound = 0.5 * (K + 1.0) ** (-p) / sin_pd
        if bound <= rtol * value or K >= k_max:
            return value, bound
        K *= 2


def dick_variance(model: NoiseModel, T, T_D, tau):
    """Allan variance added by aliasing of LO noise during dead time.

    ``(1/tau) sum_k S(k/T_C) sinc^2(k pi d)`` with ``d = T/T_C`` and the
    one-sided PSD ``S(f) = h / f**alpha`` of ``model``.  White noise uses the
    identity ``sum sin^2(k pi d)/(pi k)^2 = d(1-d)/2``.
    """
    if T_D < 0:
        raise ParameterError("T_D must be >= 0")
    if T_D == 0 or model.gamma == 0:
        return 0.0
    T_C = T + T_D
    d = T / T_C
    if model.alpha == 0:
        return model.h * (1.0 - d) / (2.0 * tau * d)
    value, _ = dick_sum(d, 3)
    return model.h * T_C * value / (np.pi**2 * d**2 * tau)


def semianalytic_allan(protocol, N, T, tau, noise, T_D=0.0, s=None, s_eps=0.0, slip_model=None):
    """Slip-weighted Allan variance plus the dead-time contribution.

    Parameters
    ----------
    protocol : Protocol or str
    N : int
        Atoms per ensemble.
    T, tau, T_D : float
        Ramsey time, averaging time and dead time in units of ``1/gamma``.
    noise : NoiseModel
    slip_model : SlipModel, optional
        Defaults to one built from ``noise`` and the protocol's ``ell``.
    """
    return allan_curve(protocol, N, [T], tau, noise, T_D, s, s_eps, slip_model)[0]


def allan_with_deadtime(protocol, N, T, T_D, tau, noise, **kwargs):
    """:func:`semianalytic_allan` with ``floor(tau/T_C)`` cycles and the Dick term."""
    return semianalytic_allan(protocol, N, T, tau, noise, T_D=T_D, **kwargs)


def allan_curve(protocol, N, T_grid, tau, noise, T_D=0.0, s=None, s_eps=0.0, slip_model=None, ell=None):
    """Semi-analytic Allan variance for each Ramsey time in ``T_grid``.

    ``T_D`` may be a scalar or an array matching ``T_grid``.
    """
    from .clock import inversion_half_width

    protocol = Protocol.parse(protocol)
    if protocol is Protocol.HYBRID and s is None:
        s = optimal_squeezing(N)
    if ell is None:
        ell = slip_model.ell if slip_model is not None else inversion_half_width(protocol, N)
    if slip_model is None:
        slip_model = SlipModel(noise, ell)
    T_grid = np.atleast_1d(np.asarray(T_grid, dtype=float))
    T_D = np.broadcast_to(np.asarray(T_D, dtype=float), T_grid.shape)
    pmfs = slip_model.pmfs(T_grid, tau, T_D)
    out = []
    for T, td, pmf in zip(T_grid, T_D, pmfs):
        c2 = c_T(protocol, N, float(noise.phase_variance(T)), ell, s, s_eps)
        base = allan_semianalytic(c2, pmf, T)
        dick = dick_variance(noise, T, td, tau)
        out.append(AllanResult(base.sigma2 + dick, 0.0, "semianalytic", base.slip_prob))
    return out


# -- optimum over T and stability gain -------------------------------------------


@dataclass(frozen=True)
class Knee:
    """Optimal Ramsey time and the Allan variance there."""

    T: float
    sigma2: float
    slip_prob: float
    index: int


def log_grid(lo, hi, per_decade=30):
    """Log-spaced grid with ``per_decade`` points per decade."""
    n = max(int(np.ceil(np.log10(hi / lo) * per_decade)) + 1, 3)
    return np.geomspace(lo, hi, n)


def find_knee(T_grid, sigma2, slip_prob=None):
    """First interior local minimum of ``sigma2(T)`` with parabolic refinement.

    At large ``T`` almost every run slips within one cycle and the slip-
    weighted variance drops towards zero, so the global minimum is not the
    operating point; the first local minimum is.  Raises :class:`GridError`
    if the curve decreases up to the last grid point or increases from the
    first.
    """
    T_grid = np.asarray(T_grid, dtype=float)
    y = np.log(np.asarray(sigma2, dtype=float))
    i = next((k for k in range(1, y.size - 1) if y[k] <= y[k - 1] and y[k] < y[k + 1]), None)
    if i is None:
        raise GridError("no interior minimum on the T grid; widen it")
    x = np.log(T_grid)
    x0, x1, x2 = x[i - 1 : i + 2]
    y0, y1, y2 = y[i - 1 : i + 2]
    den = (x0 - x1) * (x0 - x2) * (x1 - x2)
    a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / den
    b = (x2**2 * (y0 - y1) + x1**2 * (y2 - y0) + x0**2 * (y1 - y2)) / den
    if a > 0:
        xm = float(np.clip(-b / (2 * a), x0, x2))
        ym = float(a * (xm**2 - x1**2) + b * (xm - x1) + y1)
    else:
        xm, ym = x1, y1
    sp = float(np.asarray(slip_prob)[i]) if slip_prob is not None else float("nan")
    return Knee(float(np.exp(xm)), float(np.exp(ym)), sp, i)


@dataclass(frozen=True)
class GainResult:
    G: float
    knee_a: Knee
    knee_b: Knee


def stability_gain(protocol_a, protocol_b, N_total, tau, noise, T_grid, T_D_ratio=0.0, **kwargs):
    """Ratio of optimal Allan variances of two protocols at equal total atoms.

    ``G = min_T sigma2_a / min_T sigma2_b``, each protocol splitting
    ``N_total`` over its own ensembles.  ``T_D_ratio`` sets the dead time as a
    fraction of ``T``.
    """
    knees = []
    for proto in (protocol_a, protocol_b):
        knees.append(optimal_allan(proto, N_total, tau, noise, T_grid, T_D_ratio, **kwargs))
    return GainResult(knees[0].sigma2 / knees[1].sigma2, knees[0], knees[1])


def ensembles(protocol):
    return {Protocol.SINGLE: 1, Protocol.JOINT: 2, Protocol.HYBRID: 3}[Protocol.parse(protocol)]


def optimal_allan(protocol, N_total, tau, noise, T_grid, T_D_ratio=0.0, **kwargs):
    """Knee of the semi-analytic Allan curve for ``N_total`` atoms."""
    N = int(round(N_total / ensembles(protocol)))
    T_grid = np.asarray(T_grid, dtype=float)
    res = allan_curve(protocol, N, T_grid, tau, noise, T_D=T_D_ratio * T_grid, **kwargs)
    knee = find_knee(T_grid, [r.sigma2 for r in res])
    # slip probability jumps between grid points; evaluate it at the refined T
    at = allan_curve(protocol, N, [knee.T], tau, noise, T_D=T_D_ratio * knee.T, **kwargs)[0]
    return Knee(knee.T, knee.sigma2, at.slip_prob, knee.index)


# -- output ----------------------------------------------------------------------

CSV_COLUMNS = ["protocol", "noise", "gamma_T", "Td_over_T", "sigma2_scaled", "err", "route", "slip_prob"]


def write_allan_csv(rows, path):
    """Write rows of ``CSV_COLUMNS`` values; floats use ``%.12e``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for row in rows:
            w.writerow([f"{v:.12e}" if isinstance(v, float) else v for v in row])
