"""Phase estimators and exact-sum evaluation of their error.

Single ensemble (arcsin), cosine ensemble (arccos), the joint two-ensemble
estimator that extends the inversion region to ``[-pi, pi]`` and the hybrid
estimator that refines the joint one with a squeezed third ensemble.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.interpolate import CubicSpline

from .spin import (
    ORACLE_MAX_N,
    ParameterError,
    SpinProbe,
    binomial_pmf,
    input_state,
    misaligned_pmf,
    optimal_squeezing,
    outcome_grid,
    rotation_x,
    squeezed_input_moments,
)


class Protocol(str, enum.Enum):
    SINGLE = "single"
    JOINT = "joint"
    HYBRID = "hybrid"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"a": cls.SINGLE, "ab": cls.JOINT, "abc": cls.HYBRID}
        key = str(value).lower()
        return aliases.get(key) or cls(key)


class Branch(enum.IntEnum):
    """Which case of the joint estimator produced the value."""

    PP = 0  # mu_a > 0, mu_b > 0
    PM = 1  # mu_a > 0, mu_b < 0
    MP = 2  # mu_a < 0, mu_b > 0
    MM = 3  # mu_a < 0, mu_b < 0
    ZERO_A_POS_B = 4
    ZERO_A_NEG_B = 5
    POS_A_ZERO_B = 6
    NEG_A_ZERO_B = 7
    ZERO_BOTH = 8
    SINGLE = 9


@dataclass(frozen=True)
class PhaseEstimate:
    value: float
    branch: Branch = Branch.SINGLE


@dataclass(frozen=True)
class ErrorProfile:
    theta: float
    bias: float
    variance: float
    mse: float


# -- vectorised estimators ---------------------------------------------------


def theta_a(mu, N):
    return np.arcsin(np.clip(2.0 * np.asarray(mu, dtype=float) / N, -1.0, 1.0))


def theta_b(mu, N):
    return np.arccos(np.clip(2.0 * np.asarray(mu, dtype=float) / N, -1.0, 1.0))


def theta_c(mu, mean_jx):
    if np.any(np.asarray(mean_jx) <= 0):
        raise ParameterError("<J_x> of the squeezed state must be positive")
    return np.arcsin(np.clip(np.asarray(mu, dtype=float) / mean_jx, -1.0, 1.0))


def joint_branch(mu_a, mu_b):
    a = np.sign(mu_a)
    b = np.sign(mu_b)
    conds = [
        (a > 0) & (b > 0),
        (a > 0) & (b < 0),
        (a < 0) & (b > 0),
        (a < 0) & (b < 0),
        (a == 0) & (b > 0),
        (a == 0) & (b < 0),
        (a > 0) & (b == 0),
        (a < 0) & (b == 0),
    ]
    return np.select(conds, list(range(8)), default=int(Branch.ZERO_BOTH))


def theta_joint(mu_a, mu_b, N):
    """Joint estimate from the sine (``mu_a``) and cosine (``mu_b``) ensembles.

    Vectorised; returns an array of phases in ``[-pi, pi]``.  If both results
    are exactly zero the estimate is 0.
    """
    ta = theta_a(mu_a, N)
    tb = theta_b(mu_b, N)
    branch = joint_branch(mu_a, mu_b)
    pi = np.pi
    table = np.stack(
        np.broadcast_arrays(
            0.5 * (ta + tb),
            0.5 * (pi - ta + tb),
            0.5 * (ta - tb),
            0.5 * (-pi - ta - tb),
            0.0,
            pi,
            0.5 * pi,
            -0.5 * pi,
            0.0,
        )
    )
    return np.take_along_axis(table, branch[None, ...], axis=0)[0]


# -- scalar API ----------------------------------------------------------------


def estimate_A(mu, N) -> PhaseEstimate:
    if N < 1:
        raise ParameterError("N must be >= 1")
    return PhaseEstimate(float(theta_a(mu, N)))


def estimate_B(mu, N) -> PhaseEstimate:
    if N < 1:
        raise ParameterError("N must be >= 1")
    return PhaseEstimate(float(theta_b(mu, N)))


def estimate_joint(mu_a, mu_b, N) -> PhaseEstimate:
    if N < 1:
        raise ParameterError("N must be >= 1")
    return PhaseEstimate(
        float(theta_joint(mu_a, mu_b, N)), Branch(int(joint_branch(mu_a, mu_b)))
    )


def estimate_C(mu_c, mean_jx) -> PhaseEstimate:
    return PhaseEstimate(float(theta_c(mu_c, mean_jx)))


def estimate_hybrid(mu_a, mu_b, mu_c, N, mean_jx) -> PhaseEstimate:
    """Joint estimate plus the squeezed-ensemble correction (not re-wrapped)."""
    joint = estimate_joint(mu_a, mu_b, N)
    return PhaseEstimate(joint.value + estimate_C(mu_c, mean_jx).value, joint.branch)


# -- exact-sum error evaluation -------------------------------------------------

_PRUNE = 1e-17
_QUAD_POINTS = 401
_QUAD_WIDTH = 6.0


def _support(p):
    keep = np.flatnonzero(p > _PRUNE * p.max())
    return keep, p[keep]


def _profile(theta, est, w):
    w = w / w.sum()
    mean = np.dot(w, est)
    variance = np.dot(w, (est - mean) ** 2)
    mse = np.dot(w, (est - theta) ** 2)
    return ErrorProfile(float(theta), float(mean - theta), float(variance), float(mse))


def _b_pmf(N, theta, s_eps):
    if s_eps > 0:
        return misaligned_pmf(N, theta, s_eps)
    return binomial_pmf(N, 0.5 * (1.0 + np.cos(theta)))


def _joint_table(theta, N, s_eps=0.0):
    """Support, weights and estimates of the joint estimator at ``theta``."""
    mu = outcome_grid(N)
    ia, pa = _support(binomial_pmf(N, 0.5 * (1.0 + np.sin(theta))))
    ib, pb = _support(_b_pmf(N, theta, s_eps))
    est = theta_joint(mu[ia][:, None], mu[ib][None, :], N)
    w = pa[:, None] * pb[None, :]
    return est.ravel(), w.ravel()


def third_stage_moments(theta_c_values, N, s, exact=None):
    """First two moments of the squeezed-ensemble estimate at rotation ``theta_c``.

    Returns ``(E[Theta_C], E[(Theta_C - theta_c)^2])``.  Exact outcome laws are
    used for ``N <= 64`` (or when ``exact`` is forced); otherwise a 401-point
    trapezoid over +-6 standard deviations of the Gaussian surrogate.
    """
    x = np.asarray(theta_c_values, dtype=float)
    mean_jx, var_jx, var_jy = squeezed_input_moments(N, s)
    if exact is None:
        exact = N <= ORACLE_MAX_N
    if exact:
        if N > ORACLE_MAX_N:
            raise ParameterError(f"exact third stage needs N <= {ORACLE_MAX_N}")
        mu = outcome_grid(N)
        psi = input_state(SpinProbe.squeezed(N, s))
        rot = rotation_x(N, 0.5 * np.pi)
        flat = x.reshape(-1)
        amp = rot @ (np.exp(-1j * np.outer(mu, flat)) * psi[:, None])
        p = np.abs(amp) ** 2
        p /= p.sum(axis=0)
        est = theta_c(mu, mean_jx)[:, None]
        m1 = (p * est).sum(axis=0)
        m2 = (p * (est - flat) ** 2).sum(axis=0)
        return m1.reshape(x.shape), m2.reshape(x.shape)
    z = np.linspace(-_QUAD_WIDTH, _QUAD_WIDTH, _QUAD_POINTS)
    wz = np.exp(-0.5 * z**2)
    wz[[0, -1]] *= 0.5
    wz /= wz.sum()
    flat = x.reshape(-1)
    m1 = np.empty_like(flat)
    m2 = np.empty_like(flat)
    for start in range(0, flat.size, 4096):
        t = flat[start : start + 4096, None]
        sd = np.sqrt(var_jy * np.cos(t) ** 2 + var_jx * np.sin(t) ** 2)
        est = theta_c(mean_jx * np.sin(t) + sd * z, mean_jx)
        m1[start : start + 4096] = est @ wz
        m2[start : start + 4096] = (est - t) ** 2 @ wz
    return m1.reshape(x.shape), m2.reshape(x.shape)


@lru_cache(maxsize=32)
def _third_stage_table(N, s, step=2e-4, half_width=2 * np.pi + 0.5):
    x = np.arange(-half_width, half_width + step, step)
    m1, m2 = third_stage_moments(x, N, s, exact=False)
    return CubicSpline(x, m1), CubicSpline(x, m2)


def _third_stage(tc, N, s):
    if N <= ORACLE_MAX_N:
        return third_stage_moments(tc, N, s, exact=True)
    f1, f2 = _third_stage_table(int(N), float(s))
    return f1(tc), f2(tc)


def error_profile(protocol, theta, N, s=None, s_eps=0.0) -> ErrorProfile:
    """Bias, variance and mean squared error of an estimator at fixed ``theta``.

    Computed by exact summation over the binomial outcome laws.  ``N`` is the
    number of atoms per ensemble.  For the hybrid protocol the squeezed stage
    is conditioned on ``theta - Theta_AB`` and ``s`` defaults to the optimal
    squeezing for ``N``.
    """
    protocol = Protocol.parse(protocol)
    if N < 1:
        raise ParameterError("N must be >= 1")
    theta = float(theta)
    if protocol is Protocol.SINGLE:
        mu = outcome_grid(N)
        idx, p = _support(binomial_pmf(N, 0.5 * (1.0 + np.sin(theta))))
        return _profile(theta, theta_a(mu[idx], N), p)
    est, w = _joint_table(theta, N, s_eps)
    if protocol is Protocol.JOINT:
        return _profile(theta, est, w)
    if s is None:
        s = optimal_squeezing(N)
    w = w / w.sum()
    tc = theta - est
    m1, m2 = _third_stage(tc, N, s)
    mean = np.dot(w, est + m1)
    # Theta_ABC - theta = Theta_C - theta_C
    mse = np.dot(w, m2)
    var_c = m2 - (m1 - tc) ** 2
    variance = np.dot(w, (est + m1 - mean) ** 2 + var_c)
    return ErrorProfile(theta, float(mean - theta), float(variance), float(mse))


def mse_curve(protocol, thetas, N, s=None, s_eps=0.0):
    """Mean squared error on a grid of phases."""
    return np.array([error_profile(protocol, t, N, s, s_eps).mse for t in np.ravel(thetas)])


def hybrid_mse_analytic(N, s):
    """Large-N hybrid mean squared error, neglecting bias of both stages."""
    x = 1.0 / (s**2 * N)
    return (4 * s**2 + (-np.expm1(-x)) ** 2) / (4 * N * np.exp(-0.5 * x))


def hybrid_mse_floor(N):
    """Asymptotic minimum over ``s`` of :func:`hybrid_mse_analytic`."""
    return 3.0 * 2.0 ** (-4.0 / 3.0) * N ** (-5.0 / 3.0)
