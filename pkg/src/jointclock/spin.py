"""Collective-spin probe states and their Ramsey measurement statistics.

Conventions: ``mu`` is the eigenvalue of J_z after the interferometer,
``mu = N_up - N/2``, so it runs over ``-N/2, ..., N/2`` in unit steps.  The
interferometer is ``exp(-i pi/2 J_x) exp(-i theta J_z)``, which maps
``J_z -> J_y cos(theta) + J_x sin(theta)``.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import linalg, stats
from scipy.special import gammaln

ORACLE_MAX_N = 64


class ParameterError(ValueError):
    """Invalid probe or estimator parameters."""


class UnsupportedModeError(ValueError):
    """The requested sampling mode is not available for this probe."""


class ProbeKind(str, enum.Enum):
    COHERENT_X = "coherent_x"
    COHERENT_Y = "coherent_y"
    MISALIGNED_Y = "misaligned_y"
    SQUEEZED = "squeezed"


@dataclass(frozen=True)
class SpinProbe:
    """Prepared state of one ensemble of ``N`` two-level atoms.

    Parameters
    ----------
    kind : ProbeKind
    N : int
        Number of atoms.
    s : float, optional
        Squeezing parameter, only for ``SQUEEZED``.  The J_y variance of the
        input state is ``s**2 N / 4``.
    s_eps : float, optional
        Standard deviation (radians) of the azimuthal misalignment, only for
        ``MISALIGNED_Y``.
    """

    kind: ProbeKind
    N: int
    s: float | None = None
    s_eps: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ProbeKind(self.kind))
        if int(self.N) != self.N or self.N < 1:
            raise ParameterError(f"N must be a positive integer, got {self.N!r}")
        object.__setattr__(self, "N", int(self.N))
        if self.kind is ProbeKind.SQUEEZED:
            if self.s is None or not self.s > 0:
                raise ParameterError("squeezed probe requires s > 0")
            if self.s**2 * self.N < 1:
                warnings.warn(
                    f"s^2 N = {self.s**2 * self.N:.3g} < 1: analytic squeezed "
                    "moments are outside their range of validity",
                    stacklevel=2,
                )
        if self.kind is ProbeKind.MISALIGNED_Y and not self.s_eps >= 0:
            raise ParameterError("s_eps must be >= 0")

    @classmethod
    def coherent_x(cls, N):
        return cls(ProbeKind.COHERENT_X, N)

    @classmethod
    def coherent_y(cls, N):
        return cls(ProbeKind.COHERENT_Y, N)

    @classmethod
    def misaligned_y(cls, N, s_eps):
        return cls(ProbeKind.MISALIGNED_Y, N, s_eps=s_eps)

    @classmethod
    def squeezed(cls, N, s):
        return cls(ProbeKind.SQUEEZED, N, s=s)


@dataclass(frozen=True)
class OutcomeMoments:
    mean: float
    variance: float


class Sampling(str, enum.Enum):
    EXACT = "exact"
    GAUSSIAN = "gaussian"
    AUTO = "auto"


@dataclass(frozen=True)
class SamplingMode:
    """Choice between the exact outcome law and its Gaussian surrogate.

    With ``mode="auto"`` the exact law is used up to ``threshold`` atoms and
    the Gaussian one above it.
    """

    mode: Sampling = Sampling.AUTO
    threshold: int = ORACLE_MAX_N

    def __post_init__(self):
        object.__setattr__(self, "mode", Sampling(self.mode))
        if self.threshold < 1:
            raise ParameterError("threshold must be >= 1")

    def resolve(self, N):
        if self.mode is Sampling.AUTO:
            return Sampling.EXACT if N <= self.threshold else Sampling.GAUSSIAN
        return self.mode


EXACT = SamplingMode(Sampling.EXACT)
GAUSSIAN = SamplingMode(Sampling.GAUSSIAN)


# -- analytic moments -------------------------------------------------------


def squeezed_input_moments(N, s):
    """Return ``(<J_x>, Var J_x, Var J_y)`` of the squeezed input state.

    Large-N closed forms, valid for ``s**2 N >~ 1``.
    """
    x = 1.0 / (s**2 * N)
    mean_jx = 0.5 * N * np.exp(-0.5 * x)
    var_jx = N**2 / 8.0 * (-np.expm1(-x)) ** 2
    var_jy = s**2 * N / 4.0
    return mean_jx, var_jx, var_jy


def _mixture_y_moments(N, theta, s_eps):
    # cos(theta - eps) with eps ~ N(0, s_eps^2)
    c1 = np.cos(theta) * np.exp(-0.5 * s_eps**2)
    c2 = 0.5 * (1.0 + np.cos(2 * theta) * np.exp(-2.0 * s_eps**2))
    mean = 0.5 * N * c1
    variance = 0.25 * N * (1.0 - c2) + 0.25 * N**2 * (c2 - c1**2)
    return mean, variance


def moments_array(probe: SpinProbe, theta):
    """Vectorised :func:`moments`: returns ``(mean, variance)`` arrays."""
    theta = np.asarray(theta, dtype=float)
    N = probe.N
    kind = probe.kind
    if kind is ProbeKind.COHERENT_X:
        return 0.5 * N * np.sin(theta), 0.25 * N * np.cos(theta) ** 2
    if kind is ProbeKind.COHERENT_Y:
        return 0.5 * N * np.cos(theta), 0.25 * N * np.sin(theta) ** 2
    if kind is ProbeKind.MISALIGNED_Y:
        return _mixture_y_moments(N, theta, probe.s_eps)
    mean_jx, var_jx, var_jy = squeezed_input_moments(N, probe.s)
    return (
        mean_jx * np.sin(theta),
        var_jy * np.cos(theta) ** 2 + var_jx * np.sin(theta) ** 2,
    )


def moments(probe: SpinProbe, theta: float) -> OutcomeMoments:
    """Mean and variance of J_z after the interferometer at phase ``theta``."""
    if not np.isfinite(theta):
        raise ParameterError("theta must be finite")
    mean, var = moments_array(probe, theta)
    return OutcomeMoments(float(mean), float(var))


# -- outcome laws -----------------------------------------------------------


@dataclass(frozen=True)
class DiscreteOutcome:
    """Probability mass ``p`` on the outcome grid ``mu``."""

    mu: np.ndarray
    p: np.ndarray

    def mean(self):
        return float(np.dot(self.p, self.mu))

    def var(self):
        m = self.mean()
        return float(np.dot(self.p, (self.mu - m) ** 2))

    def sample(self, rng, size=None):
        return rng.choice(self.mu, size=size, p=self.p)


@dataclass(frozen=True)
class GaussianOutcome:
    """Continuous Gaussian surrogate of the outcome law."""

    loc: float
    variance: float

    def mean(self):
        return self.loc

    def var(self):
        return self.variance

    def pdf(self, mu):
        return stats.norm.pdf(mu, self.loc, np.sqrt(self.variance))

    def sample(self, rng, size=None):
        return rng.normal(self.loc, np.sqrt(self.variance), size=size)


def outcome_grid(N):
    return np.arange(N + 1) - 0.5 * N


def binomial_pmf(N, p_up):
    """Binomial law over ``N_up = 0..N`` for each success probability.

    ``p_up`` may be an array; the outcome axis is appended last.
    """
    p_up = np.clip(np.asarray(p_up, dtype=float), 0.0, 1.0)
    k = np.arange(N + 1)
    return stats.binom.pmf(k, N, p_up[..., None])


def _up_probability(probe, theta):
    if probe.kind is ProbeKind.COHERENT_X:
        return 0.5 * (1.0 + np.sin(theta))
    return 0.5 * (1.0 + np.cos(theta))


def outcome_distribution(probe: SpinProbe, theta: float, mode: SamplingMode = SamplingMode()):
    """Law of the measurement result ``mu`` at phase ``theta``.

    Exact mode returns a :class:`DiscreteOutcome` (binomial for coherent
    probes, Gauss-Hermite mixture of binomials for the misaligned one, dense
    oracle for the squeezed one).  Gaussian mode returns a
    :class:`GaussianOutcome` with the analytic moments.
    """
    resolved = mode.resolve(probe.N)
    if resolved is Sampling.GAUSSIAN:
        m = moments(probe, theta)
        return GaussianOutcome(m.mean, m.variance)
    N = probe.N
    if probe.kind in (ProbeKind.COHERENT_X, ProbeKind.COHERENT_Y):
        p = binomial_pmf(N, _up_probability(probe, theta))
    elif probe.kind is ProbeKind.MISALIGNED_Y:
        p = misaligned_pmf(N, theta, probe.s_eps)
    else:
        if N > ORACLE_MAX_N:
            raise UnsupportedModeError(
                f"exact squeezed distribution needs N <= {ORACLE_MAX_N}, got {N}"
            )
        p = exact_rotation_oracle(probe, theta).p
    return DiscreteOutcome(outcome_grid(N), p)


def misaligned_pmf(N, theta, s_eps, nodes=41):
    """Exact law of the misaligned-y mixture, integrating over the tilt."""
    if s_eps == 0:
        return binomial_pmf(N, 0.5 * (1.0 + np.cos(theta)))
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    w = w / w.sum()
    theta = np.asarray(theta, dtype=float)
    pu = 0.5 * (1.0 + np.cos(theta[..., None] - s_eps * x))
    return np.einsum("...kn,k->...n", binomial_pmf(N, pu), w)


# -- dense oracle -----------------------------------------------------------


@lru_cache(maxsize=None)
def _jx_eigensystem(N):
    j = 0.5 * N
    m = np.arange(N + 1) - j
    # <m+1|J_x|m> = sqrt(j(j+1) - m(m+1)) / 2
    off = 0.5 * np.sqrt(j * (j + 1) - m[:-1] * (m[:-1] + 1))
    w, v = linalg.eigh_tridiagonal(np.zeros(N + 1), off)
    return w, v


def rotation_x(N, angle):
    """Matrix of ``exp(-i angle J_x)`` in the J_z eigenbasis (ascending m)."""
    w, v = _jx_eigensystem(N)
    return (v * np.exp(-1j * angle * w)) @ v.T


def _product_state(N, a, b):
    # symmetric state of N copies of a|up> + b|down>, indexed by m = N_up - N/2
    k = np.arange(N + 1)
    logc = 0.5 * (gammaln(N + 1) - gammaln(k + 1) - gammaln(N - k + 1))
    return np.exp(logc) * a ** k * b ** (N - k)


def input_state(probe: SpinProbe, eps: float = 0.0):
    """State vector of the probe in the J_z eigenbasis.

    For the misaligned probe ``eps`` selects one member of the mixture.
    """
    N = probe.N
    if N > ORACLE_MAX_N:
        raise UnsupportedModeError(f"dense oracle needs N <= {ORACLE_MAX_N}, got {N}")
    r = 1 / np.sqrt(2)
    if probe.kind is ProbeKind.COHERENT_X:
        return _product_state(N, r, r + 0j)
    if probe.kind in (ProbeKind.COHERENT_Y, ProbeKind.MISALIGNED_Y):
        phi = 0.5 * np.pi - eps
        return _product_state(N, r, r * np.exp(1j * phi))
    # Gaussian weights on J_y eigenstates |mu>_y = exp(i pi/2 J_x)|mu>_z
    mu = outcome_grid(N)
    g = np.exp(-(mu**2) / (probe.s**2 * N))
    g = g / np.linalg.norm(g)
    return rotation_x(N, -0.5 * np.pi) @ g


def exact_rotation_oracle(probe: SpinProbe, theta: float) -> DiscreteOutcome:
    """Outcome law from the full (N+1)-dimensional state-vector calculation.

    The misaligned probe is treated as a pure state with ``eps = 0``; use
    :func:`misaligned_pmf` for the mixture.
    """
    psi = input_state(probe)
    phase = np.exp(-1j * theta * outcome_grid(probe.N))
    amp = rotation_x(probe.N, 0.5 * np.pi) @ (phase * psi)
    return DiscreteOutcome(outcome_grid(probe.N), np.abs(amp) ** 2)


def oracle_input_moments(probe: SpinProbe):
    """``(<J_x>, Var J_x, Var J_y)`` of the input state, from the state vector."""
    psi = input_state(probe)
    N = probe.N
    j = 0.5 * N
    m = outcome_grid(N)
    off = 0.5 * np.sqrt(j * (j + 1) - m[:-1] * (m[:-1] + 1))
    jp = np.diag(2 * off, -1)  # J_+ : |m> -> |m+1>
    jx = 0.5 * (jp + jp.T)
    jy = -0.5j * (jp - jp.T)
    out = []
    for op in (jx, jy):
        e1 = np.vdot(psi, op @ psi).real
        e2 = np.vdot(psi, op @ (op @ psi)).real
        out.append((e1, e2 - e1**2))
    (mx, vx), (_, vy) = out
    return mx, vx, vy


def squeezing_coefficient(N, s):
    """Metrological squeezing ``N Var(J_y) / <J_x>^2`` from the analytic moments."""
    if not s > 0 or N < 1:
        raise ParameterError("need s > 0 and N >= 1")
    mean_jx, _, var_jy = squeezed_input_moments(N, s)
    return N * var_jy / mean_jx**2


def optimal_squeezing(N):
    """Squeezing parameter ``s`` with ``s**2 = (2 N**2)**(-1/3)``."""
    return (2.0 * N**2) ** (-1.0 / 6.0)


# -- sampling ---------------------------------------------------------------


def sample_outcome(rng, probe: SpinProbe, theta, mode: SamplingMode = SamplingMode()):
    """Draw measurement results at the phase(s) ``theta``.

    Vectorised over ``theta``.  Gaussian draws are returned unrounded.
    The misaligned probe draws a fresh tilt per element.
    """
    theta = np.asarray(theta, dtype=float)
    N = probe.N
    resolved = mode.resolve(N)
    kind = probe.kind
    if kind is ProbeKind.MISALIGNED_Y:
        eps = rng.normal(0.0, probe.s_eps, size=theta.shape) if probe.s_eps > 0 else 0.0
        theta = theta - eps
        kind = ProbeKind.COHERENT_Y
    if resolved is Sampling.GAUSSIAN:
        if kind is ProbeKind.SQUEEZED:
            mean, var = moments_array(probe, theta)
        else:
            mean, var = moments_array(SpinProbe(kind, N), theta)
        return rng.normal(mean, np.sqrt(var))
    if kind is ProbeKind.SQUEEZED:
        if N > ORACLE_MAX_N:
            raise UnsupportedModeError(
                f"exact squeezed sampling needs N <= {ORACLE_MAX_N}, got {N}"
            )
        flat = theta.reshape(-1)
        psi = input_state(probe)
        phases = np.exp(-1j * np.outer(outcome_grid(N), flat))
        amp = rotation_x(N, 0.5 * np.pi) @ (phases * psi[:, None])
        cdf = np.cumsum(np.abs(amp) ** 2, axis=0)
        u = rng.random(flat.shape) * cdf[-1]
        idx = (cdf < u).sum(axis=0)
        return (np.minimum(idx, N) - 0.5 * N).reshape(theta.shape)
    n_up = rng.binomial(N, np.clip(_up_probability(SpinProbe(kind, N), theta), 0.0, 1.0))
    return n_up - 0.5 * N
