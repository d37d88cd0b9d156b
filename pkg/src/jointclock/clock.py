"""Monte-Carlo simulation of the LO frequency-feedback loop.

Each Ramsey cycle accumulates a phase ``theta_n`` on the corrected LO, the
atoms are read out, the phase is estimated and the LO frequency is corrected
by ``Theta_n / T`` before the next interrogation.  A run stops at the first
phase slip ``|theta_n| > ell``.

Noise model of the loop
-----------------------
The generated trace is the cycle-to-cycle change of the uncorrected LO
frequency.  Applying the corrections then leaves

    theta_n = phi_n + (theta_{n-1} - Theta_{n-1}),

where ``phi_n`` is the free-running phase of the trace over the n-th
interrogation window.  With white noise the ``theta_n`` are i.i.d. with
variance ``gamma*T``; with flicker noise they carry the long memory of the
trace.  The recorded offset is ``y_n = (theta_n + phi_n^D - Theta_n) / T``,
with ``phi_n^D`` the free-running phase over the dead time that follows the
interrogation (zero without dead time).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import streams
from .estimation import Protocol, theta_a, theta_c, theta_joint
from .noise import LOTrace, NoiseModel, generate
from .spin import (
    ParameterError,
    Sampling,
    SamplingMode,
    SpinProbe,
    moments_array,
    optimal_squeezing,
    sample_outcome,
    squeezed_input_moments,
)

_ENSEMBLES = {Protocol.SINGLE: 1, Protocol.JOINT: 2, Protocol.HYBRID: 3}


def inversion_half_width(protocol, N, n_fluct=None):
    """Half-width ``ell`` of the phase interval the estimator can invert.

    Parameters
    ----------
    protocol : Protocol or str
    N : int
        Atoms per ensemble (mean number when ``n_fluct`` is given).
    n_fluct : float, optional
        Standard deviation of the atom number.
    """
    protocol = Protocol.parse(protocol)
    if N < 1:
        raise ParameterError("N must be >= 1")
    if protocol is Protocol.SINGLE:
        return 0.5 * np.pi
    n_eff = N + 4.0 * n_fluct if n_fluct else N
    ell = np.pi - 4.0 / np.sqrt(n_eff)
    if ell <= 0:
        raise ParameterError(f"N = {N} too small: inversion half-width {ell:.3g} <= 0")
    return float(ell)


@dataclass(frozen=True)
class ClockConfig:
    """Parameters of one clock run.

    Times are in units of ``1/gamma``.  ``N`` is the atom number per ensemble
    (the mean when ``n_fluct`` is set).  ``ell`` defaults to
    :func:`inversion_half_width` and ``s`` (hybrid only) to the optimal
    squeezing for ``N``.  ``projection_noise=False`` replaces every readout by
    its expectation value; with ``gamma = 0`` this is the noiseless clock.
    """

    protocol: Protocol
    N: int
    T: float
    tau: float
    noise: NoiseModel
    T_D: float = 0.0
    ell: float | None = None
    s: float | None = None
    sampling: SamplingMode = field(default_factory=SamplingMode)
    n_fluct: float = 0.0
    s_eps: float = 0.0
    projection_noise: bool = True

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol.parse(self.protocol))
        if int(self.N) != self.N or self.N < 1:
            raise ParameterError("N must be a positive integer")
        object.__setattr__(self, "N", int(self.N))
        if not self.T > 0:
            raise ParameterError("T must be positive")
        if self.T_D < 0:
            raise ParameterError("T_D must be >= 0")
        if self.tau < 2 * (self.T + self.T_D) * (1 - 1e-12):
            raise ParameterError("tau must allow at least two cycles")
        if self.T_D > 0:
            ratio = self.T / self.T_D
            if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 1:
                raise ParameterError("T must be an integer multiple of T_D")
        if self.n_fluct < 0 or self.s_eps < 0:
            raise ParameterError("n_fluct and s_eps must be >= 0")
        if self.ell is None:
            object.__setattr__(
                self, "ell", inversion_half_width(self.protocol, self.N, self.n_fluct)
            )
        if not 0 < self.ell <= np.pi:
            raise ParameterError("ell must lie in (0, pi]")
        if self.protocol is Protocol.HYBRID and self.s is None:
            object.__setattr__(self, "s", optimal_squeezing(self.N))

    @property
    def T_C(self):
        return self.T + self.T_D

    @property
    def n_cycles(self):
        return int(np.floor(self.tau / self.T_C * (1 + 1e-12)))

    @property
    def N_total(self):
        return _ENSEMBLES[self.protocol] * self.N

    @property
    def steps_per_window(self):
        return 1 if self.T_D == 0 else int(round(self.T / self.T_D))

    @property
    def dt(self):
        return self.T if self.T_D == 0 else self.T_D

    @property
    def n_steps(self):
        stride = self.steps_per_window + (1 if self.T_D > 0 else 0)
        return self.n_cycles * stride

    def with_(self, **changes):
        """Copy with fields replaced; ``ell`` is recomputed unless given."""
        if "ell" not in changes and any(k in changes for k in ("protocol", "N", "n_fluct")):
            changes["ell"] = None
        if "s" not in changes and any(k in changes for k in ("protocol", "N")):
            changes["s"] = None
        return replace(self, **changes)


@dataclass(frozen=True)
class ClockRunResult:
    """One simulated run.

    ``y`` holds the offsets of the cycles completed without a slip.
    ``slip_cycle`` is the 1-based index of the slipped cycle, or ``None``.
    """

    y: np.ndarray
    slip_cycle: int | None
    cycles_run: int


@dataclass
class BlockResult:
    """Runs of one block, padded to ``n_cycles`` columns.

    ``y`` and ``theta`` are NaN after the last completed cycle.
    ``slip_cycle`` is 0 for runs without a slip.
    """

    y: np.ndarray
    theta: np.ndarray
    slip_cycle: np.ndarray
    n_good: np.ndarray

    def runs(self):
        out = []
        for row, sc, k in zip(self.y, self.slip_cycle, self.n_good):
            sc = int(sc)
            out.append(ClockRunResult(row[:k].copy(), sc or None, sc or int(k)))
        return out


def _coherent_draw(rng, N, p_up, gaussian, noisy=True):
    if not noisy:
        return N * (p_up - 0.5)
    if gaussian:
        return rng.normal(N * (p_up - 0.5), np.sqrt(N * p_up * (1.0 - p_up)))
    return rng.binomial(N, np.clip(p_up, 0.0, 1.0)) - 0.5 * N


def _trace_values(config, trace, n_reps):
    if trace is None:
        return None
    values = trace.values if isinstance(trace, LOTrace) else np.asarray(trace, dtype=float)
    values = np.broadcast_to(np.atleast_2d(values), (n_reps, values.shape[-1]))
    if values.shape[-1] < config.n_steps:
        raise ParameterError(f"trace has {values.shape[-1]} steps, {config.n_steps} needed")
    return values[:, : config.n_steps]


def simulate_block(rng, config: ClockConfig, n_reps, trace=None) -> BlockResult:
    """Simulate ``n_reps`` independent runs, vectorised over runs.

    ``trace`` (optional) replaces the generated noise; it must hold at least
    ``config.n_steps`` steps and is shared by all runs if one-dimensional.
    """
    R, n_cyc, m = int(n_reps), config.n_cycles, config.steps_per_window
    values = _trace_values(config, trace, R)
    if values is None:
        values = generate(rng, config.noise, config.dt, config.n_steps, R).values
    stride = m + (1 if config.T_D > 0 else 0)
    cycles = values.reshape(R, n_cyc, stride) * config.dt
    phi = cycles[..., :m].sum(axis=-1)
    phi_dead = cycles[..., m] if config.T_D > 0 else np.zeros((R, n_cyc))

    proto = config.protocol
    N = config.N
    coherent_gauss = config.sampling.mode is Sampling.GAUSSIAN
    noisy = config.projection_noise
    if proto is Protocol.HYBRID:
        squeezed = SpinProbe.squeezed(N, config.s)
        mean_jx = squeezed_input_moments(N, config.s)[0]

    y = np.full((R, n_cyc), np.nan)
    theta_log = np.full((R, n_cyc), np.nan)
    slip = np.zeros(R, dtype=np.int64)
    active = np.ones(R, dtype=bool)
    err = np.zeros(R)
    for n in range(n_cyc):
        theta = phi[:, n] + err
        slipped = active & (np.abs(theta) > config.ell)
        slip[slipped] = n + 1
        active &= ~slipped
        if not active.any():
            break
        if config.n_fluct > 0:
            Nn = np.maximum(np.rint(rng.normal(N, config.n_fluct, R)), 1.0).astype(np.int64)
        else:
            Nn = N
        mu_a = _coherent_draw(rng, Nn, 0.5 * (1.0 + np.sin(theta)), coherent_gauss, noisy)
        if proto is Protocol.SINGLE:
            est = theta_a(mu_a, Nn)
        else:
            tb = theta - rng.normal(0.0, config.s_eps, R) if config.s_eps > 0 else theta
            mu_b = _coherent_draw(rng, Nn, 0.5 * (1.0 + np.cos(tb)), coherent_gauss, noisy)
            est = theta_joint(mu_a, mu_b, Nn)
            if proto is Protocol.HYBRID:
                if noisy:
                    mu_c = sample_outcome(rng, squeezed, theta - est, config.sampling)
                else:
                    mu_c = moments_array(squeezed, theta - est)[0]
                est = est + theta_c(mu_c, mean_jx)
        err = theta - est
        theta_log[active, n] = theta[active]
        y[active, n] = (err[active] + phi_dead[active, n]) / config.T
    n_good = np.where(slip > 0, slip - 1, n_cyc)
    return BlockResult(y, theta_log, slip, n_good)


def run_clock(rng, config: ClockConfig, trace=None) -> ClockRunResult:
    """Simulate one run of the clock."""
    return simulate_block(rng, config, 1, trace).runs()[0]


def _block_job(job):
    seed, b, count, config, reducer = job
    res = simulate_block(streams.stream(seed, b), config, count)
    return reducer(res) if reducer is not None else res


def run_blocks(seed, config, n_reps, reducer=None, workers=1, block_size=streams.BLOCK_SIZE):
    """Simulate ``n_reps`` runs block by block and map ``reducer`` over blocks.

    Block ``b`` draws from sub-stream ``(seed, b)``, so the output depends
    only on ``seed``, ``n_reps`` and ``block_size``.  ``reducer`` must be a
    picklable function when ``workers > 1``.
    """
    if n_reps < 1:
        raise ParameterError("n_reps must be >= 1")
    jobs = [(seed, b, count, config, reducer) for b, _, count in streams.blocks(n_reps, block_size)]
    return streams.pmap(_block_job, jobs, workers)


def _to_runs(block):
    return block.runs()


def run_ensemble(seed, config: ClockConfig, n_reps, workers=1):
    """``n_reps`` independent runs, deterministic given ``seed``."""
    return [r for part in run_blocks(seed, config, n_reps, _to_runs, workers) for r in part]


def runs_to_csv(runs, path):
    """Write runs as ``rep,cycle,y,slipped`` rows (cycle is 1-based)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["rep", "cycle", "y", "slipped"])
        for rep, run in enumerate(runs):
            for n, yn in enumerate(run.y, start=1):
                w.writerow([rep, n, f"{yn:.12e}", 0])
            if run.slip_cycle is not None:
                w.writerow([rep, run.slip_cycle, "nan", 1])
