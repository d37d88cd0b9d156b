"""Local-oscillator frequency noise: synthesis, calibration and phase windows.

Traces hold the fractional frequency offset of the free-running LO per time
step.  Times are in units of ``1/gamma`` (the dephasing rate) and ``omega_0``
is absorbed into the values, so the phase accumulated over a window is simply
``dt * sum(values)``.

White noise has i.i.d. Gaussian steps with variance ``gamma / dt`` so that the
phase variance grows as ``gamma * t``.  Flicker (1/f) noise is synthesised by
convolving white innovations with the fractional-integration kernel
``h_0 = 1, h_k = h_{k-1} (k - 1 + alpha/2) / k``.  With innovation variance
``pi * gamma**2 / 2`` the phase variance approaches ``(gamma * t)**2`` and the
one-sided PSD approaches ``h / f`` with ``h = gamma**2 / 2``.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .spin import ParameterError

DEFAULT_CHI = 1.4
MIN_TRACES = 100


class CalibrationError(RuntimeError):
    """Raised when a calibration fit does not describe the data."""


class StatisticsWarning(UserWarning):
    """Too few realizations for the requested statistic."""


@dataclass(frozen=True)
class NoiseModel:
    """Power-law LO noise ``S(f) = h / f**alpha``.

    Parameters
    ----------
    alpha : int
        0 for white frequency noise, 1 for flicker.
    gamma : float
        Dephasing rate.  Sets the phase-variance law, ``gamma*T`` (white) or
        ``(gamma*T)**2`` (flicker).  Zero gives a noiseless LO.
    chi : float
        Flicker constant linking ``gamma**2 = 2 * chi * log(2) * h``.
    """

    alpha: int
    gamma: float
    chi: float = DEFAULT_CHI

    def __post_init__(self):
        if self.alpha not in (0, 1):
            raise ParameterError("alpha must be 0 (white) or 1 (flicker)")
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise ParameterError("gamma must be finite and >= 0")
        if not self.chi > 0:
            raise ParameterError("chi must be positive")

    @classmethod
    def white(cls, gamma=1.0):
        return cls(0, float(gamma))

    @classmethod
    def flicker(cls, gamma=1.0, chi=DEFAULT_CHI):
        return cls(1, float(gamma), float(chi))

    @classmethod
    def from_h(cls, alpha, h, chi=DEFAULT_CHI):
        """Model with PSD prefactor ``h`` (``omega_0 = 1``)."""
        if h < 0:
            raise ParameterError("h must be >= 0")
        if alpha == 0:
            return cls(0, h / 2.0, chi)
        return cls(1, float(np.sqrt(2.0 * chi * np.log(2.0) * h)), chi)

    @property
    def name(self):
        return "white" if self.alpha == 0 else "flicker"

    @property
    def h(self):
        """PSD prefactor implied by ``gamma``."""
        if self.alpha == 0:
            return 2.0 * self.gamma
        return self.gamma**2 / (2.0 * self.chi * np.log(2.0))

    def phase_variance(self, T):
        """Variance of the free-running phase accumulated over time ``T``."""
        gt = self.gamma * np.asarray(T, dtype=float)
        return gt if self.alpha == 0 else gt**2


@dataclass(frozen=True)
class LOTrace:
    """Fractional frequency offsets on a regular grid.

    ``values`` has time on the last axis; a 2-D array holds one trace per row.
    """

    dt: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(values)):
            raise ParameterError("trace values must be finite")
        object.__setattr__(self, "values", values)

    @property
    def n_steps(self):
        return self.values.shape[-1]

    @property
    def n_traces(self):
        return 1 if self.values.ndim == 1 else self.values.shape[0]

    def times(self):
        return self.dt * np.arange(1, self.n_steps + 1)

    def phase(self):
        """Accumulated phase at the end of each step."""
        return self.dt * np.cumsum(self.values, axis=-1)

    def to_csv(self, path):
        """Write a single trace as ``step,value`` rows."""
        if self.values.ndim != 1:
            raise ParameterError("CSV export handles a single trace")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "value"])
            for k, v in enumerate(self.values):
                w.writerow([k, f"{v:.12e}"])


def flicker_kernel(n, alpha=1.0):
    """First ``n`` coefficients of ``(1 - z)**(-alpha/2)``."""
    k = np.arange(1, n)
    return np.concatenate(([1.0], np.cumprod((k - 1 + 0.5 * alpha) / k)))


def generate(rng, model, dt, n_steps, n_traces=None) -> LOTrace:
    """Synthesize LO noise.

    Parameters
    ----------
    rng : numpy.random.Generator
    model : NoiseModel
    dt : float
        Step duration in units of ``1/gamma``.
    n_steps : int
    n_traces : int, optional
        Number of independent traces; ``None`` returns a 1-D trace.

    Returns
    -------
    LOTrace
    """
    if n_steps < 1:
        raise ParameterError("n_steps must be >= 1")
    if not dt > 0:
        raise ParameterError("dt must be positive")
    shape = (n_steps,) if n_traces is None else (int(n_traces), n_steps)
    if model.gamma == 0:
        return LOTrace(dt, np.zeros(shape))
    if model.alpha == 0:
        return LOTrace(dt, rng.normal(0.0, np.sqrt(model.gamma / dt), shape))
    w = rng.normal(0.0, model.gamma * np.sqrt(0.5 * np.pi), shape)
    kern = flicker_kernel(n_steps)
    if n_traces is not None:
        kern = kern[None, :]
    values = signal.fftconvolve(w, kern, axes=-1)[..., :n_steps]
    return LOTrace(dt, values)


def _as_traces(traces):
    if isinstance(traces, LOTrace):
        return traces.dt, np.atleast_2d(traces.values)
    raise ParameterError("expected an LOTrace")


def _check_count(n):
    if n < MIN_TRACES:
        warnings.warn(
            f"only {n} traces; at least {MIN_TRACES} are needed for stable statistics",
            StatisticsWarning,
            stacklevel=3,
        )


def phase_variance(traces):
    """Ensemble second moment of the accumulated phase.

    Returns ``(t, v2)`` with ``t = dt, 2 dt, ...``.  The mean is not removed:
    the phase of an unbiased LO has zero mean, and a deterministic offset
    shows up as ``(c t)**2``.
    """
    dt, x = _as_traces(traces)
    _check_count(x.shape[0])
    theta = dt * np.cumsum(x, axis=-1)
    return dt * np.arange(1, x.shape[1] + 1), np.mean(theta**2, axis=0)


def psd(traces):
    """One-sided periodogram averaged over realizations.

    Returns ``(f, S)`` without the zero-frequency bin.  No window and no
    detrending are applied.
    """
    dt, x = _as_traces(traces)
    _check_count(x.shape[0])
    f, p = signal.periodogram(
        x, fs=1.0 / dt, window="boxcar", detrend=False, scaling="density", axis=-1
    )
    return f[1:], p.mean(axis=0)[1:]


def _central_band(f, decades=1.0):
    lf = np.log10(f)
    mid = 0.5 * (lf[0] + lf[-1])
    return np.abs(lf - mid) <= 0.5 * decades


def psd_slope(f, S, decades=1.0):
    """Log-log slope of ``S(f)`` over the central ``decades`` of frequency."""
    m = _central_band(f, decades) & (S > 0)
    if m.sum() < 2:
        raise CalibrationError("not enough positive PSD bins for a slope fit")
    return float(np.polyfit(np.log(f[m]), np.log(S[m]), 1)[0])


def fit_h(f, S, alpha=1, decades=1.0):
    """Prefactor ``h`` of ``S = h / f**alpha`` fitted in log space."""
    m = _central_band(f, decades) & (S > 0)
    if not m.any():
        raise CalibrationError("no positive PSD bins to fit")
    return float(np.exp(np.mean(np.log(S[m] * f[m] ** alpha))))


@dataclass(frozen=True)
class FlickerCalibration:
    gamma: float
    h: float
    chi: float
    slope: float
    r2: float


def calibrate_flicker(traces, decades=2.0):
    """Fit ``gamma`` from the phase variance and ``h`` from the PSD.

    ``gamma`` comes from a least-squares fit of ``log v2 = 2 log(gamma t)``
    over the middle ``decades`` of ``t``.  The fit quality is the coefficient
    of determination in log space; below 0.95 a :class:`CalibrationError` is
    raised.
    """
    t, v2 = phase_variance(traces)
    m = _central_band(t, decades) & (v2 > 0)
    if m.sum() < 3:
        raise CalibrationError("phase variance vanishes in the fit window")
    y = np.log(v2[m])
    x = 2.0 * np.log(t[m])
    log_g2 = np.mean(y - x)
    resid = y - x - log_g2
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 0.0
    if r2 < 0.95:
        raise CalibrationError(f"phase variance is not quadratic in t (R^2 = {r2:.3f})")
    gamma = float(np.exp(0.5 * log_g2))
    f, S = psd(traces)
    h = fit_h(f, S, alpha=1)
    chi = gamma**2 / (2.0 * np.log(2.0) * h)
    return FlickerCalibration(gamma, h, float(chi), psd_slope(f, S), float(r2))


def fit_chi(traces, gamma_target=None, rtol=0.1):
    """Flicker constant ``chi`` from a set of traces.

    If ``gamma_target`` is given, the fitted ``gamma`` must agree with it
    within ``rtol``; otherwise a :class:`CalibrationError` is raised.
    """
    cal = calibrate_flicker(traces)
    if gamma_target is not None and abs(cal.gamma / gamma_target - 1.0) > rtol:
        raise CalibrationError(
            f"fitted gamma {cal.gamma:.4g} differs from target {gamma_target:.4g}"
        )
    return cal.chi


def window_phase(trace, start_step, n_window):
    """Phase accumulated over ``n_window`` steps starting at ``start_step``."""
    values = trace.values if isinstance(trace, LOTrace) else np.asarray(trace)
    dt = trace.dt if isinstance(trace, LOTrace) else 1.0
    n = values.shape[-1]
    if start_step < 0 or n_window < 0 or start_step + n_window > n:
        raise ParameterError(
            f"window [{start_step}, {start_step + n_window}) outside trace of length {n}"
        )
    return dt * np.sum(values[..., start_step : start_step + n_window], axis=-1)


def window_phases(trace, n_window):
    """Phases over consecutive disjoint windows of ``n_window`` steps."""
    values = trace.values
    n = values.shape[-1] // n_window
    blocks = values[..., : n * n_window].reshape(values.shape[:-1] + (n, n_window))
    return trace.dt * blocks.sum(axis=-1)


def generate_ensemble(seed, model, dt, n_steps, n_traces, workers=1):
    """Traces drawn block-wise from independent sub-streams of ``seed``."""
    from .streams import blocks, pmap

    jobs = [(seed, b, model, dt, n_steps, count) for b, _, count in blocks(n_traces)]
    parts = pmap(_ensemble_block, jobs, workers)
    return LOTrace(dt, np.concatenate(parts, axis=0))


def _ensemble_block(job):
    from .streams import stream

    seed, b, model, dt, n_steps, count = job
    return generate(stream(seed, b), model, dt, n_steps, count).values
