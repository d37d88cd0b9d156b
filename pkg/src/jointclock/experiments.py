"""Named, reproducible experiments that write CSV tables and JSON sidecars.

Every experiment declares its parameters with defaults, runs from an
:class:`~jointclock.config.ExperimentSpec` and returns a table plus a small
summary.  :func:`run_experiment` writes ``<out>.csv`` and ``<out>.json``.
Allan variances are reported as ``sigma^2 * tau * N_t / gamma`` and times in
units of ``1/gamma``.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, streams
from .allan import (
    SlipModel,
    allan_curve,
    allan_white_closed,
    c_T,
    ensemble_allan,
    ensembles,
    find_knee,
    log_grid,
    scale_allan,
    white_plateau,
    slip_p_white,
)
from .clock import ClockConfig, inversion_half_width
from .config import ExperimentSpec
from .estimation import Protocol, error_profile
from .noise import (
    NoiseModel,
    calibrate_flicker,
    generate_ensemble,
    phase_variance,
    psd,
)


@dataclass(frozen=True)
class Param:
    default: object
    kind: type
    help: str = ""


@dataclass
class Output:
    columns: list
    rows: list
    summary: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Experiment:
    name: str
    help: str
    params: dict
    runner: object
    fast: dict = field(default_factory=dict)

    def declared(self):
        return {k: (p.default, p.kind) for k, p in self.params.items()}

    def resolve(self, spec: ExperimentSpec):
        values = {k: p.default for k, p in self.params.items()}
        if spec.fast:
            values.update(self.fast)
        values.update(spec.params)
        return values


REGISTRY: dict[str, Experiment] = {}


def register(name, help, params, fast=None):
    def deco(fn):
        REGISTRY[name] = Experiment(name, help, params, fn, fast or {})
        return fn

    return deco


# -- helpers ---------------------------------------------------------------------


def _noise(name):
    if name == "white":
        return NoiseModel.white(1.0)
    if name == "flicker":
        return NoiseModel.flicker(1.0)
    raise ValueError(f"noise must be 'white' or 'flicker', got {name!r}")


def _T_grid(p):
    return log_grid(p["T_min"], p["T_max"], p["per_decade"])


def _mc_allan(seed, key, protocol, N, T, tau, noise, reps, workers, **kw):
    cfg = ClockConfig(protocol, N, T, tau, noise, **kw)
    return ensemble_allan(streams.child_seed(seed, *key), cfg, reps, workers)


def _slip_model(noise, ell, p, seed):
    return SlipModel(noise, ell, n_realizations=p["slip_realizations"], seed=seed)


def _knee(protocol, N, p, noise, seed, T_D_ratio=0.0, **kw):
    grid = _T_grid(p)
    ell = inversion_half_width(protocol, N)
    sm = _slip_model(noise, ell, p, seed)
    res = allan_curve(protocol, N, grid, p["gamma_tau"], noise, T_D=T_D_ratio * grid, slip_model=sm, **kw)
    knee = find_knee(grid, [r.sigma2 for r in res])
    at = allan_curve(protocol, N, [knee.T], p["gamma_tau"], noise, T_D=T_D_ratio * knee.T, slip_model=sm, **kw)[0]
    return grid, res, knee, at.slip_prob, sm


def _fit_exponent(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


_T_PARAMS = {
    "T_min": Param(0.05, float, "smallest Ramsey time of the search grid"),
    "T_max": Param(3.0, float, "largest Ramsey time of the search grid"),
    "per_decade": Param(30, int, "grid points per decade of T"),
    "slip_realizations": Param(50_000, int, "noise realizations for the flicker slip law"),
}


# -- experiments -------------------------------------------------------------------


@register(
    "estimator-profile",
    "bias, variance and mean squared error of an estimator versus the phase",
    {
        "protocol": Param("joint", str, "single, joint or hybrid"),
        "N": Param(1000, int, "atoms per ensemble"),
        "n_theta": Param(401, int, "number of phases in [-theta_max, theta_max]"),
        "theta_max": Param(math.pi, float, "largest phase"),
        "s": Param(0.0, float, "squeezing parameter (hybrid); 0 selects the optimum"),
        "s_eps": Param(0.0, float, "alignment spread of the cosine ensemble"),
    },
    fast={"n_theta": 101},
)
def _estimator_profile(p, spec):
    thetas = np.linspace(-p["theta_max"], p["theta_max"], p["n_theta"])
    s = p["s"] or None
    rows = []
    for t in thetas:
        e = error_profile(p["protocol"], t, p["N"], s, p["s_eps"])
        rows.append([float(t), e.bias, e.variance, e.mse])
    return Output(["theta", "bias", "variance", "mse"], rows)


@register(
    "allan-vs-cycles",
    "Allan variance versus the number of cycles for white noise",
    {
        "protocol": Param("single", str, "single or joint"),
        "N": Param(1000, int, "atoms per ensemble"),
        "gamma_T": Param([0.12, 0.17, 0.25], list, "Ramsey times"),
        "tau_over_T": Param([2, 4, 10, 20, 40, 100, 200, 400], list, "cycle counts"),
    },
)
def _allan_vs_cycles(p, spec):
    noise = NoiseModel.white(1.0)
    proto = Protocol.parse(p["protocol"])
    Nt = ensembles(proto) * p["N"]
    rows, summary = [], {"plateau": {}}
    for i, gT in enumerate(p["gamma_T"]):
        gT = float(gT)
        ell = inversion_half_width(proto, p["N"])
        for j, r in enumerate(p["tau_over_T"]):
            tau = gT * float(r)
            mc = _mc_allan(spec.seed, (i, j), proto, p["N"], gT, tau, noise, spec.reps, spec.workers)
            cf = allan_white_closed(proto, p["N"], gT, tau, 1.0, ell)
            for res in (mc, cf):
                rows.append([
                    proto.value, "white", gT, float(r), res.route,
                    float(scale_allan(res.sigma2, tau, Nt)), float(scale_allan(res.err, tau, Nt)),
                    res.slip_prob,
                ])
        c2 = 1.0 / p["N"] if proto is Protocol.SINGLE else c_T(proto, p["N"], gT, ell)
        pl = float(c2 / gT**2 * white_plateau(float(slip_p_white(gT, 1.0, ell))))
        summary["plateau"][str(gT)] = {"sigma2": pl, "p": float(slip_p_white(gT, 1.0, ell))}
    cols = ["protocol", "noise", "gamma_T", "tau_over_T", "route", "sigma2_scaled", "err", "slip_prob"]
    return Output(cols, rows, summary)


@register(
    "allan-vs-T",
    "Allan variance versus Ramsey time, bending knee and stability gain",
    {
        "noise": Param("white", str, "white or flicker"),
        "Nt": Param(2000, int, "total atom number"),
        "gamma_tau": Param(100.0, float, "averaging time"),
        "protocols": Param(["single", "joint"], list, "protocols to compare"),
        "mc_per_decade": Param(6, int, "Monte-Carlo points per decade of T (0 disables)"),
        **_T_PARAMS,
    },
    fast={"mc_per_decade": 3, "slip_realizations": 10_000, "per_decade": 20},
)
def _allan_vs_T(p, spec):
    noise = _noise(p["noise"])
    tau = p["gamma_tau"]
    rows, knees = [], {}
    for k, name in enumerate(p["protocols"]):
        proto = Protocol.parse(name)
        N = p["Nt"] // ensembles(proto)
        grid, res, knee, pps, _ = _knee(proto, N, p, noise, streams.child_seed(spec.seed, 1000))
        knees[proto.value] = {"T": knee.T, "sigma2_scaled": float(scale_allan(knee.sigma2, tau, p["Nt"])), "slip_prob": pps}
        for T, r in zip(grid, res):
            rows.append([proto.value, noise.name, float(T), "semianalytic", float(scale_allan(r.sigma2, tau, p["Nt"])), 0.0, r.slip_prob])
        if p["mc_per_decade"] > 0:
            for j, T in enumerate(log_grid(p["T_min"], p["T_max"], p["mc_per_decade"])):
                mc = _mc_allan(spec.seed, (k, j), proto, N, float(T), tau, noise, spec.reps, spec.workers)
                rows.append([proto.value, noise.name, float(T), "empirical", float(scale_allan(mc.sigma2, tau, p["Nt"])), float(scale_allan(mc.err, tau, p["Nt"])), mc.slip_prob])
    summary = {"knees": knees}
    names = [Protocol.parse(n).value for n in p["protocols"]]
    if "single" in names:
        for other in names:
            if other != "single":
                summary[f"G_single_over_{other}"] = knees["single"]["sigma2_scaled"] / knees[other]["sigma2_scaled"]
    cols = ["protocol", "noise", "gamma_T", "route", "sigma2_scaled", "err", "slip_prob"]
    return Output(cols, rows, summary)


def _gain_at(p, noise, seed, T_D_ratio=0.0, s_eps=0.0):
    out = {}
    for proto in (Protocol.SINGLE, Protocol.JOINT):
        N = p["Nt"] // ensembles(proto)
        kw = {"s_eps": s_eps} if proto is Protocol.JOINT else {}
        _, _, knee, pps, _ = _knee(proto, N, p, noise, seed, T_D_ratio, **kw)
        out[proto] = (knee, pps)
    return out


@register(
    "misalignment-sweep",
    "stability gain versus alignment spread of the cosine ensemble",
    {
        "noise": Param("white", str, "white or flicker"),
        "Nt": Param(2000, int, "total atom number"),
        "gamma_tau": Param(100.0, float, "averaging time"),
        "s_eps": Param([0.0, 0.02, 0.04, 0.06, 0.1], list, "alignment spreads"),
        "mc": Param(True, bool, "also simulate at the semi-analytic optimum"),
        **_T_PARAMS,
    },
    fast={"s_eps": [0.0, 0.04], "slip_realizations": 10_000, "per_decade": 20},
)
def _misalignment(p, spec):
    noise = _noise(p["noise"])
    tau, Nt = p["gamma_tau"], p["Nt"]
    seed = streams.child_seed(spec.seed, 1000)
    rows = []
    _, _, single, _, _ = _knee(Protocol.SINGLE, Nt, p, noise, seed)
    for i, se in enumerate(p["s_eps"]):
        se = float(se)
        _, _, joint, pps, _ = _knee(Protocol.JOINT, Nt // 2, p, noise, seed, s_eps=se)
        rows.append([se, "semianalytic", single.T, joint.T, float(scale_allan(single.sigma2, tau, Nt)), float(scale_allan(joint.sigma2, tau, Nt)), single.sigma2 / joint.sigma2, pps])
        if p["mc"]:
            a = _mc_allan(spec.seed, (0, i), Protocol.SINGLE, Nt, single.T, tau, noise, spec.reps, spec.workers)
            b = _mc_allan(spec.seed, (1, i), Protocol.JOINT, Nt // 2, joint.T, tau, noise, spec.reps, spec.workers, s_eps=se)
            rows.append([se, "empirical", single.T, joint.T, float(scale_allan(a.sigma2, tau, Nt)), float(scale_allan(b.sigma2, tau, Nt)), a.sigma2 / b.sigma2, b.slip_prob])
    cols = ["s_eps", "route", "T_single", "T_joint", "sigma2_single", "sigma2_joint", "G", "slip_prob_joint"]
    return Output(cols, rows)


def _crossing(x, G):
    x, G = np.asarray(x, float), np.asarray(G, float)
    for i in range(len(x) - 1):
        if (G[i] - 1) * (G[i + 1] - 1) <= 0 and G[i] != G[i + 1]:
            lx = np.log(x[i]) + (1 - G[i]) / (G[i + 1] - G[i]) * (np.log(x[i + 1]) - np.log(x[i]))
            return float(np.exp(lx))
    return None


def deadtime_gain(noise, Nt, tau, ratios, T_grid, slip_realizations=50_000, seed=0):
    """Gain versus dead-time fraction, each protocol at its dead-time-free optimum.

    Returns ``(ratios, G, sigma2_single, sigma2_joint, knees)``.
    """
    p = {"T_min": T_grid[0], "T_max": T_grid[-1], "per_decade": 30, "slip_realizations": slip_realizations, "gamma_tau": tau, "Nt": Nt}
    sig = {}
    knees = _gain_at(p, noise, seed)
    for proto, (knee, _) in knees.items():
        N = Nt // ensembles(proto)
        sm = _slip_model(noise, inversion_half_width(proto, N), p, seed)
        sig[proto] = np.array([
            allan_curve(proto, N, [knee.T], tau, noise, T_D=r * knee.T, slip_model=sm)[0].sigma2 for r in ratios
        ])
    G = sig[Protocol.SINGLE] / sig[Protocol.JOINT]
    return np.asarray(ratios, float), G, sig[Protocol.SINGLE], sig[Protocol.JOINT], knees


@register(
    "deadtime-sweep",
    "stability gain versus dead time, each protocol at its dead-time-free optimum",
    {
        "noise": Param("white", str, "white or flicker"),
        "Nt": Param(2000, int, "total atom number"),
        "gamma_tau": Param(100.0, float, "averaging time"),
        "ratios": Param([float(r) for r in np.geomspace(1e-3, 1.0, 13)], list, "dead time over Ramsey time"),
        "mc_ratios": Param([1.0, 0.5, 0.2, 0.1], list, "ratios simulated by Monte Carlo (1/ratio must be an integer)"),
        **_T_PARAMS,
    },
    fast={"mc_ratios": [1.0, 0.2], "slip_realizations": 10_000},
)
def _deadtime(p, spec):
    noise = _noise(p["noise"])
    tau, Nt = p["gamma_tau"], p["Nt"]
    ratios = [float(r) for r in p["ratios"]]
    seed = streams.child_seed(spec.seed, 1000)
    r, G, sa, sb, knees = deadtime_gain(noise, Nt, tau, ratios, [p["T_min"], p["T_max"]], p["slip_realizations"], seed)
    rows = [[float(x), "semianalytic", float(scale_allan(a, tau, Nt)), float(scale_allan(b, tau, Nt)), float(g)] for x, a, b, g in zip(r, sa, sb, G)]
    Ts, Tj = knees[Protocol.SINGLE][0].T, knees[Protocol.JOINT][0].T
    for i, x in enumerate(p["mc_ratios"]):
        x = float(x)
        a = _mc_allan(spec.seed, (0, i), Protocol.SINGLE, Nt, Ts, tau, noise, spec.reps, spec.workers, T_D=x * Ts)
        b = _mc_allan(spec.seed, (1, i), Protocol.JOINT, Nt // 2, Tj, tau, noise, spec.reps, spec.workers, T_D=x * Tj)
        rows.append([x, "empirical", float(scale_allan(a.sigma2, tau, Nt)), float(scale_allan(b.sigma2, tau, Nt)), a.sigma2 / b.sigma2])
    summary = {"T_single": Ts, "T_joint": Tj, "G_equals_1_at": _crossing(r, G)}
    return Output(["Td_over_T", "route", "sigma2_single", "sigma2_joint", "G"], rows, summary)


@register(
    "hybrid-scaling",
    "optimal Allan variance versus total atom number for the three protocols",
    {
        "noise": Param("flicker", str, "white or flicker"),
        "gamma_tau": Param(100.0, float, "averaging time"),
        "Nt": Param([300, 480, 750, 1200, 1920, 3000], list, "total atom numbers"),
        "protocols": Param(["single", "joint", "hybrid"], list, "protocols"),
        "mc": Param(True, bool, "also simulate at the semi-analytic optimum"),
        **_T_PARAMS,
    },
    fast={"Nt": [300, 1200, 3000], "slip_realizations": 10_000, "per_decade": 20},
)
def _hybrid_scaling(p, spec):
    noise = _noise(p["noise"])
    tau = p["gamma_tau"]
    seed = streams.child_seed(spec.seed, 1000)
    rows, summary = [], {"exponent": {}}
    for k, name in enumerate(p["protocols"]):
        proto = Protocol.parse(name)
        sa, mc = [], []
        for i, Nt in enumerate(p["Nt"]):
            Nt = int(Nt)
            N = Nt // ensembles(proto)
            _, _, knee, pps, _ = _knee(proto, N, p, noise, seed)
            sa.append(knee.sigma2)
            rows.append([proto.value, Nt, "semianalytic", knee.T, float(scale_allan(knee.sigma2, tau, Nt)), 0.0, pps])
            if p["mc"]:
                m = _mc_allan(spec.seed, (k, i), proto, N, knee.T, tau, noise, spec.reps, spec.workers)
                mc.append(m.sigma2)
                rows.append([proto.value, Nt, "empirical", knee.T, float(scale_allan(m.sigma2, tau, Nt)), float(scale_allan(m.err, tau, Nt)), m.slip_prob])
        Nts = np.array(p["Nt"], float)
        summary["exponent"][proto.value] = {"semianalytic": _fit_exponent(Nts, sa)}
        if mc:
            summary["exponent"][proto.value]["empirical"] = _fit_exponent(Nts, mc)
    cols = ["protocol", "Nt", "route", "gamma_T", "sigma2_scaled", "err", "slip_prob"]
    return Output(cols, rows, summary)


@register(
    "noise-validation",
    "phase variance, spectrum and first-slip law of synthesized LO noise",
    {
        "noise": Param("flicker", str, "white or flicker"),
        "n_steps": Param(1000, int, "trace length"),
        "n_traces": Param(10_000, int, "number of traces"),
        "gamma_dt": Param(0.01, float, "time step"),
        "gamma_T": Param([0.3, 0.45], list, "Ramsey times for the first-slip law"),
        "gamma_tau": Param(100.0, float, "averaging time for the first-slip law"),
        "ell": Param(math.pi / 2, float, "inversion half-width for the first-slip law"),
        "slip_realizations": Param(50_000, int, "noise realizations for the flicker slip law"),
    },
    fast={"n_traces": 2000, "slip_realizations": 10_000},
)
def _noise_validation(p, spec):
    noise = _noise(p["noise"])
    traces = generate_ensemble(spec.seed, noise, p["gamma_dt"], p["n_steps"], p["n_traces"], spec.workers)
    t, v2 = phase_variance(traces)
    f, S = psd(traces)
    rows = [["phase_variance", float(a), float(b)] for a, b in zip(t, v2)]
    rows += [["psd", float(a), float(b)] for a, b in zip(f, S)]
    summary = {}
    if noise.alpha == 1:
        cal = calibrate_flicker(traces)
        summary = {"chi": cal.chi, "gamma_fit": cal.gamma, "h_fit": cal.h, "psd_slope": cal.slope, "r2": cal.r2}
    sm = SlipModel(noise, p["ell"], p["slip_realizations"], streams.child_seed(spec.seed, 1000), spec.workers)
    for gT in p["gamma_T"]:
        pmf = sm.pmf(float(gT), p["gamma_tau"])
        rows += [[f"slip_pmf_gT={float(gT):g}", float(n), float(x)] for n, x in enumerate(pmf.P, start=1)]
    return Output(["quantity", "x", "value"], rows, summary)


# -- running and writing ---------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "%.12e" % v
    return str(v)


def write_csv(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x) if np.isfinite(x) else str(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def run_experiment(spec: ExperimentSpec):
    """Run ``spec`` and write ``<out>.csv`` plus ``<out>.json``.

    Returns the CSV path and the :class:`Output`.
    """
    exp = REGISTRY[spec.name]
    params = exp.resolve(spec)
    out = Path(spec.out or f"{spec.name}.csv")
    if out.suffix != ".csv":
        out = out.with_suffix(out.suffix + ".csv") if out.suffix else out.with_suffix(".csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    started = _dt.datetime.now(_dt.timezone.utc)
    t0 = time.perf_counter()
    result = exp.runner(params, spec)
    runtime = time.perf_counter() - t0
    write_csv(out, result.columns, result.rows)
    sidecar = {
        "experiment": spec.name,
        "params": params,
        "seed": spec.seed,
        "reps": spec.reps,
        "workers": spec.workers,
        "fast": spec.fast,
        "version": __version__,
        "started": started.isoformat(),
        "runtime_s": runtime,
        "results": result.summary,
    }
    with open(out.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(_jsonable(sidecar), fh, indent=2, sort_keys=True)
    return out, result
