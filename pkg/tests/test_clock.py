import numpy as np
import pytest

from jointclock.allan import slip_p_white
from jointclock.clock import (
    ClockConfig,
    inversion_half_width,
    run_blocks,
    run_clock,
    run_ensemble,
    runs_to_csv,
    simulate_block,
)
from jointclock.noise import NoiseModel
from jointclock.spin import ParameterError
from jointclock.streams import stream


def _slip_fraction(block_list):
    slips = np.concatenate([b.slip_cycle for b in block_list])
    return np.mean(slips > 0), slips.size


def test_inversion_half_width_examples():
    assert inversion_half_width("single", 5) == pytest.approx(np.pi / 2)
    assert inversion_half_width("joint", 1000) == pytest.approx(3.0151, abs=1e-4)
    assert inversion_half_width("joint", 1000, 50) == pytest.approx(np.pi - 4 / np.sqrt(1200))
    assert inversion_half_width("hybrid", 100) == pytest.approx(np.pi - 0.4)
    with pytest.raises(ParameterError):
        inversion_half_width("joint", 1)
    with pytest.raises(ParameterError):
        inversion_half_width("joint", 0)


@pytest.mark.parametrize("protocol", ["single", "joint", "hybrid"])
def test_noiseless_clock_is_identically_zero(protocol):
    cfg = ClockConfig(protocol, 1000, 0.2, 10.0, NoiseModel.white(0.0), projection_noise=False)
    res = simulate_block(np.random.default_rng(0), cfg, 5)
    assert not res.slip_cycle.any()
    assert np.all(res.y == 0.0)
    assert np.all(res.theta == 0.0)


def test_projection_noise_alone_is_unbiased():
    cfg = ClockConfig("joint", 1000, 0.2, 40.0, NoiseModel.white(0.0))
    y = simulate_block(np.random.default_rng(1), cfg, 400).y
    assert abs(y.mean()) < 4 * y.std() / np.sqrt(y.size)


@pytest.fixture(scope="module")
def slip_runs():
    noise = NoiseModel.white(1.0)
    single = ClockConfig("single", 1000, 0.25, 100.0, noise)
    joint = single.with_(protocol="joint")
    return (
        single,
        run_blocks(11, single, 20000, reducer=None),
        run_blocks(12, joint, 20000, reducer=None),
    )


def test_single_slip_statistics_match_closed_form(slip_runs):
    cfg, blocks, _ = slip_runs
    frac, n = _slip_fraction(blocks)
    p = slip_p_white(cfg.T, 1.0, cfg.ell)
    assert p == pytest.approx(1.68e-3, rel=0.01)
    expect = 1 - (1 - p) ** cfg.n_cycles
    se = np.sqrt(expect * (1 - expect) / n)
    # the residual estimation error widens theta slightly: v = gamma*T + 1/N
    expect_resid = 1 - (1 - slip_p_white(cfg.T + 1 / cfg.N, 1.0, cfg.ell)) ** cfg.n_cycles
    assert abs(frac - expect) < 4 * se + abs(expect_resid - expect)


def test_joint_slips_less_than_single(slip_runs):
    _, single, joint = slip_runs
    assert _slip_fraction(joint)[0] < _slip_fraction(single)[0]


def test_stop_rule(slip_runs):
    _, blocks, _ = slip_runs
    b = blocks[0]
    for row, sc, k in zip(b.y, b.slip_cycle, b.n_good):
        assert np.all(np.isfinite(row[:k]))
        assert np.all(np.isnan(row[k:]))
        if sc:
            assert k == sc - 1
    runs = b.runs()
    assert all(r.cycles_run <= 400 for r in runs)
    assert all(r.slip_cycle is None or r.slip_cycle == r.cycles_run for r in runs)


def test_mean_offset_vanishes_without_slips(slip_runs):
    _, blocks, _ = slip_runs
    y = np.concatenate([b.y[b.slip_cycle == 0].ravel() for b in blocks])
    assert abs(y.mean()) < 3 * y.std() / np.sqrt(y.size)


def test_rigged_trace_feeds_identical_phase_to_both_ensembles():
    cfg = ClockConfig("joint", 10**6, 0.5, 5.0, NoiseModel.white(1.0))
    trace = np.full(cfg.n_steps, 0.4)
    res = simulate_block(np.random.default_rng(2), cfg, 4, trace=trace)
    # every run sees theta_1 = 0.4 * T, and later phases differ only by readout
    np.testing.assert_allclose(res.theta[:, 0], 0.2, rtol=0, atol=1e-15)
    assert np.all(np.abs(res.theta[:, 1:] - 0.2) < 5e-3)
    noiseless = cfg.with_(projection_noise=False)
    res = simulate_block(np.random.default_rng(2), noiseless, 2, trace=trace)
    np.testing.assert_allclose(res.theta, 0.2, atol=1e-12)
    np.testing.assert_allclose(res.y[:, 1:], 0.0, atol=1e-12)


def test_dead_time_alignment():
    cfg = ClockConfig("single", 10**6, 1.0, 6.0, NoiseModel.white(1.0), T_D=0.5, projection_noise=False)
    assert (cfg.steps_per_window, cfg.n_cycles, cfg.n_steps, cfg.dt) == (2, 4, 12, 0.5)
    trace = np.tile([0.1, 0.1, 0.6], cfg.n_cycles)
    res = simulate_block(np.random.default_rng(0), cfg, 1, trace=trace)
    np.testing.assert_allclose(res.theta[0], 0.1)
    # y carries the free-running dead-time phase 0.5 * 0.6
    np.testing.assert_allclose(res.y[0], 0.3)


def test_dead_time_path_reduces_to_plain_path():
    # silent dead-time steps and dyadic values make both paths bit-identical
    dead = ClockConfig("joint", 500, 1.0, 6.0, NoiseModel.white(1.0), T_D=0.5)
    plain = ClockConfig("joint", 500, 1.0, 4.0, NoiseModel.white(1.0))
    ab = np.random.default_rng(3).integers(-4, 5, size=(dead.n_cycles, 2)) / 8.0
    trace_dead = np.column_stack([ab, np.zeros(dead.n_cycles)]).ravel()
    trace_plain = ab.sum(axis=1) / 2
    a = simulate_block(np.random.default_rng(4), dead, 3, trace=trace_dead)
    b = simulate_block(np.random.default_rng(4), plain, 3, trace=trace_plain)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.theta, b.theta)


def test_single_run_and_determinism():
    cfg = ClockConfig("hybrid", 200, 0.2, 4.0, NoiseModel.flicker(1.0))
    one = run_clock(stream(5, 0), cfg)
    blk = run_ensemble(5, cfg, 1)[0]
    np.testing.assert_array_equal(one.y, blk.y)
    assert one.slip_cycle == blk.slip_cycle


def test_bit_reproducible_across_workers():
    cfg = ClockConfig("joint", 100, 0.3, 6.0, NoiseModel.flicker(1.0))
    a = run_ensemble(9, cfg, 1100, workers=1)
    b = run_ensemble(9, cfg, 1100, workers=3)
    assert len(a) == len(b) == 1100
    for ra, rb in zip(a, b):
        np.testing.assert_array_equal(ra.y, rb.y)
        assert ra.slip_cycle == rb.slip_cycle


def test_config_validation():
    noise = NoiseModel.white()
    with pytest.raises(ParameterError):
        ClockConfig("joint", 100, 0.0, 1.0, noise)
    with pytest.raises(ParameterError):
        ClockConfig("joint", 100, 1.0, 1.5, noise)
    with pytest.raises(ParameterError):
        ClockConfig("joint", 100, 1.0, 10.0, noise, T_D=0.3)
    with pytest.raises(ParameterError):
        ClockConfig("joint", 100, 1.0, 10.0, noise, ell=4.0)
    with pytest.raises(ParameterError):
        ClockConfig("joint", 10.5, 1.0, 10.0, noise)
    with pytest.raises(ValueError):
        ClockConfig("quad", 100, 1.0, 10.0, noise)
    cfg = ClockConfig("joint", 100, 1.0, 10.0, noise)
    assert cfg.n_cycles == 10 and cfg.N_total == 200
    assert cfg.with_(N=400).ell == pytest.approx(np.pi - 0.2)
    with pytest.raises(ParameterError):
        simulate_block(np.random.default_rng(), cfg, 1, trace=np.zeros(3))


def test_number_fluctuations_and_misalignment_run():
    cfg = ClockConfig("joint", 1000, 0.2, 10.0, NoiseModel.white(1.0), n_fluct=50, s_eps=0.05)
    assert cfg.ell == pytest.approx(np.pi - 4 / np.sqrt(1200))
    res = simulate_block(np.random.default_rng(0), cfg, 50)
    assert np.isfinite(res.y[:, 0]).all()


def test_csv_export(tmp_path):
    cfg = ClockConfig("single", 1000, 0.25, 2.0, NoiseModel.white(1.0))
    runs = run_ensemble(1, cfg, 3)
    p = tmp_path / "runs.csv"
    runs_to_csv(runs, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "rep,cycle,y,slipped"
    assert len(lines) == 1 + sum(len(r.y) + (r.slip_cycle is not None) for r in runs)
