import numpy as np
import pytest
from scipy import special

from jointclock.allan import (
    AllanResult,
    GridError,
    SlipModel,
    allan_curve,
    allan_semianalytic,
    allan_white_closed,
    c_T,
    dick_sum,
    dick_variance,
    empirical_allan,
    empirical_pmf,
    ensemble_allan,
    find_knee,
    geometric_pmf,
    log_grid,
    optimal_allan,
    scale_allan,
    slip_p_white,
    total_slip_probability,
    two_sample_rows,
    two_sample_variance,
    white_plateau,
    write_allan_csv,
)
from jointclock.clock import ClockConfig, inversion_half_width
from jointclock.estimation import hybrid_mse_floor
from jointclock.noise import NoiseModel, StatisticsWarning
from jointclock.spin import ParameterError

ZETA3 = float(special.zeta(3))


def test_two_sample_examples():
    assert two_sample_variance(np.full(10, 3.0)) == 0.0
    a, K = 0.7, 12
    y = a * (-1.0) ** np.arange(K)
    assert two_sample_variance(y) == pytest.approx(2 * a**2 / K)
    assert two_sample_variance([1.0]) == 0.0
    rows = np.array([y, np.r_[y[:5], np.full(K - 5, np.nan)]])
    np.testing.assert_allclose(two_sample_rows(rows, [K, 5]), [2 * a**2 / K, 2 * a**2 / 5])
    res = empirical_allan([y, np.full(4, 1.0)], slipped=[False, True])
    assert res.sigma2 == pytest.approx(a**2 / K)
    assert res.slip_prob == 0.5 and res.route == "empirical"


def test_allan_result_validation():
    with pytest.raises(ParameterError):
        AllanResult(-1.0, 0.0, "empirical", 0.0)


def test_slip_probability_white():
    assert slip_p_white(0.25, 1.0, np.pi / 2) == pytest.approx(1.68e-3, rel=2e-3)
    assert slip_p_white(0.25, 0.0, np.pi / 2) == 0.0


def test_geometric_pmf_examples():
    pmf = geometric_pmf(0.5, 3)
    np.testing.assert_allclose(pmf.P, [0.5, 0.25, 0.125])
    assert pmf.Q == pytest.approx(0.125)
    pmf = geometric_pmf(0.0, 5)
    assert pmf.Q == 1.0 and not pmf.P.any()
    with pytest.raises(ParameterError):
        geometric_pmf(1.5, 3)


@pytest.mark.parametrize("p", [0.0, 1e-4, 0.01, 0.3, 1.0])
@pytest.mark.parametrize("M", [1, 7, 400, 10**5])
def test_geometric_closure(p, M):
    pmf = geometric_pmf(p, M)
    assert pmf.P.sum() + pmf.Q == pytest.approx(1.0, abs=1e-9)
    assert total_slip_probability(pmf) == pytest.approx(1 - (1 - p) ** M, abs=1e-9)


def test_empirical_pmf_and_closure():
    first = np.array([1, 1, 2, 0, 5, 9] * 200)
    pmf = empirical_pmf(first, 4)
    np.testing.assert_allclose(pmf.P, [1 / 3, 1 / 6, 0, 0])
    assert pmf.P.sum() + pmf.Q == pytest.approx(1.0, abs=1e-12)
    with pytest.warns(StatisticsWarning):
        empirical_pmf([1, 2], 3)


@pytest.fixture(scope="module")
def flicker_model():
    return SlipModel(NoiseModel.flicker(1.0), inversion_half_width("joint", 1000), n_realizations=5000, seed=3)


def test_flicker_pmf_closure_and_monotone(flicker_model):
    T = np.array([0.2, 0.4, 0.8])
    pmfs = flicker_model.pmfs(T, 100.0)
    for pmf in pmfs:
        assert pmf.P.sum() + pmf.Q == pytest.approx(1.0, abs=1e-9)
    probs = [total_slip_probability(p) for p in pmfs]
    assert probs == sorted(probs)
    with pytest.raises(ParameterError):
        flicker_model.p(0.3)


def test_flicker_pmf_first_cycle_is_gaussian(flicker_model):
    # the first window holds a single innovation of variance (pi/2) (gamma T)^2
    T = 1.0
    pmf = flicker_model.pmf(T, 10.0)
    p1 = special.erfc(flicker_model.ell / np.sqrt(np.pi) / T)
    assert pmf.P[0] == pytest.approx(p1, abs=4 * np.sqrt(p1 / 5000))


def test_semianalytic_matches_closed_form_single_white():
    N, tau = 1000, 100.0
    for T in (0.12, 0.17, 0.25, 0.5):
        closed = allan_white_closed("single", N, T, tau, 1.0)
        p = float(slip_p_white(T, 1.0, np.pi / 2))
        semi = allan_semianalytic(1 / N, geometric_pmf(p, int(tau / T)), T)
        assert semi.sigma2 == pytest.approx(closed.sigma2, rel=1e-10)
        assert semi.slip_prob == pytest.approx(closed.slip_prob, rel=1e-10)


def test_no_slips_give_the_standard_quantum_limit():
    N, T, tau = 1000, 0.5, 100.0
    res = allan_white_closed("single", N, T, tau, 0.0)
    assert res.sigma2 == pytest.approx(1 / (N * T * tau))
    assert scale_allan(res.sigma2, tau, N) == pytest.approx(1 / T)


def test_plateau_limit():
    p = 0.01
    pmf = geometric_pmf(p, 10**6)
    n = np.arange(2, pmf.M + 1)
    assert np.sum(pmf.P[1:] / n) == pytest.approx(white_plateau(p), rel=1e-9)
    assert white_plateau(0.0) == 0.0


@pytest.mark.parametrize("d", np.round(np.arange(0.1, 0.95, 0.1), 1))
def test_dick_white_identity(d):
    value, bound = dick_sum(d, 2)
    assert value / np.pi**2 == pytest.approx(d * (1 - d) / 2, abs=1e-8)
    assert bound <= 1e-10 * value


@pytest.mark.parametrize(
    "d, exact",
    [(0.5, 7 / 8 * ZETA3), (1 / 3, 0.75 * (1 - 1 / 27) * ZETA3), (0.25, 35 / 64 * ZETA3)],
)
def test_dick_flicker_sum_against_zeta(d, exact):
    value, bound = dick_sum(d, 3)
    assert abs(value - exact) <= bound + 1e-14
    assert bound <= 1e-10 * value


def test_dick_variance_limits():
    w = NoiseModel.white(1.0)
    assert dick_variance(w, 1.0, 0.0, 10.0) == 0.0
    assert dick_variance(w, 1.0, 1e-9, 10.0) == pytest.approx(0.0, abs=1e-9)
    # white: h (1-d) / (2 tau d) = gamma T_D / (tau T)
    assert dick_variance(w, 1.0, 0.25, 10.0) == pytest.approx(0.025)
    f = NoiseModel.flicker(1.0)
    small, large = (dick_variance(f, 1.0, td, 50.0) for td in (0.1, 0.5))
    assert 0 < small < large
    with pytest.raises(ParameterError):
        dick_sum(1.0, 3)


def test_weighted_error_c_T():
    N = 1000
    for v in (0.01, 0.1, 0.5):
        assert c_T("single", N, v, np.pi / 2) == pytest.approx(1 / N, rel=0.01)
    ell = inversion_half_width("joint", N)
    for v in (0.1, 0.5, 1.0):
        assert 1.0 < c_T("joint", N, v, ell) * 2 * N < 1.15
    for v in (0.1, 0.5):
        assert 1.0 < c_T("hybrid", N, v, ell) / hybrid_mse_floor(N) < 1.2


def test_c_T_grows_with_phase_spread_for_single():
    vals = [c_T("single", 500, v, np.pi / 2) for v in (0.05, 0.2, 0.5, 1.0)]
    assert vals == sorted(vals)


def test_white_curve_has_knee():
    T = log_grid(0.02, 3.0, 30)
    res = allan_curve("joint", 1000, T, 100.0, NoiseModel.white(1.0))
    knee = find_knee(T, [r.sigma2 for r in res], [r.slip_prob for r in res])
    assert T[0] < knee.T < T[-1]
    assert knee.sigma2 <= min(r.sigma2 for r in res[: knee.index + 1]) * (1 + 1e-9)


def test_knee_grid_errors():
    T = np.geomspace(0.1, 1, 10)
    with pytest.raises(GridError):
        find_knee(T, 1 / T)
    with pytest.raises(GridError):
        find_knee(T, T)
    knee = find_knee(T, np.exp((np.log(T) - np.log(0.3)) ** 2))
    assert knee.T == pytest.approx(0.3, rel=1e-6)


def test_optimal_allan_reports_slip_probability():
    T = log_grid(0.05, 2.0, 30)
    knee = optimal_allan("single", 2000, 100.0, NoiseModel.white(1.0), T)
    assert 0 < knee.slip_prob < 0.5


def test_noiseless_ensemble_has_zero_allan():
    cfg = ClockConfig("joint", 100, 0.5, 10.0, NoiseModel.white(0.0), projection_noise=False)
    res = ensemble_allan(1, cfg, 600, workers=2)
    assert res.sigma2 == 0.0 and res.err == 0.0 and res.slip_prob == 0.0


def test_csv(tmp_path):
    p = tmp_path / "a.csv"
    write_allan_csv([["joint", "white", 0.25, 0.0, 1.5, 0.01, "semianalytic", 0.05]], p)
    lines = p.read_text().splitlines()
    assert lines[0] == "protocol,noise,gamma_T,Td_over_T,sigma2_scaled,err,route,slip_prob"
    assert lines[1].startswith("joint,white,2.500000000000e-01")
