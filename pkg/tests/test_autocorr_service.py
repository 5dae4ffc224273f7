import numpy as np
import pytest

from exceptions import ConvergenceError, ParameterError
from services.autocorr_service import AutocorrService
from services.matrix_service import MatrixService
from services.spectral_service import SpectralService


@pytest.fixture(scope="module")
def small_series():
    """Exact ⟨1|T^t|1⟩ for p=0.75, L=28 over 400 steps."""
    return AutocorrService.evolve_density(MatrixService.build_transfer(0.75, 28), 1, 400)


def test_evolution_starts_from_delta():
    series = AutocorrService.evolve_density(MatrixService.build_transfer(0.8, 10), 4, 0, checkpoints=[0])
    assert series.return_series.tolist() == [1.0]
    start = series.checkpoints[0]
    assert start.t == 0 and start.values[3] == 1.0 and start.total_mass == 1.0


def test_stochastic_evolution_conserves_mass():
    series = AutocorrService.evolve_density(MatrixService.build_transfer(0.8, 50), 1, 10000)
    assert np.max(np.abs(series.mass_series - 1.0)) < 1e-12


def test_dissipative_evolution_loses_mass():
    L = 60
    weight = MatrixService.build_dissipation(0.01, 1.0, L)
    series = AutocorrService.evolve_density(MatrixService.build_transfer(0.8, L), 1, 200, weight=weight)
    assert np.all(np.diff(series.mass_series) <= 0)


def test_evolution_validates_input():
    t = MatrixService.build_transfer(0.8, 10)
    with pytest.raises(ParameterError):
        AutocorrService.evolve_density(t, 11, 5)
    with pytest.raises(ParameterError):
        AutocorrService.evolve_density(t, 1, -1)
    with pytest.raises(ParameterError):
        AutocorrService.evolve_density(t, 1, 5, weight=MatrixService.build_dissipation(0.1, 1.0, 12))


def test_spectral_sum_matches_evolution(small_series):
    t = np.arange(0, 401)
    closed = AutocorrService.spectral_return_sum(0.75, 28, t)
    assert closed[0] == pytest.approx(1.0, rel=1e-12)
    assert np.allclose(closed, small_series.return_series, rtol=1e-10, atol=0)


def test_spectral_sum_reaches_plateau():
    late = AutocorrService.spectral_return_sum(0.75, 28, 5000)[0]
    assert late == pytest.approx(SpectralService.steady_state_overlap(0.75, 1, 28), rel=1e-12)


def test_asymptote_tends_to_plateau_and_tracks_exact_rate(small_series):
    plateau = SpectralService.steady_state_overlap(0.75, 1, 28)
    assert AutocorrService.asymptotic_return(0.75, 1e6, 28)[0] == pytest.approx(plateau, rel=1e-12)
    t = np.arange(1, 401)
    asym = AutocorrService.asymptotic_return(0.75, t, 28)
    exact_fit = AutocorrService.fit_decay_rate(small_series.return_series, (10, 100), 1.5)
    asym_fit = AutocorrService.fit_decay_rate(asym, (10, 100), 1.5, times=t)
    assert exact_fit.rate == pytest.approx(asym_fit.rate, rel=0.01)
    assert asym_fit.rate == pytest.approx(-np.log(0.75), abs=1e-10)
    with pytest.raises(ParameterError):
        AutocorrService.asymptotic_return(0.75, 0, 28)


def test_plateau_report():
    report = AutocorrService.plateau_report(0.75, 1, 28)
    assert report.plateau_value == pytest.approx(SpectralService.steady_state_overlap(0.75, 1, 28), rel=1e-12)
    assert report.plateau_value == pytest.approx(1.5287e-26, rel=1e-3)
    assert report.t_plateau == pytest.approx(56 * np.log(3) / np.log(4 / 3), rel=1e-9)
    assert report.t_plateau == pytest.approx(213.9, abs=0.1)
    assert 1 < report.t_plateau_full < report.t_plateau
    assert report.t_plateau_printed < 0
    assert report.method == "leading-asymptote-intersection"


def test_plateau_time_is_linear_in_size():
    times = [AutocorrService.plateau_report(0.8, 1, L).t_plateau for L in (20, 40, 80)]
    assert times[1] == pytest.approx(2 * times[0], rel=1e-9)
    assert times[2] == pytest.approx(4 * times[0], rel=1e-9)


def test_pinned_formulas_need_p_above_half():
    with pytest.raises(ParameterError):
        AutocorrService.plateau_report(0.4, 1, 20)


def test_default_window():
    assert AutocorrService.default_window(0.75, 28) == (10, 149)


# ───── product states ─────


def test_product_state_values():
    assert AutocorrService.product_state_density(2, 1, 1)[0] == pytest.approx(0.64)
    assert AutocorrService.product_state_density(2, -1, 1)[0] == pytest.approx(0.04)
    assert AutocorrService.product_state_density(2, 3, 2)[0] == 0.0


@pytest.mark.parametrize("q", [2, 3])
@pytest.mark.parametrize("t", [0, 1, 7, 120, 500])
def test_product_state_identities(q, t):
    x = np.arange(-t, t + 1)
    assert AutocorrService.product_state_density(q, x, t).sum() == pytest.approx(1.0, rel=1e-12)
    p = q * q / (q * q + 1.0)
    assert AutocorrService.product_state_connected(q, t) == pytest.approx((4 * p * (1 - p)) ** t, rel=1e-12)


def test_product_state_connected_examples():
    assert AutocorrService.product_state_connected(3, 2) == pytest.approx(0.1296)
    assert AutocorrService.product_state_connected(2, 3) == pytest.approx(0.262144)
    assert AutocorrService.product_state_connected(2, 0) == pytest.approx(1.0)
    with pytest.raises(ParameterError):
        AutocorrService.product_state_connected(1, 3)


@pytest.mark.parametrize("q,t", [(2, 3), (3, 5), (5, 7)])
def test_product_state_connected_is_weighted_density_sum(q, t):
    x = np.arange(-t, t + 1)
    direct = np.sum(AutocorrService.product_state_density(q, x, t) * float(q) ** (-2.0 * x))
    assert AutocorrService.product_state_connected(q, t) == pytest.approx(direct, rel=1e-12)


def test_product_state_connected_reads_the_density(monkeypatch):
    def flat(q, x, t):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.full(x.shape, np.log(123.0))

    monkeypatch.setattr(AutocorrService, "product_state_log_density", staticmethod(flat))
    assert AutocorrService.product_state_density(2, 0, 1)[0] == pytest.approx(123.0)
    with pytest.raises(ConvergenceError):
        AutocorrService.product_state_connected(2, 3)


def test_product_state_log_density_tail_is_finite():
    logs = AutocorrService.product_state_log_density(3, np.array([-500, -100, 0, 501]), 500)
    assert np.all(np.isfinite(logs[:3]))
    assert logs[0] == pytest.approx(1000 * np.log(0.1), rel=1e-10)
    assert logs[3] == -np.inf


def test_free_endpoint_return_decays_with_half_power():
    t = np.arange(0, 301)
    series = np.array([AutocorrService.product_state_density(2, 0, int(s))[0] for s in t])
    fit = AutocorrService.fit_decay_rate(series, (20, 300))
    assert fit.rate == pytest.approx(-np.log(0.64), rel=1e-3)
    assert fit.power_exponent == pytest.approx(0.5, abs=0.05)
    assert not fit.exponent_fixed


# ───── fits ─────


def test_fit_recovers_rate_from_large_system():
    series = AutocorrService.evolve_density(MatrixService.build_transfer(0.8, 400), 1, 150).return_series
    fit = AutocorrService.fit_decay_rate(series, (20, 150))
    assert fit.rate == pytest.approx(-np.log(0.64), rel=0.01)
    assert fit.fit_window == (20, 150)
    assert fit.residual >= 0


def test_fit_recovers_dissipative_eigenvalue():
    p, L, gamma = 0.8, 500, 0.006
    weight = MatrixService.build_dissipation(gamma, 1.0, L)
    mass = AutocorrService.evolve_density(MatrixService.build_transfer(p, L), 1, 650, weight=weight).mass_series
    fit = AutocorrService.fit_decay_rate(mass, (450, 650), power_exponent=0.0)
    value, _ = SpectralService.leading_dissipative(p, L, gamma)
    assert fit.rate == pytest.approx(-np.log(value), rel=1e-4)
    assert fit.rate == pytest.approx(-np.log(0.6107), rel=0.02)


def test_fit_rejects_bad_windows():
    series = np.exp(-0.3 * np.arange(50))
    with pytest.raises(ParameterError):
        AutocorrService.fit_decay_rate(series, (30, 20))
    with pytest.raises(ParameterError):
        AutocorrService.fit_decay_rate(series, (10, 12))
    with pytest.raises(ParameterError):
        AutocorrService.fit_decay_rate(np.zeros(50), (10, 40))


def test_rates_agree_across_methods():
    p = 0.8
    exact = AutocorrService.fit_decay_rate(
        AutocorrService.evolve_density(MatrixService.build_transfer(p, 400), 1, 150).return_series, (20, 150)
    ).rate
    q = 2
    product = -np.log(AutocorrService.product_state_connected(q, 50)) / 50
    dissipative = -np.log(SpectralService.leading_dissipative(p, 10000, 1e-4)[0])
    assert exact == pytest.approx(product, rel=0.02)
    assert dissipative == pytest.approx(product, rel=0.02)
