import numpy as np
import pytest

from domain import ModeIndex
from exceptions import ConvergenceError, ParameterError
from services.matrix_service import MatrixService
from services.spectral_service import SpectralService


@pytest.mark.parametrize("p", [0.6, 0.75, 0.8, 0.9])
@pytest.mark.parametrize("L", [16, 64, 200])
def test_numeric_spectrum_matches_plane_waves(p, L):
    analytic = SpectralService.analytic_spectrum(p, L).eigenvalues
    numeric = SpectralService.eig_sym_tridiag(MatrixService.build_symmetric_transfer(p, L)).eigenvalues
    assert np.max(np.abs(analytic - numeric)) < 1e-10


@pytest.mark.parametrize("m", [1, 5, 27])
def test_analytic_eigenvector_is_unit_eigenvector(m):
    p, L = 0.75, 28
    mode = ModeIndex(m, L)
    psi = SpectralService.analytic_eigenvector(p, mode, L)
    sym = MatrixService.build_symmetric_transfer(p, L)
    lam = 2 * p * (1 - p) * (1 + np.cos(mode.k))
    assert np.allclose(sym.matvec(psi), lam * psi, atol=1e-12)
    assert np.dot(psi, psi) == pytest.approx(1.0, rel=1e-12)


def test_printed_normalization_differs_by_one_minus_p():
    p, L = 0.75, 28
    mode = ModeIndex(3, L)
    exact = SpectralService.analytic_eigenvector(p, mode, L)
    printed = SpectralService.analytic_eigenvector(p, mode, L, norm="printed")
    assert np.allclose(printed * (1 - p), exact)


def test_mode_index_range():
    with pytest.raises(ParameterError):
        ModeIndex(0, 10)
    with pytest.raises(ParameterError):
        ModeIndex(10, 10)


def test_steady_state_overlap():
    assert SpectralService.steady_state_overlap(0.75, 1, 28) == pytest.approx(8.0 / (3.0**56 - 1), rel=1e-12)
    total = sum(SpectralService.steady_state_overlap(0.8, n, 30) for n in range(1, 31))
    assert total == pytest.approx(1.0, rel=1e-12)
    assert SpectralService.steady_state_overlap(0.5, 3, 40) == pytest.approx(1 / 40)
    with pytest.raises(ParameterError):
        SpectralService.steady_state_overlap(0.8, 31, 30)


def test_full_eigenvectors_are_orthonormal():
    spectrum = SpectralService.eig_sym_tridiag(MatrixService.build_symmetric_transfer(0.8, 50), eigenvectors=True)
    v = spectrum.eigenvectors
    assert np.allclose(v.T @ v, np.eye(50), atol=1e-10)
    assert spectrum.leading == pytest.approx(1.0, abs=1e-12)


def test_leading_pair_without_dissipation_is_stationary_state():
    p, L = 0.8, 20
    value, vector = SpectralService.leading_pair(MatrixService.build_symmetric_transfer(p, L))
    r2 = (p / (1 - p)) ** 2
    expected = np.arange(L) * np.log(r2)
    expected -= np.log(np.sum(np.exp(expected - expected.max()))) + expected.max()
    assert value == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(np.log(vector), expected, atol=1e-6)


def test_dissipative_leading_pair_unit_channel():
    p, L, gamma = 0.8, 500, 0.006
    value, vector = SpectralService.leading_dissipative(p, L, gamma)
    assert value == pytest.approx(0.6107, abs=1e-3)
    assert vector.min() >= 0
    assert vector.sum() == pytest.approx(1.0)
    peak = int(np.argmax(vector)) + 1
    assert abs(peak - SpectralService.peak_estimate(value, gamma)) <= 2
    assert value <= np.exp(-gamma) * 4 * p * (1 - p)


def test_dissipative_leading_pair_half_channel():
    p, L, gamma = 0.8, 500, 3 / 500
    value, vector = SpectralService.leading_dissipative(p, L, gamma, c=0.5)
    assert value == pytest.approx(0.621, abs=2e-3)
    assert value <= np.exp(-0.5 * gamma) * 0.64
    assert abs(int(np.argmax(vector)) + 1 - SpectralService.peak_estimate(value, gamma, c=0.5)) <= 2


def test_banded_and_symmetric_routes_agree():
    p, L, gamma = 0.8, 200, 0.01
    weight = MatrixService.build_dissipation(gamma, 1.0, L)
    v1, x1 = SpectralService.leading_pair(MatrixService.build_transfer(p, L), weight)
    v2, x2 = SpectralService.leading_dissipative(p, L, gamma)
    assert v1 == pytest.approx(v2, abs=1e-12)
    assert np.allclose(x1, x2, atol=1e-10)


def test_banded_route_survives_underflowing_weights():
    # e^{-γx} drops below the smallest double long before x = L
    p, L, gamma = 0.8, 1000, 0.8
    weight = MatrixService.build_dissipation(gamma, 1.0, L)
    assert weight.weights[-1] == 0.0
    v1, x1 = SpectralService.leading_pair(MatrixService.build_transfer(p, L), weight)
    v2, x2 = SpectralService.leading_dissipative(p, L, gamma)
    assert v1 == pytest.approx(0.18206, abs=1e-5)
    assert v1 == pytest.approx(v2, abs=1e-12)
    assert np.allclose(x1, x2, atol=1e-10)


def test_hard_truncation_restricts_to_kept_block():
    p, L, ell = 0.8, 150, 100
    value, vector = SpectralService.leading_pair(
        MatrixService.build_transfer(p, L), MatrixService.build_hard_truncation(ell, L)
    )
    assert value == pytest.approx(0.6398462266, abs=1e-9)
    assert np.all(vector[ell:] == 0)
    assert vector[:ell].min() > 0


def test_symmetrize_rejects_zero_weight():
    t = MatrixService.build_symmetric_transfer(0.8, 10)
    with pytest.raises(ParameterError):
        SpectralService.symmetrize_dissipative(t, MatrixService.build_hard_truncation(5, 10))


def test_subleading_eigenvectors_oscillate():
    sym = SpectralService.dissipative_operator(0.8, 200, 0.01)
    spectrum = SpectralService.eig_sym_tridiag(sym, eigenvectors=True)
    for i in range(4):
        assert SpectralService.sign_changes(spectrum.eigenvectors[:, i]) == i


def test_peak_estimate_validation():
    assert SpectralService.peak_estimate(np.exp(-0.5), 0.01) == pytest.approx(50.0)
    with pytest.raises(ParameterError):
        SpectralService.peak_estimate(1.0, 0.01)


def test_gamma_scan_is_monotone_and_bounded():
    p = 0.8
    gammas = [0.1, 0.03, 0.01, 0.003]
    rows = SpectralService.gamma_scan(p, [1000], gammas, threads=2)
    values = [r["leading_eigenvalue"] for r in rows]
    assert all(b > a for a, b in zip(values, values[1:]))
    for r in rows:
        assert not r["boundary_state"]
        assert r["leading_eigenvalue"] <= r["bulk_bound"] + 10 / r["L"] ** 2


def test_gamma_scan_flags_boundary_state():
    row = SpectralService.gamma_scan(0.8, [100], [1e-3], threads=1)[0]
    assert row["boundary_state"]
    assert row["peak_site"] == 100
    assert row["leading_eigenvalue"] > 0.9


def test_gamma_zero_is_stochastic():
    row = SpectralService.gamma_scan(0.8, [100], [0.0], threads=1)[0]
    assert row["leading_eigenvalue"] == pytest.approx(1.0, abs=1e-12)


def test_gamma_scan_rejects_empty_grid():
    with pytest.raises(ParameterError):
        SpectralService.gamma_scan(0.8, [], [0.1])


# ───── hard truncation ─────


def test_truncation_scan_converges_to_diffusive_constant():
    p = 0.8
    roots = SpectralService.truncated_root_scan(p, [50, 100, 200, 400], threads=1)
    psis = [r.psi for r in roots]
    assert all(b > a for a, b in zip(psis, psis[1:]))
    assert psis[-1] == pytest.approx(p * (1 - p) * np.pi**2, rel=0.02)
    assert all(r.eigenvalue < 4 * p * (1 - p) for r in roots)
    assert roots[-1].second_psi == pytest.approx(4 * p * (1 - p) * np.pi**2, rel=0.02)


def test_gtilde_root_is_block_eigenvalue():
    p, ell = 0.8, 100
    first = p * (1 - p) * np.pi**2
    psi = SpectralService.gtilde_root(p, ell, 0.5 * first, 1.5 * first)
    assert psi == pytest.approx(1.537734, rel=1e-5)
    printed = SpectralService.gtilde_root(p, ell, 0.5 * first, 1.5 * first, form="printed")
    assert printed == pytest.approx(first, rel=0.1)


def test_stochastic_corner_has_unit_eigenvalue():
    p = 0.8
    block = MatrixService.build_truncated_block(p, 100, p * p)
    value, _ = SpectralService.leading_pair(block)
    assert value == pytest.approx(1.0, abs=1e-12)
    assert SpectralService.fine_tuned_eigenvalue(p, p * p) == pytest.approx(1.0, abs=1e-12)


def test_fine_tuned_line_matches_block():
    p = 0.8
    predicted = SpectralService.fine_tuned_eigenvalue(p, 0.3)
    value, _ = SpectralService.leading_pair(MatrixService.build_truncated_block(p, 200, 0.3))
    assert predicted == pytest.approx(0.705333333333, abs=1e-9)
    assert value == pytest.approx(predicted, abs=1e-9)
    with pytest.raises(ConvergenceError):
        SpectralService.fine_tuned_eigenvalue(p, 0.0)


# ───── simplified model and counterexample ─────


@pytest.mark.parametrize("eps", [0.05, 0.1])
@pytest.mark.parametrize("gamma, L", [(0.01, 600), (0.05, 200)])
def test_simplified_eigenvector_closed_form(eps, gamma, L):
    closed = SpectralService.simplified_eigvec(eps, gamma, L)
    value, numeric = SpectralService.leading_pair(
        MatrixService.build_simplified(eps, L), MatrixService.build_dissipation(gamma, 1.0, L)
    )
    assert value == pytest.approx(2 * eps * np.exp(-gamma), rel=1e-14)
    interior = closed > 1e-200
    assert np.allclose(numeric[interior], closed[interior], rtol=1e-6, atol=0)
    peak = int(np.argmax(closed)) + 1
    assert abs(peak - (-np.log(2 * eps) / gamma)) <= 1


@pytest.mark.parametrize("eps", [0.0, 0.02, 0.05])
def test_counterexample_dissipative_limit(eps):
    p, gamma = 0.6, 0.1
    m = MatrixService.build_counterexample(p, eps, 200)
    value, vector = SpectralService.leading_pair(m, MatrixService.build_dissipation(gamma, 1.0, 200))
    assert value * np.exp(gamma) == pytest.approx(1 - p - eps, abs=1e-14)
    assert vector[0] > 0 and vector.min() >= 0


def test_repeated_triangular_diagonal_is_rejected():
    with pytest.raises(ConvergenceError):
        SpectralService.leading_pair(MatrixService.build_counterexample(0.6, 0.02, 30))


def test_sign_changes_ignores_noise():
    assert SpectralService.sign_changes(np.array([1.0, 0.5, -1e-20, 0.2, -0.3, 0.1])) == 2
