import numpy as np
import pytest

from exceptions import ParameterError
from services.autocorr_service import AutocorrService
from services.matrix_service import MatrixService
from services.spectral_service import SpectralService
from services.walk_service import WalkService


def _exact(p, L, start, steps):
    series = AutocorrService.evolve_density(MatrixService.build_transfer(p, L), start, steps, checkpoints=[steps])
    return series.checkpoints[0]


def test_new_ensemble_is_delta():
    e = WalkService.new_ensemble(1000, 20, start=3, seed=1)
    density = WalkService.ensemble_density(e)
    assert density.values[2] == 1.0
    assert density.total_mass == 1.0
    assert np.all(e.log_weights == 0)
    with pytest.raises(ParameterError):
        WalkService.new_ensemble(10, 20, start=21)


def test_identical_seed_gives_identical_trajectory():
    a, _, _ = WalkService.run(WalkService.new_ensemble(5000, 30, seed=7, n_workers=3), 0.8, 0.01, 25)
    b, _, _ = WalkService.run(WalkService.new_ensemble(5000, 30, seed=7, n_workers=3), 0.8, 0.01, 25)
    c, _, _ = WalkService.run(WalkService.new_ensemble(5000, 30, seed=8, n_workers=3), 0.8, 0.01, 25)
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.log_weights, b.log_weights)
    assert not np.array_equal(a.positions, c.positions)


def test_histogram_matches_exact_evolution():
    p, L, steps = 0.8, 50, 30
    n = 40000
    e, snaps, mass = WalkService.run(WalkService.new_ensemble(n, L, seed=3, n_workers=2), p, 0.0, steps, checkpoints=[10, 30])
    assert [s.t for s in snaps] == [10, 30]
    assert np.allclose(mass, 1.0, atol=1e-12)
    for snap in snaps:
        exact = _exact(p, L, 1, snap.t).values
        sigma = np.sqrt(exact * (1 - exact) / n)
        assert np.all(np.abs(snap.values - exact) <= 5 * sigma + 5.0 / n)
    _, pvalue = WalkService.chi_square(e, _exact(p, L, 1, steps))
    assert pvalue > 1e-3


def test_boundary_rules_reproduce_corner_columns():
    p, L = 0.8, 3
    e, _, _ = WalkService.run(WalkService.new_ensemble(200000, L, start=1, seed=11), p, 0.0, 1)
    density = WalkService.ensemble_density(e)
    assert density.values[0] == pytest.approx(1 - p * p, abs=5 * density.stderr[0])
    e, _, _ = WalkService.run(WalkService.new_ensemble(200000, L, start=L, seed=12), p, 0.0, 1)
    density = WalkService.ensemble_density(e)
    assert density.values[-1] == pytest.approx(2 * p * (1 - p) + p * p, abs=5 * density.stderr[-1])


def test_bulk_velocity_and_diffusive_width():
    p, L, start = 0.8, 800, 100
    e0 = WalkService.new_ensemble(20000, L, start=start, seed=5, n_workers=4)
    e1, _, _ = WalkService.run(e0, p, 0.0, 100)
    e2, _, _ = WalkService.run(e1, p, 0.0, 300)
    velocity = (WalkService.mean_position(e2) - start) / 400
    assert velocity == pytest.approx(0.6, rel=0.02)
    ratio = np.std(e2.positions) / np.std(e1.positions)
    assert ratio == pytest.approx(2.0, rel=0.1)


def test_weighted_mass_decays_at_dissipative_rate():
    p, L, gamma = 0.8, 12, 0.02
    e, _, mass = WalkService.run(WalkService.new_ensemble(20000, L, seed=9, n_workers=2), p, gamma, 300)
    assert np.all(mass <= 1.0)
    assert np.all(np.diff(mass) < 0)
    rate = (np.log(mass[100]) - np.log(mass[300])) / 200
    value, _ = SpectralService.leading_dissipative(p, L, gamma)
    assert rate == pytest.approx(-np.log(value), rel=0.03)


def test_chi_square_needs_unweighted_ensemble():
    e, _, _ = WalkService.run(WalkService.new_ensemble(100, 10, seed=1), 0.8, 0.1, 3)
    with pytest.raises(ParameterError):
        WalkService.chi_square(e, _exact(0.8, 10, 1, 3))


@pytest.mark.slow
def test_full_size_histogram_is_chi_square_compatible():
    p, L, steps = 0.8, 200, 100
    e, _, _ = WalkService.run(WalkService.new_ensemble(1_000_000, L, seed=2024, n_workers=4), p, 0.0, steps)
    _, pvalue = WalkService.chi_square(e, _exact(p, L, 1, steps))
    assert pvalue > 1e-3
