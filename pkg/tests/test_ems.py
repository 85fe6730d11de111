import itertools

import numpy as np
import pytest

from mmwave_ce import SystemConfig
from mmwave_ce.channel import assemble_realization, generate_realization, steering_matrix, steering_vector
from mmwave_ce.ems import (AodObjective, bisection_budget, coarse_minimum, estimate_aod_ems, estimate_ems,
                           ideal_objective, interval_contains, ls_path_matrix, null_basis, objective,
                           refine_minimum)
from mmwave_ce.metrics import nmse
from mmwave_ce.sounding import EMS, TDE, noise_variance_for_snr, simulate_measurements
from mmwave_ce.tde import esprit_shift_invariance, wrap_sin

M = 16
EPS = 1e-3


def dft_precoder(m=M):
    n = np.arange(m)
    return np.exp(2j * np.pi * np.outer(n, n) / m) / np.sqrt(m)


def ideal(phi_true, method="svd"):
    F = dft_precoder()
    return AodObjective.build(F.conj().T @ steering_vector(M, phi_true), F, EPS, method)


@pytest.fixture(scope="module")
def clean(cfg, design):
    real = generate_realization(cfg, 41, min_separation=0.05)
    return real, simulate_measurements(design, real, EMS, 0.0)


def test_ls_path_matrix_noise_free(cfg, design, clean):
    real, meas = clean
    for u in range(cfg.num_users):
        order = np.argsort(real.aoa[u])
        theta = real.aoa[u][order]
        d_t = ls_path_matrix(meas.stage1[u, 0], design.w_reduced, theta, real.gamma)
        a_t = steering_matrix(cfg.num_user_antennas, real.aod[u][order])
        expected = np.diag(real.gain_diagonals[u, 0][order]) @ a_t.conj().T @ design.precoder
        np.testing.assert_allclose(d_t, expected, atol=1e-10)


def test_ls_path_vector_single_path(design):
    cfg = SystemConfig(num_users=1, num_paths=1)
    real = assemble_realization(cfg, [[0.45]], [[-0.3]], [[0.5 + 1j]], [[2.0]])
    meas = simulate_measurements(design, real, EMS, 0.0)
    d = ls_path_matrix(meas.stage1[0, 0], design.w_reduced, real.aoa[0], real.gamma)[0].conj()
    ref = design.precoder.conj().T @ steering_vector(16, -0.3)
    # parallel: |<d, ref>| = |d| |ref|
    assert abs(np.vdot(d, ref)) == pytest.approx(np.linalg.norm(d) * np.linalg.norm(ref), rel=1e-12)


def test_ls_path_matrix_noisy_matches_normal_equations(cfg, design):
    real = generate_realization(cfg, 5)
    meas = simulate_measurements(design, real, EMS, noise_variance_for_snr(design, real, 5.0), 5)
    theta = esprit_shift_invariance(meas.stage1[0, 0], meas.stage2[0], 3)
    d_t = ls_path_matrix(meas.stage1[0, 0], design.w_reduced, theta, real.gamma)
    A = design.w_reduced @ steering_matrix(64, theta)[:-1]
    ref = np.linalg.solve(A.conj().T @ A, A.conj().T @ meas.stage1[0, 0]) / real.gamma
    np.testing.assert_allclose(d_t, ref, atol=1e-10)
    # with the true AoAs the LS residual cannot exceed the noise itself
    a_true = design.w_reduced @ steering_matrix(64, real.aoa[0])[:-1]
    d_true = ls_path_matrix(meas.stage1[0, 0], design.w_reduced, real.aoa[0], real.gamma)
    resid = np.linalg.norm(a_true @ (real.gamma * d_true) - meas.stage1[0, 0])
    clean = simulate_measurements(design, real, EMS, 0.0).stage1[0, 0]
    assert resid <= np.linalg.norm(meas.stage1[0, 0] - clean)


def test_ls_path_matrix_rank_error(design):
    with pytest.raises(np.linalg.LinAlgError):
        ls_path_matrix(np.zeros((32, 12)), design.w_reduced, np.array([0.1, 0.1]), 1.0)


@pytest.mark.parametrize("method", ["svd", "qr"])
def test_projector_invariants(rng, method):
    d = rng.standard_normal(12) + 1j * rng.standard_normal(12)
    U = null_basis(d, method)
    assert U.shape == (12, 11)
    assert np.max(np.abs(U.conj().T @ d)) < 1e-10
    np.testing.assert_allclose(U.conj().T @ U, np.eye(11), atol=1e-10)
    P = U @ U.conj().T
    assert np.linalg.norm(P @ P - P) < 1e-10


def test_null_basis_bad_method():
    with pytest.raises(ValueError):
        null_basis(np.ones(3), "lu")


def test_objective_basis_invariant(design, rng):
    d = rng.standard_normal(12) + 1j * rng.standard_normal(12)
    phi = np.linspace(-1, 1, 333, endpoint=False)
    a = objective(phi, AodObjective.build(d, design.precoder, method="svd"))
    b = objective(phi, AodObjective.build(d, design.precoder, method="qr"))
    np.testing.assert_allclose(a, b, atol=1e-10)
    assert np.all(a >= -1e-12)


def test_ideal_objective_closed_form():
    phi_true = 0.2371
    obj = ideal(phi_true)
    grid = np.linspace(-1, 1, 10_000, endpoint=False)
    np.testing.assert_allclose(objective(grid, obj), ideal_objective(grid, phi_true, M), atol=1e-9)
    assert abs(obj(phi_true)) < 1e-9
    assert obj(phi_true + 2 / M) == pytest.approx(1.0, abs=1e-9)
    assert obj(phi_true - 2 / M) == pytest.approx(1.0, abs=1e-9)


def test_coarse_minimum_on_grid_point():
    phi = -1 + 2 * 5 / M
    n_s, gamma = coarse_minimum(ideal(phi))
    assert n_s == 6
    assert interval_contains(gamma, phi)
    assert gamma[1] - gamma[0] == pytest.approx(4 / M)


def test_coarse_minimum_always_covers_in_ideal_case(rng):
    for phi in np.concatenate([rng.uniform(-1, 1, 300), [-1.0, -0.999, 0.9999]]):
        _, gamma = coarse_minimum(ideal(phi))
        assert interval_contains(gamma, phi)


def test_coarse_minimum_needs_two_antennas():
    obj = AodObjective.build(np.ones(1), np.ones((1, 1)))
    with pytest.raises(ValueError):
        coarse_minimum(obj)


def test_interval_contains_wraps():
    assert interval_contains((-1.125, -0.875), 0.95)
    assert not interval_contains((-1.125, -0.875), 0.8)
    assert interval_contains((0.875, 1.125), -0.95)


@pytest.mark.parametrize("phi", [-0.99, -0.512, 0.0, 0.3333, 0.87, 0.999])
def test_refine_ideal(phi):
    obj = ideal(phi)
    _, gamma = coarse_minimum(obj)
    est, iters = refine_minimum(obj, gamma)
    assert abs(wrap_sin(est - phi)) <= EPS
    assert iters <= bisection_budget(M, EPS) + 2


def test_refine_matches_exhaustive_grid(design, rng):
    for phi in rng.uniform(-1, 1, 5):
        d = design.precoder.conj().T @ steering_vector(16, phi)
        d = d + 0.05 * (rng.standard_normal(12) + 1j * rng.standard_normal(12)) * np.linalg.norm(d)
        obj = AodObjective.build(d, design.precoder, EPS)
        _, gamma = coarse_minimum(obj)
        est, _ = refine_minimum(obj, gamma)
        grid = np.linspace(gamma[0], gamma[1], 100_000)
        best = grid[np.argmin(objective(grid, obj))]
        assert abs(wrap_sin(est - best)) <= EPS


def test_refine_errors():
    obj = ideal(0.1)
    with pytest.raises(ValueError):
        refine_minimum(obj, (0.0, 0.2), epsilon=0.0)
    with pytest.raises(ValueError):
        refine_minimum(obj, (0.2, 0.2))


def test_bisection_budget():
    assert bisection_budget(16, 1e-3) == 8
    assert bisection_budget(64, 1e-4) == 9


def test_ems_end_to_end_noise_free(cfg, design, clean):
    real, meas = clean
    est = estimate_ems(meas, design, cfg)
    assert est.scheme == "EMS"
    assert nmse(est.channels, real.subcarrier_matrices) < 1e-6


def test_ems_single_path_exact_to_epsilon(design):
    cfg = SystemConfig(num_users=1, num_paths=1)
    real = assemble_realization(cfg, [[-0.21]], [[0.64]], [[1.1 - 0.2j]], [[0.4]])
    est = estimate_ems(simulate_measurements(design, real, EMS, 0.0), design, cfg)
    assert est.aoa[0, 0] == pytest.approx(-0.21, abs=EPS)
    assert est.aod[0, 0] == pytest.approx(0.64, abs=EPS)


def test_ems_implicit_pairing(cfg, design):
    rng = np.random.default_rng(77)
    for _ in range(5):
        real = generate_realization(cfg, rng, min_separation=4 / cfg.num_user_antennas)
        est = estimate_ems(simulate_measurements(design, real, EMS, 0.0), design, cfg)
        for u in range(cfg.num_users):
            truth = dict(zip(np.round(real.aoa[u], 6), real.aod[u]))
            for th, ph in zip(est.aoa[u], est.aod[u]):
                assert abs(wrap_sin(ph - truth[np.round(th, 6)])) <= EPS


def test_ems_repair_pairing_agrees_when_clean(cfg, design, clean):
    real, meas = clean
    a = estimate_ems(meas, design, cfg)
    b = estimate_ems(meas, design, cfg, repair_pairing=True)
    np.testing.assert_allclose(a.aod, b.aod)


def test_ems_rejects_tde_measurements(cfg, design, clean):
    real, _ = clean
    with pytest.raises(ValueError):
        estimate_ems(simulate_measurements(design, real, TDE, 0.0), design, cfg)


def test_estimate_aod_details(design, clean):
    real, meas = clean
    theta = esprit_shift_invariance(meas.stage1[0, 0], meas.stage2[0], 3)
    aod, details = estimate_aod_ems(meas.stage1[0, 0], design, theta, real.gamma)
    assert len(details) == 3
    for det in details:
        assert 1 <= det["sector"] <= 16
        assert det["iterations"] <= bisection_budget(16, EPS) + 2


def test_mainlobe_coverage_at_10db(cfg, design):
    rng = np.random.default_rng(99)
    hits = total = 0
    for _ in range(100):
        real = generate_realization(cfg, rng)
        meas = simulate_measurements(design, real, EMS, noise_variance_for_snr(design, real, 10.0), rng)
        for u in range(cfg.num_users):
            theta = esprit_shift_invariance(meas.stage1[u, 0], meas.stage2[u], 3)
            perm = min(itertools.permutations(range(3)),
                       key=lambda p: np.sum(np.abs(wrap_sin(theta - real.aoa[u][list(p)]))))
            d_t = ls_path_matrix(meas.stage1[u, 0], design.w_reduced, theta, real.gamma)
            for i in range(3):
                _, gamma = coarse_minimum(AodObjective.build(d_t[i].conj(), design.precoder))
                hits += interval_contains(gamma, real.aod[u][perm[i]])
                total += 1
    assert hits / total >= 0.99
