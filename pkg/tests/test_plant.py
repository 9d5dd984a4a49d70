"""Generator model: hand-computed step values, equilibrium, region, simulate."""

import math

import numpy as np
import pytest

from gridloop.plant import (
    GeneratorParams,
    OperatingRegion,
    Trajectory,
    compute_equilibrium,
    in_region,
    output,
    save_trajectory_csv,
    simulate,
    step,
)


def test_derived_constants_match_scalar_arithmetic(params):
    # independent scalar recomputation of every shorthand
    assert params.M == pytest.approx(2.0 * 3.5 / 377.0, rel=1e-15)
    assert params.X_sum == pytest.approx(0.3 + 0.1, rel=1e-15)
    assert params.gamma == pytest.approx(1.0 / 0.4, rel=1e-15)
    assert params.kappa == pytest.approx(1.9 / 0.4, rel=1e-15)
    assert params.mu == pytest.approx(1.5 / 0.4, rel=1e-15)
    assert params.alpha_d == pytest.approx(0.0025 * 377.0 / 7.0, rel=1e-15)
    assert params.alpha_q == pytest.approx(0.0025 / 6.0, rel=1e-15)


def test_step_matches_hand_evaluated_euler(params):
    # oracle: each component evaluated with plain math ops, no shared code
    x = np.array([0.5, 377.0, 1.0])
    u = 1.0
    got = step(x, u, params)
    p_e = 2.5 * 1.0 * math.sin(0.5)
    expect_delta = 0.5 + 0.0025 * 0.0
    expect_omega = 377.0 + (0.0025 * 377.0 / 7.0) * (1.0 - 0.0 - p_e)
    expect_eq = 1.0 + (0.0025 / 6.0) * (2.0 - 4.75 * 1.0 + 3.75 * math.cos(0.5))
    assert got[0] == pytest.approx(expect_delta, abs=1e-15)
    assert got[1] == pytest.approx(expect_omega, rel=1e-14)
    assert got[2] == pytest.approx(expect_eq, rel=1e-14)


def test_step_with_speed_offset_moves_angle(params):
    x = np.array([0.2, 377.5, 0.9])
    got = step(x, 1.1, params)
    assert got[0] == pytest.approx(0.2 + 0.0025 * 0.5, rel=1e-14)


def test_step_broadcasts_over_batches(params):
    rng = np.random.default_rng(0)
    xs = rng.uniform([-0.5, 376.9, 0.6], [0.9, 377.1, 1.2], size=(64, 3))
    us = rng.uniform(0.0, 1.5, 64)
    batched = step(xs, us, params)
    rows = np.stack([step(xs[i], us[i], params) for i in range(64)])
    assert np.array_equal(batched, rows)


def test_angle_update_is_exactly_linear_in_omega(params):
    # delta^+ - delta equals dt*(omega - omega_s) bit-for-bit
    rng = np.random.default_rng(1)
    for _ in range(200):
        x = np.array([rng.uniform(-1, 1), 377.0 + rng.uniform(-5, 5), rng.uniform(0.5, 1.3)])
        u = rng.uniform(0.0, 1.5)
        nxt = step(x, u, params)
        assert nxt[0] == x[0] + params.dt * (x[1] - params.omega_s)


def test_input_enters_omega_affinely(params):
    # step(x,u1) - step(x,u2) must be (u1-u2)*dt/M in omega and zero elsewhere
    rng = np.random.default_rng(2)
    for _ in range(200):
        x = np.array([rng.uniform(-1, 1), 377.0 + rng.uniform(-5, 5), rng.uniform(0.5, 1.3)])
        u1, u2 = rng.uniform(0.0, 1.5, 2)
        d = step(x, u1, params) - step(x, u2, params)
        assert d[0] == 0.0
        assert d[2] == 0.0
        # omega sits near 377, so the subtraction leaves ~2 ulp(377) of noise
        assert d[1] == pytest.approx((u1 - u2) * params.alpha_d, abs=1e-12)


def test_output_values(params):
    x = np.array([math.pi / 2.0, 377.0, 1.0])
    y = output(x, params)
    assert y[0] == 0.0
    assert y[1] == pytest.approx(2.5, rel=1e-15)


def test_equilibrium_is_fixed_point(params, region):
    x_s, u_s = compute_equilibrium(region.delta_s, params)
    expect_eq = (2.0 + 3.75 * math.cos(0.4)) / 4.75
    assert x_s[2] == pytest.approx(expect_eq, rel=1e-14)
    assert u_s == pytest.approx(2.5 * expect_eq * math.sin(0.4), rel=1e-14)
    assert np.max(np.abs(step(x_s, u_s, params) - x_s)) < 1e-12
    # repeated stepping stays put
    x = x_s.copy()
    for _ in range(100):
        x = step(x, u_s, params)
    assert np.max(np.abs(x - x_s)) < 1e-10


def test_equilibrium_interior_of_default_region(params, region):
    x_s, u_s = compute_equilibrium(region.delta_s, params)
    assert region.Eq_min < x_s[2] < region.Eq_max
    assert region.u_min < u_s < region.u_max


def test_equilibrium_rejects_wide_angle(params):
    with pytest.raises(ValueError):
        compute_equilibrium(1.6, params)


def test_param_validation_names_field():
    with pytest.raises(ValueError, match="dt"):
        GeneratorParams(dt=0.01)
    with pytest.raises(ValueError, match="H"):
        GeneratorParams(H=-1.0)
    with pytest.raises(ValueError, match="X_sum"):
        GeneratorParams(Xd_prime=-0.1, Xe=0.05)


def test_region_validation():
    with pytest.raises(ValueError):
        OperatingRegion(Eq_min=1.3)
    with pytest.raises(ValueError):
        OperatingRegion(delta_s=1.2, delta_max=0.5)
    with pytest.raises(ValueError):
        OperatingRegion(u_min=2.0)


def test_in_region_box_logic(params, region):
    x_s, u_s = compute_equilibrium(region.delta_s, params)
    assert in_region(x_s, region, params, u_s)
    assert not in_region(x_s + np.array([0.6, 0.0, 0.0]), region, params)
    assert not in_region(x_s + np.array([0.0, 0.03, 0.0]), region, params)
    assert not in_region(x_s, region, params, 1.6)
    xs = np.stack([x_s, x_s + np.array([0.0, 0.0, 0.5])])
    flags = in_region(xs, region, params)
    assert flags.tolist() == [True, False]


def test_simulate_constant_input_from_equilibrium(params, region):
    x_s, u_s = compute_equilibrium(region.delta_s, params)
    traj = simulate(x_s, np.full(50, u_s), params, region=region)
    assert traj.x.shape == (51, 3)
    assert traj.u.shape == (50,)
    assert traj.y.shape == (50, 2)
    assert traj.first_exit_index is None
    assert np.max(np.abs(traj.x - x_s)) < 1e-10


def test_simulate_small_square_wave_stays_in_region(params, region):
    # low-amplitude torque square wave keeps the trajectory inside the box
    x_s, u_s = compute_equilibrium(region.delta_s, params)
    u = u_s + 0.002 * np.where(np.arange(40) % 10 < 5, 1.0, -1.0)
    traj = simulate(x_s, u, params, region=region)
    assert traj.first_exit_index is None
    assert bool(np.all(in_region(traj.x, region, params)))


def test_simulate_flags_first_region_exit(params, region):
    x_s, u_s = compute_equilibrium(region.delta_s, params)
    # a large torque step drives the speed out of the thin omega band quickly
    traj = simulate(x_s, np.full(20, u_s + 0.3), params, region=region)
    assert traj.first_exit_index is not None
    k = traj.first_exit_index
    assert not in_region(traj.x[k], region, params, traj.u[k] if k < 20 else None)
    assert bool(np.all(in_region(traj.x[:k], region, params)))


def test_simulate_raises_on_blowup(params):
    # an absurd flux value overflows the power term; error must name a step
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(RuntimeError, match="step 1"):
            simulate(np.array([0.5, 377.0, 1e308]), np.zeros(10), params)


def test_trajectory_csv_round_trip(tmp_path, params, region):
    x_s, u_s = compute_equilibrium(region.delta_s, params)
    traj = simulate(x_s, np.full(5, u_s), params)
    path = tmp_path / "traj.csv"
    save_trajectory_csv(traj, path, params)
    rows = path.read_text().strip().splitlines()
    assert rows[0] == "k,delta,omega,Eq_prime,u,omega_tilde,P_e"
    assert len(rows) == 7  # header + 6 states
    last = rows[-1].split(",")
    assert last[4] == ""  # no input on the final state
    assert float(rows[1].split(",")[1]) == pytest.approx(x_s[0])


def test_trajectory_shape_validation():
    with pytest.raises(ValueError):
        Trajectory(u=np.zeros(3), y=np.zeros((4, 2)), dt=0.0025)
