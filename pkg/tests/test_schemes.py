"""Unit tests for the steppers, the implicit solvers, and trajectory integration."""

from dataclasses import replace

import numpy as np
import pytest

from sdestep import (
    BACKWARD_EULER,
    BDF2,
    EXPLICIT_EULER,
    ImplicitSolverConfig,
    InitialValuePolicy,
    SchemeCoefficients,
    SdeModel,
    SeedSpec,
    SolverSingularError,
    StepGuard,
    StepSizeError,
    TimeGrid,
    closed_form_32vol,
    generate_increments,
    integrate,
    make_model,
    solve_implicit,
    step_bdf2,
    step_bem,
    step_explicit_euler,
    step_lmm,
)
from sdestep.brownian import IncrementTable

VOL32_PARAMS, VOL32 = make_model("vol32", 4.0, 1.0)
TOY_PARAMS, TOY = make_model("toy2d", 96.0, 0.47)


def residual(model, beta, h, x, R):
    """|x - h*beta*f(x) - R| for checking solver output."""
    x = np.asarray(x, dtype=float)
    phi = x - h * beta * model.drift(x) - np.asarray(R, dtype=float)
    return np.sqrt(np.sum(phi * phi, axis=-1))


def linear_model(a: float) -> SdeModel:
    """Noise-free linear drift f(x) = a*x with exact solve and Jacobian."""
    return SdeModel(
        state_dim=1,
        noise_dim=1,
        drift=lambda x: a * x,
        diffusion=lambda x: np.zeros(x.shape + (1,)),
        drift_jacobian=lambda x: np.broadcast_to(np.array([[a]]), x.shape + (1,)).copy(),
        closed_form_implicit=lambda beta, h, R: np.asarray(R, dtype=float) / (1.0 - h * beta * a),
        L=max(abs(a), 1.0),
        eta=1.0,
        q=1.0,
    )


def zero_table(grid: TimeGrid, d: int = 1) -> IncrementTable:
    return IncrementTable(grid=grid, noise_dim=d, increments=np.zeros((grid.N, d)))


# ---------------------------------------------------------------- step guard


def test_step_guard_bounds_per_scheme():
    assert StepGuard.for_scheme(VOL32, BACKWARD_EULER).max_h == 1.0
    assert StepGuard.for_scheme(VOL32, BDF2).max_h == 1.5
    assert StepGuard.for_scheme(VOL32, EXPLICIT_EULER).max_h == np.inf
    model2 = replace(VOL32, L=4.0)
    assert StepGuard.for_scheme(model2, BACKWARD_EULER).max_h == 0.25


def test_step_guard_check_and_override():
    guard = StepGuard(max_h=1.0)
    guard.check(0.5)
    with pytest.raises(StepSizeError):
        guard.check(1.0)
    with pytest.raises(StepSizeError):
        guard.check(2.0)
    guard.check(2.0, override=True)
    for h in (0.0, -1.0, np.inf, np.nan):
        with pytest.raises(StepSizeError):
            guard.check(h, override=True)


def test_integration_warns_above_stricter_stability_candidates():
    grid = TimeGrid(T=1.0, N=5)  # h = 0.2 > 0.1, inside the guard
    inc = zero_table(grid)
    with pytest.warns(RuntimeWarning, match="stability"):
        integrate(VOL32, BACKWARD_EULER, ImplicitSolverConfig(), InitialValuePolicy(), grid, inc, [1.0])
    with pytest.warns(RuntimeWarning, match="stability"):
        integrate(VOL32, BDF2, ImplicitSolverConfig(), InitialValuePolicy(), grid, inc, [1.0])

    fine = TimeGrid(T=1.0, N=25)  # h = 0.04 < both candidates
    import warnings as _warnings

    with _warnings.catch_warnings():
        _warnings.simplefilter("error")
        integrate(VOL32, BACKWARD_EULER, ImplicitSolverConfig(), InitialValuePolicy(), fine, zero_table(fine), [1.0])
        integrate(VOL32, EXPLICIT_EULER, ImplicitSolverConfig(), InitialValuePolicy(), grid, inc, [1.0])


# ------------------------------------------------------- closed-form solve


def test_closed_form_32vol_zero_and_sign_symmetry():
    assert closed_form_32vol(4.0, 1.0, 1.0, 0.01, 0.0) == 0.0
    rng = np.random.default_rng(12)
    R = rng.uniform(-50.0, 50.0, size=10_000)
    plus = closed_form_32vol(4.0, 1.0, 1.0, 0.01, R)
    minus = closed_form_32vol(4.0, 1.0, 1.0, 0.01, -R)
    assert np.array_equal(minus, -plus)  # exact oddness by construction


def test_closed_form_32vol_spot_value_against_bisection():
    lam, beta, h, R = 4.0, 1.0, 0.01, 1.0
    x = closed_form_32vol(lam, 1.0, beta, h, R)

    def phi(z):
        return z - beta * h * (z - lam * z * abs(z)) - R

    lo, hi = 0.0, 2.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if phi(lo) * phi(mid) <= 0:
            hi = mid
        else:
            lo = mid
    assert abs(x - 0.5 * (lo + hi)) < 1e-12
    assert x == pytest.approx(0.9719331683349637, abs=1e-13)
    assert residual(VOL32, beta, h, np.array([x]), np.array([R])) <= 1e-12 * (1.0 + abs(R))


def test_closed_form_32vol_residual_over_random_inputs():
    rng = np.random.default_rng(7)
    n = 2000
    lam = rng.uniform(0.5, 30.0, size=n)
    beta = rng.uniform(0.1, 1.0, size=n)
    h = rng.uniform(1e-4, 0.9, size=n) / (beta * 1.0)  # keep h*beta*L < 1 with L=1
    R = rng.uniform(-20.0, 20.0, size=n)
    for i in range(n):
        x = closed_form_32vol(lam[i], 0.0, beta[i], h[i], R[i])
        f = x - lam[i] * x * abs(x)
        assert abs(x - beta[i] * h[i] * f - R[i]) <= 1e-12 * (1.0 + abs(R[i]))


def test_closed_form_32vol_validation_and_array_shapes():
    with pytest.raises(ValueError):
        closed_form_32vol(0.0, 1.0, 1.0, 0.01, 1.0)
    with pytest.raises(ValueError):
        closed_form_32vol(4.0, 1.0, 1.0, 0.0, 1.0)
    out = closed_form_32vol(4.0, 1.0, 1.0, 0.01, np.array([[1.0], [-2.0]]))
    assert out.shape == (2, 1)
    assert isinstance(closed_form_32vol(4.0, 1.0, 1.0, 0.01, 1.0), float)


# -------------------------------------------------------------- solve_implicit


def test_solve_implicit_enforces_the_step_bound():
    with pytest.raises(StepSizeError):
        solve_implicit(VOL32, 1.0, 1.0, np.array([1.0]), ImplicitSolverConfig())
    with pytest.raises(StepSizeError):
        solve_implicit(VOL32, 1.0, -0.1, np.array([1.0]), ImplicitSolverConfig())
    with pytest.raises(ValueError):
        solve_implicit(VOL32, 0.0, 0.1, np.array([1.0]), ImplicitSolverConfig())

    # the bound is skippable for deliberate out-of-regime experiments
    loose = ImplicitSolverConfig(enforce_step_bound=False)
    x = solve_implicit(VOL32, 1.0, 1.2, np.array([1.0]), loose)
    assert residual(VOL32, 1.0, 1.2, x, np.array([1.0])) <= 1e-12 * 2.0


def test_solve_implicit_fixed_point_at_zero():
    for mode in ("closed_form", "newton"):
        x = solve_implicit(VOL32, 1.0, 0.01, np.array([0.0]), ImplicitSolverConfig(mode=mode))
        assert x == np.array([0.0])


def test_newton_is_exact_for_linear_drift_in_one_iteration():
    model = linear_model(-2.0)
    cfg = ImplicitSolverConfig(mode="newton", newton_iterations=1)
    R = np.array([3.7])
    x = solve_implicit(model, 0.5, 0.3, R, cfg)
    expected = R / (1.0 - 0.3 * 0.5 * (-2.0))
    assert np.all(np.abs(x - expected) <= 1e-14 * (1.0 + np.abs(R)))
    assert residual(model, 0.5, 0.3, x, R) <= 1e-14


def test_closed_form_and_newton_agree_on_the_32vol_model():
    cfg_newton = ImplicitSolverConfig(mode="newton", newton_iterations=10)
    cfg_closed = ImplicitSolverConfig(mode="closed_form")
    rng = np.random.default_rng(42)
    for _ in range(50):
        R = np.array([rng.uniform(-5.0, 5.0)])
        h = rng.uniform(1e-3, 0.5)
        a = solve_implicit(VOL32, 1.0, h, R, cfg_closed)
        b = solve_implicit(VOL32, 1.0, h, R, cfg_newton)
        assert np.all(np.abs(a - b) <= 1e-10 * (1.0 + np.abs(R)))


def test_solver_mode_configuration_errors():
    no_jac = replace(VOL32, drift_jacobian=None, closed_form_implicit=None)
    with pytest.raises(ValueError):
        solve_implicit(no_jac, 1.0, 0.01, np.array([1.0]), ImplicitSolverConfig(mode="newton"))
    no_closed = replace(VOL32, closed_form_implicit=None)
    with pytest.raises(ValueError):
        solve_implicit(
            no_closed, 1.0, 0.01, np.array([1.0]),
            ImplicitSolverConfig(mode="closed_form", fallback_to_newton=False),
        )
    # with fallback the same request silently degrades to Newton
    x = solve_implicit(no_closed, 1.0, 0.01, np.array([1.0]), ImplicitSolverConfig(mode="closed_form"))
    assert residual(no_closed, 1.0, 0.01, x, np.array([1.0])) <= 1e-10 * 2.0
    with pytest.raises(ValueError):
        ImplicitSolverConfig(mode="bogus")
    with pytest.raises(ValueError):
        ImplicitSolverConfig(newton_iterations=0)
    with pytest.raises(ValueError):
        ImplicitSolverConfig(newton_start="middle")


def test_non_finite_rhs_propagates_as_nan():
    cfg = ImplicitSolverConfig(mode="newton")
    single = solve_implicit(VOL32, 1.0, 0.01, np.array([np.nan]), cfg)
    assert np.isnan(single).all()

    batch = np.array([[1.0], [np.nan], [-2.0]])
    out = solve_implicit(VOL32, 1.0, 0.01, batch, cfg)
    assert np.isnan(out[1]).all()
    for i in (0, 2):
        row = solve_implicit(VOL32, 1.0, 0.01, batch[i], cfg)
        assert np.array_equal(out[i], row)


def fake_singular_model(h: float, beta: float) -> SdeModel:
    """A model whose reported Jacobian makes DPhi exactly singular at x = 0."""
    val = 1.0 / (h * beta)

    def jac(x):
        flat = np.asarray(x, dtype=float)
        at_zero = np.all(flat == 0.0, axis=-1)
        out = np.zeros(flat.shape + (1,))
        out[..., 0, 0] = np.where(at_zero, val, 0.0)
        return out

    return SdeModel(
        state_dim=1,
        noise_dim=1,
        drift=lambda x: 0.0 * x,
        diffusion=lambda x: np.zeros(x.shape + (1,)),
        drift_jacobian=jac,
        L=1.0,
        eta=1.0,
        q=1.0,
    )


def test_singular_linearization_raises_for_single_states():
    model = fake_singular_model(h=0.1, beta=1.0)
    cfg = ImplicitSolverConfig(mode="newton")
    with pytest.raises(SolverSingularError):
        solve_implicit(model, 1.0, 0.1, np.array([0.0]), cfg, step_index=17)
    try:
        solve_implicit(model, 1.0, 0.1, np.array([0.0]), cfg, step_index=17)
    except SolverSingularError as err:
        assert err.step_index == 17


def test_singular_linearization_nans_only_the_bad_batch_rows():
    model = fake_singular_model(h=0.1, beta=1.0)
    cfg = ImplicitSolverConfig(mode="newton", newton_iterations=1)
    batch = np.array([[0.0], [2.0]])  # row 0 starts at the singular point
    out = solve_implicit(model, 1.0, 0.1, batch, cfg)
    assert np.isnan(out[0]).all()
    assert np.all(np.isfinite(out[1]))
    assert out[1, 0] == 2.0  # zero drift: the solution is R itself


def test_newton_runs_exactly_k_iterations_without_tolerance():
    jac_calls = []
    counted = replace(
        VOL32,
        closed_form_implicit=None,
        drift_jacobian=lambda x: (jac_calls.append(1) or VOL32.drift_jacobian(x)),
    )
    cfg = ImplicitSolverConfig(mode="newton", newton_iterations=5, newton_tolerance=0.0)
    solve_implicit(counted, 1.0, 0.01, np.array([1.0]), cfg)
    assert len(jac_calls) == 5

    jac_calls.clear()
    early = ImplicitSolverConfig(mode="newton", newton_iterations=5, newton_tolerance=1e-8)
    solve_implicit(counted, 1.0, 0.01, np.array([1.0]), early)
    assert len(jac_calls) < 5  # quadratic convergence stops this well before K


def test_newton_start_selects_the_initial_iterate():
    cfg_rhs = ImplicitSolverConfig(mode="newton", newton_iterations=1, newton_start="rhs")
    cfg_prev = ImplicitSolverConfig(mode="newton", newton_iterations=1, newton_start="prev")
    R = np.array([1.0])
    start = np.array([0.5])

    def one_update(x0):
        f = VOL32.drift(x0)
        jf = VOL32.drift_jacobian(x0)[..., 0, 0]
        phi = x0 - 0.01 * f - R
        return x0 - phi / (1.0 - 0.01 * jf)

    got_rhs = solve_implicit(VOL32, 1.0, 0.01, R, cfg_rhs, x_start=start)
    got_prev = solve_implicit(VOL32, 1.0, 0.01, R, cfg_prev, x_start=start)
    assert np.allclose(got_rhs, one_update(R.copy()), rtol=0, atol=1e-16)
    assert np.allclose(got_prev, one_update(start.copy()), rtol=0, atol=1e-16)
    assert not np.array_equal(got_rhs, got_prev)
    # "prev" without a provided starting point falls back to R
    bare = solve_implicit(VOL32, 1.0, 0.01, R, cfg_prev)
    assert np.array_equal(bare, got_rhs)


# ------------------------------------------------------------------- steppers


def test_explicit_euler_hand_values_and_explosion():
    still = SdeModel(1, 1, drift=lambda x: 0.0 * x, diffusion=lambda x: np.zeros(x.shape + (1,)))
    x = step_explicit_euler(still, np.array([2.5]), 0.1, np.array([0.3]))
    assert x == np.array([2.5])

    sig0 = make_model("vol32", 4.0, 0.0)[1]
    x = step_explicit_euler(sig0, np.array([1.0]), 0.1, np.array([0.0]))
    assert x == pytest.approx(np.array([0.7]), abs=0)

    # running away is data, not an error
    with np.errstate(over="ignore"):
        big = step_explicit_euler(sig0, np.array([1e200]), 0.1, np.array([0.0]))
    assert not np.isfinite(big).all() or abs(big[0]) > 1e200


def test_bem_reduces_to_explicit_when_drift_vanishes():
    still = SdeModel(
        1, 1,
        drift=lambda x: 0.0 * x,
        diffusion=lambda x: np.ones(x.shape + (1,)),
        drift_jacobian=lambda x: np.zeros(x.shape + (1,)),
    )
    dW = np.array([0.37])
    a = step_bem(still, ImplicitSolverConfig(mode="newton"), np.array([1.5]), 0.1, dW)
    b = step_explicit_euler(still, np.array([1.5]), 0.1, dW)
    assert np.array_equal(a, b)


def test_bem_step_satisfies_its_implicit_equation():
    sig0 = make_model("vol32", 4.0, 0.0)[1]
    x_prev = np.array([1.0])
    x = step_bem(sig0, ImplicitSolverConfig(), x_prev, 0.01, np.array([0.0]))
    assert residual(sig0, 1.0, 0.01, x, x_prev) <= 1e-12 * 2.0


def test_bdf2_equilibrium_and_unnormalized_residual():
    # f vanishes at |x| = 1/lambda; with zero noise the step must stay put
    c = np.array([0.25])
    x = step_bdf2(VOL32, ImplicitSolverConfig(), c, c, 0.01, np.zeros(1), np.zeros(1))
    assert np.all(np.abs(x - c) <= 1e-13)

    rng = np.random.default_rng(5)
    x_prev = np.array([rng.uniform(0.2, 1.5)])
    x_prev2 = np.array([rng.uniform(0.2, 1.5)])
    dw1, dw0 = np.array([rng.normal() * 0.1]), np.array([rng.normal() * 0.1])
    h = 0.01
    x = step_bdf2(VOL32, ImplicitSolverConfig(), x_prev, x_prev2, h, dw1, dw0)
    lhs = (
        1.5 * x - 2.0 * x_prev + 0.5 * x_prev2
        - h * VOL32.drift(x)
        - 1.5 * VOL32.diffusion(x_prev)[..., 0] * dw1
        + 0.5 * VOL32.diffusion(x_prev2)[..., 0] * dw0
    )
    assert np.all(np.abs(lhs) <= 1e-10 * (1.0 + np.abs(x)))


def test_generic_stepper_matches_dedicated_steppers():
    rng = np.random.default_rng(17)
    cfg = ImplicitSolverConfig()
    h = 0.01
    for _ in range(20):
        x1 = np.array([rng.uniform(-2.0, 2.0)])
        x2 = np.array([rng.uniform(-2.0, 2.0)])
        dw1 = np.array([rng.normal() * 0.1])
        dw0 = np.array([rng.normal() * 0.1])
        f1, f2 = VOL32.drift(x1), VOL32.drift(x2)

        bem_direct = step_bem(VOL32, cfg, x1, h, dw1)
        bem_generic, f_next = step_lmm(VOL32, cfg, BACKWARD_EULER, [x1], [f1], [dw1], h)
        assert np.array_equal(bem_direct, bem_generic)
        assert np.array_equal(f_next, VOL32.drift(bem_generic))

        eul_direct = step_explicit_euler(VOL32, x1, h, dw1)
        eul_generic, _ = step_lmm(VOL32, cfg, EXPLICIT_EULER, [x1], [f1], [dw1], h)
        assert np.array_equal(eul_direct, eul_generic)

        bdf_direct = step_bdf2(VOL32, cfg, x1, x2, h, dw1, dw0)
        bdf_generic, _ = step_lmm(VOL32, cfg, BDF2, [x2, x1], [f2, f1], [dw0, dw1], h)
        assert np.all(np.abs(bdf_direct - bdf_generic) <= 1e-14 * (1.0 + np.abs(bdf_direct)))


def test_crank_nicolson_style_preset_hand_value():
    cn = SchemeCoefficients(k=1, alpha=(-1.0, 1.0), beta=(0.5, 0.5), gamma=(1.0,))
    model = linear_model(-1.0)
    x_prev = np.array([1.0])
    x, _ = step_lmm(model, ImplicitSolverConfig(mode="newton"), cn, [x_prev], [model.drift(x_prev)], [np.zeros(1)], 0.1)
    assert abs(x[0] - 19.0 / 21.0) <= 1e-15


def test_step_lmm_rejects_mismatched_histories():
    with pytest.raises(ValueError):
        step_lmm(VOL32, ImplicitSolverConfig(), BDF2, [np.zeros(1)], [np.zeros(1)], [np.zeros(1)], 0.01)


# ------------------------------------------------------------------ integrate


def test_integrate_validates_inputs():
    grid = TimeGrid(T=1.0, N=10)
    other = TimeGrid(T=1.0, N=20)
    inc = zero_table(grid)
    cfg = ImplicitSolverConfig()
    with pytest.raises(ValueError):
        integrate(VOL32, BACKWARD_EULER, cfg, InitialValuePolicy(), other, inc, [1.0])
    with pytest.raises(ValueError):
        integrate(TOY, BACKWARD_EULER, cfg, InitialValuePolicy(), grid, inc, [1.0, 2.0])
    with pytest.raises(ValueError):
        integrate(VOL32, BACKWARD_EULER, cfg, InitialValuePolicy(), grid, inc, [1.0, 2.0])


def test_integrate_guard_rejects_large_steps_unless_overridden():
    grid = TimeGrid(T=2.0, N=1)  # h = 2 >= 1/(beta_k L) = 1
    inc = zero_table(grid)
    with pytest.raises(StepSizeError):
        integrate(VOL32, BACKWARD_EULER, ImplicitSolverConfig(), InitialValuePolicy(), grid, inc, [0.5])
    loose = ImplicitSolverConfig(enforce_step_bound=False)
    with pytest.warns(RuntimeWarning):
        out = integrate(VOL32, BACKWARD_EULER, loose, InitialValuePolicy(), grid, inc, [0.5], override_step_guard=True)
    assert out.states.shape == (2, 1)


def test_integrate_constant_dynamics_and_copy_first():
    still = SdeModel(
        1, 1,
        drift=lambda x: 0.0 * x,
        diffusion=lambda x: np.zeros(x.shape + (1,)),
        drift_jacobian=lambda x: np.zeros(x.shape + (1, 1))[..., 0],
    )
    grid = TimeGrid(T=1.0, N=8)
    inc = generate_increments(grid, 1, SeedSpec(3, 0))
    out = integrate(still, EXPLICIT_EULER, ImplicitSolverConfig(), InitialValuePolicy(), grid, inc, [1.25])
    assert np.all(out.states == 1.25)

    copied = integrate(
        VOL32, BDF2, ImplicitSolverConfig(), InitialValuePolicy(second="copy_first"),
        TimeGrid(T=1.0, N=25), generate_increments(TimeGrid(T=1.0, N=25), 1, SeedSpec(3, 1)), [1.0],
    )
    assert np.array_equal(copied.states[1], copied.states[0])


def test_integrate_bdf2_first_steps_satisfy_the_per_step_equations():
    sig0 = make_model("vol32", 4.0, 0.0)[1]
    grid = TimeGrid(T=1.0, N=25)
    inc = zero_table(grid)
    out = integrate(sig0, BDF2, ImplicitSolverConfig(), InitialValuePolicy(), grid, inc, [1.0])
    X = out.states
    h = grid.h
    # state 1 comes from one drift-implicit Euler step
    assert abs(X[1, 0] - h * sig0.drift(X[1])[0] - X[0, 0]) <= 1e-12
    # state 2 satisfies the two-step recursion
    lhs = 1.5 * X[2] - 2.0 * X[1] + 0.5 * X[0] - h * sig0.drift(X[2])
    assert np.all(np.abs(lhs) <= 1e-12)


def test_integrate_explosion_is_silent_and_sticky():
    toy0 = make_model("toy2d", 96.0, 0.0)[1]
    grid = TimeGrid(T=1.0, N=25)
    inc = zero_table(grid, d=2)
    out = integrate(toy0, EXPLICIT_EULER, ImplicitSolverConfig(), InitialValuePolicy(), grid, inc, [2.0, 3.0])
    finite_rows = np.isfinite(out.states).all(axis=1)
    assert not finite_rows[-1]
    # once gone, never back
    first_bad = int(np.argmin(finite_rows))
    assert not finite_rows[first_bad:].any()


def test_integrate_reports_the_failing_step_on_singular_solves():
    model = fake_singular_model(h=0.1, beta=1.0)
    grid = TimeGrid(T=1.0, N=10)
    inc = zero_table(grid)
    with pytest.raises(SolverSingularError) as excinfo:
        integrate(model, BACKWARD_EULER, ImplicitSolverConfig(mode="newton"), InitialValuePolicy(), grid, inc, [0.0])
    assert excinfo.value.step_index == 1
    assert "step 1" in str(excinfo.value)


def test_integrate_single_step_grid_with_two_step_scheme():
    grid = TimeGrid(T=0.01, N=1)
    inc = zero_table(grid)
    out = integrate(VOL32, BDF2, ImplicitSolverConfig(), InitialValuePolicy(), grid, inc, [1.0])
    assert out.states.shape == (2, 1)
    assert np.isfinite(out.states).all()


def test_deterministic_limit_convergence_orders():
    """With zero noise the integrators are the classical deterministic methods."""
    model = linear_model(-1.0)
    exact = np.exp(-1.0)
    errors = {"bem": [], "bdf2": []}
    levels = (16, 32, 64, 128)
    for n in levels:
        grid = TimeGrid(T=1.0, N=n)
        inc = zero_table(grid)
        bem = integrate(model, BACKWARD_EULER, ImplicitSolverConfig(), InitialValuePolicy(), grid, inc, [1.0])
        bdf = integrate(model, BDF2, ImplicitSolverConfig(), InitialValuePolicy(), grid, inc, [1.0])
        errors["bem"].append(abs(bem.states[-1, 0] - exact))
        errors["bdf2"].append(abs(bdf.states[-1, 0] - exact))
    for scheme, floor in (("bem", 0.95), ("bdf2", 1.9)):
        e = np.array(errors[scheme])
        slopes = np.log2(e[:-1] / e[1:])
        assert np.all(slopes >= floor), (scheme, slopes)


def test_newton_residuals_decrease_through_the_iteration():
    """Per-step |Phi| is non-increasing across Newton iterates (above rounding).

    The drift wrapper logs every iterate; each implicit step contributes
    K iterates plus the final history evaluation, so the per-step residual
    sequence can be reconstructed exactly.  Tiny wiggles below the
    double-precision floor of the converged residual do not count.
    """
    calls = []
    logged = replace(TOY, drift=lambda x: (calls.append(np.array(x, ndmin=1)) or TOY.drift(x)))
    grid = TimeGrid(T=1.0, N=1000)  # h = 1e-3
    inc = generate_increments(grid, 2, SeedSpec(99, 0))
    K = 5
    traj = integrate(
        logged, BDF2, ImplicitSolverConfig(mode="newton", newton_iterations=K),
        InitialValuePolicy(), grid, inc, [2.0, 3.0],
    )
    assert len(calls) == 1 + grid.N * (K + 1)

    X = traj.states
    dW = inc.increments
    h = grid.h
    sigma = TOY_PARAMS.sigma
    bad = 0
    for j in range(1, grid.N + 1):
        seq = calls[1 + (j - 1) * (K + 1): 1 + j * (K + 1)]
        if j == 1:
            beta = 1.0
            R = X[0] + (sigma * np.diag(X[0] ** 2)) @ dW[0]
        else:
            beta = 2.0 / 3.0
            g1 = sigma * np.diag(X[j - 1] ** 2)
            g2 = sigma * np.diag(X[j - 2] ** 2)
            R = (4.0 * X[j - 1] - X[j - 2]) / 3.0 + g1 @ dW[j - 1] - g2 @ dW[j - 2] / 3.0
        res = [np.linalg.norm(x - beta * h * TOY.drift(x) - R) for x in seq]
        floor = 1e-14 * (1.0 + np.linalg.norm(R))
        if any(res[i + 1] > max(res[i], floor) for i in range(K)):
            bad += 1
    assert bad <= 0.01 * grid.N
