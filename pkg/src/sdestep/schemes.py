"""Time steppers for stiff monotone SDEs and the implicit solves behind them.

The drift-implicit one-step scheme and the two-step backward
differentiation scheme both reduce each step to a root problem

    x - h * beta * f(x) = R,

where R aggregates everything already known (old states, explicit drift
terms, noise terms).  For monotone drifts this equation has a unique
solution whenever ``h * beta * L < 1`` — that bound is enforced by
:class:`StepGuard`.  The solve itself either uses a model-supplied closed
form or a fixed number of Newton iterations.

All steppers are vectorized over leading axes: states may be ``(m,)`` or
``(B, m)`` and keep that shape, which is what makes the Monte Carlo
harness fast without a second code path.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import GridFunction, SchemeCoefficients, SdeModel, TimeGrid
from .brownian import IncrementTable

__all__ = [
    "StepSizeError",
    "SolverSingularError",
    "ImplicitSolverConfig",
    "InitialValuePolicy",
    "StepGuard",
    "closed_form_32vol",
    "solve_implicit",
    "step_explicit_euler",
    "step_bem",
    "step_bdf2",
    "step_lmm",
    "integrate",
]

_SINGULAR_TOL = 1e-14


class StepSizeError(ValueError):
    """Raised when an implicit scheme is asked to run with h outside its guard."""


class SolverSingularError(RuntimeError):
    """Raised when a Newton linearization is numerically singular.

    ``step_index`` identifies the failing step when the error surfaces
    from an integration loop (it is None for bare solver calls).
    """

    def __init__(self, message: str, step_index: int | None = None):
        super().__init__(message)
        self.step_index = step_index


@dataclass(frozen=True)
class ImplicitSolverConfig:
    """How to solve the per-step root problem x - h*beta*f(x) = R.

    mode
        "closed_form" uses the model's exact solve, "newton" runs the
        damped-free Newton iteration, "auto" (default) picks closed_form
        when the model provides one and newton otherwise.
    newton_iterations
        Exact number of Newton updates when ``newton_tolerance`` is 0.
    newton_tolerance
        If positive, iteration stops early once the residual norm
        ``|x - h*beta*f(x) - R|`` drops to this level everywhere.
    fallback_to_newton
        Lets mode="closed_form" degrade to Newton when the model has no
        closed-form solve (otherwise that is a configuration error).
    newton_start
        Start iterate: "rhs" (default) starts from R itself — R is the
        Euler-style predictor already in hand; "prev" uses the previous
        state when the caller has one (the steppers pass it).  Bare
        ``solve_implicit`` calls without history always start from R.
    enforce_step_bound
        When False, ``solve_implicit`` skips its h*beta*L < 1 check.
        Outside that bound uniqueness (and Newton invertibility) is lost;
        this exists for deliberate what-happens-if runs, not production.
    """

    mode: str = "auto"
    newton_iterations: int = 5
    newton_tolerance: float = 0.0
    fallback_to_newton: bool = True
    newton_start: str = "rhs"
    enforce_step_bound: bool = True

    def __post_init__(self) -> None:
        if self.mode not in ("auto", "closed_form", "newton"):
            raise ValueError(f"unknown solver mode {self.mode!r}")
        if self.newton_iterations < 1:
            raise ValueError("newton_iterations must be >= 1")
        if self.newton_tolerance < 0.0:
            raise ValueError("newton_tolerance must be >= 0")
        if self.newton_start not in ("prev", "rhs"):
            raise ValueError(f"unknown newton_start {self.newton_start!r}")


@dataclass(frozen=True)
class InitialValuePolicy:
    """How a multistep integration fills states before the recursion starts.

    The first value is always the exact initial condition.  For the
    second value, "bem_step" advances one drift-implicit Euler step using
    the first Brownian increment (which the two-step recursion then reuses
    as its oldest increment), while "copy_first" repeats x0 — cheaper but
    observably less accurate.
    """

    first: str = "exact_x0"
    second: str = "bem_step"

    def __post_init__(self) -> None:
        if self.first != "exact_x0":
            raise ValueError(f"unsupported first-value policy {self.first!r}")
        if self.second not in ("bem_step", "copy_first"):
            raise ValueError(f"unsupported second-value policy {self.second!r}")


@dataclass(frozen=True)
class StepGuard:
    """Well-posedness bound for implicit steps: requires h < max_h = 1/(beta_k L).

    Below the bound, x -> x - h*beta_k*f(x) is a bijection for monotone
    drifts, so every implicit step has exactly one solution.  Explicit
    recursions (beta_k = 0) are unguarded (max_h = inf).
    """

    max_h: float

    @classmethod
    def for_scheme(cls, model: SdeModel, coeffs: SchemeCoefficients) -> "StepGuard":
        beta_k = coeffs.beta[coeffs.k]
        if beta_k == 0.0:
            return cls(max_h=math.inf)
        return cls(max_h=1.0 / (beta_k * model.L))

    def check(self, h: float, override: bool = False) -> None:
        if not (h > 0.0 and np.isfinite(h)):
            raise StepSizeError(f"step size must be a positive finite real, got {h}")
        if h >= self.max_h and not override:
            raise StepSizeError(
                f"step size h={h} violates the well-posedness bound h < {self.max_h}"
                " (pass an explicit override to run anyway)"
            )


def _stability_warnings(model: SdeModel, coeffs: SchemeCoefficients, h: float) -> None:
    """Warn (never reject) when h exceeds the stricter mean-square bounds.

    The literature states two inequivalent step-size restrictions for each
    scheme family; neither affects well-posedness, so both candidates are
    reported and the run proceeds.
    """
    if not coeffs.implicit:
        return
    L = model.L
    if coeffs.k == 1:
        candidates = (1.0 / max(4.0 * L, 2.0), 1.0 / (2.0 * (4.0 * L + 1.0)))
    elif coeffs.k == 2:
        candidates = (1.0 / (2.0 * (4.0 * L + 1.0)), 1.0 / max(8.0 * L, 2.0))
    else:
        return
    if h > min(candidates):
        warnings.warn(
            f"h={h} exceeds the stricter mean-square stability candidates "
            f"{min(candidates):g} / {max(candidates):g} for the {coeffs.k}-step scheme; "
            "error bounds may not apply",
            RuntimeWarning,
            stacklevel=3,
        )


def _apply_noise(g: np.ndarray, dW: np.ndarray) -> np.ndarray:
    """Matrix-vector product g @ dW over the trailing axes, batch friendly.

    ``g`` has shape (..., m, d) and ``dW`` shape (..., d); the result has
    shape (..., m).  d = 1 and d = 2 are unrolled so the summation order
    is fixed (and fast); larger d falls back to einsum.
    """
    d = g.shape[-1]
    if dW.shape[-1] != d:
        raise ValueError(f"noise dimension mismatch: matrix has d={d}, increment {dW.shape[-1]}")
    if d == 1:
        return g[..., 0] * dW
    if d == 2:
        return g[..., 0] * dW[..., 0:1] + g[..., 1] * dW[..., 1:2]
    return np.einsum("...md,...d->...m", g, dW)


def closed_form_32vol(lam: float, sigma: float, beta: float, h: float, R):
    """Exact drift-implicit solve for the 3/2-volatility family.

    Solves ``x - beta*h*(x - lam*x*|x|) = R`` for scalar states.  On each
    sign branch the equation is a quadratic with non-negative discriminant;
    the root that depends continuously on R is returned.  The formula is
    evaluated in rationalized form,

        x = sign(R) * a / (c + sqrt(c*c + a)),
        a = |R| / (beta*h*lam),  c = (1 - beta*h) / (2*beta*h*lam),

    which avoids the catastrophic cancellation of the textbook
    ``-c + sqrt(c^2 + a)`` expression when ``a`` is tiny.  ``sigma`` is
    accepted for signature symmetry with the model family but plays no
    role: the diffusion is handled explicitly by the schemes.

    Works elementwise on arrays; scalar input yields a float.
    """
    bh = beta * h
    if not (bh * lam > 0.0):
        raise ValueError(f"need beta*h*lam > 0, got beta*h={bh}, lam={lam}")
    R = np.asarray(R, dtype=float)
    c = (1.0 - bh) / (2.0 * bh * lam)
    a = np.abs(R) / (bh * lam)
    x = np.sign(R) * (a / (c + np.sqrt(c * c + a)))
    return float(x) if x.ndim == 0 else x


def _solve_linear(A: np.ndarray, b: np.ndarray, step_index: int | None):
    """Solve A x = b for (..., m, m) systems with a hard singularity floor.

    Scalar and 2x2 systems are inverted in closed form; larger systems go
    through partial-pivot LU (numpy).  A pivot/determinant magnitude below
    1e-14 raises :class:`SolverSingularError` for single systems; in
    batched calls the offending rows come back as NaN so that one bad
    sample cannot abort its whole batch (the harness counts it as
    exploded).
    """
    m = A.shape[-1]
    single = b.ndim == 1
    if m == 1:
        det = A[..., 0, 0]
        bad = np.abs(det) < _SINGULAR_TOL
        if single:
            if bad:
                raise SolverSingularError(
                    f"singular Newton linearization (|diag|={abs(float(det)):.3e})",
                    step_index=step_index,
                )
            return b / det
        out = np.empty_like(b)
        np.divide(b, det[..., None], out=out, where=~bad[..., None])
        out[bad] = np.nan
        return out
    if m == 2:
        a11 = A[..., 0, 0]
        a12 = A[..., 0, 1]
        a21 = A[..., 1, 0]
        a22 = A[..., 1, 1]
        det = a11 * a22 - a12 * a21
        bad = np.abs(det) < _SINGULAR_TOL
        if single and bad:
            raise SolverSingularError(
                f"singular Newton linearization (|det|={abs(float(det)):.3e})",
                step_index=step_index,
            )
        x1 = (a22 * b[..., 0] - a12 * b[..., 1]) / det
        x2 = (a11 * b[..., 1] - a21 * b[..., 0]) / det
        out = np.stack([x1, x2], axis=-1)
        if not single:
            out[bad] = np.nan
        return out
    det = np.linalg.det(A)
    bad = np.abs(det) < _SINGULAR_TOL
    if single:
        if bad:
            raise SolverSingularError(
                f"singular Newton linearization (|det|={abs(float(det)):.3e})",
                step_index=step_index,
            )
        return np.linalg.solve(A, b)
    if np.any(bad):
        A = np.where(bad[..., None, None], np.eye(m), A)
    out = np.linalg.solve(A, b)
    out[bad] = np.nan
    return out


def _newton_solve(
    model: SdeModel,
    beta: float,
    h: float,
    R: np.ndarray,
    cfg: ImplicitSolverConfig,
    x_start: np.ndarray | None,
    step_index: int | None,
) -> np.ndarray:
    if model.drift_jacobian is None:
        raise ValueError("Newton solve requires the model to provide drift_jacobian")
    m = R.shape[-1]
    bh = beta * h
    eye = np.eye(m)
    x = np.array(x_start if x_start is not None else R, dtype=float, copy=True)
    for _ in range(cfg.newton_iterations):
        phi = x - bh * model.drift(x) - R
        if cfg.newton_tolerance > 0.0:
            res = np.sqrt(np.sum(phi * phi, axis=-1))
            still_working = np.isfinite(res) & (res > cfg.newton_tolerance)
            if not np.any(still_working):
                break
        dphi = eye - bh * model.drift_jacobian(x)
        x = x - _solve_linear(dphi, phi, step_index)
    return x


def solve_implicit(
    model: SdeModel,
    beta: float,
    h: float,
    R,
    cfg: ImplicitSolverConfig,
    x_start=None,
    step_index: int | None = None,
):
    """Solve the implicit step equation x - h*beta*f(x) = R.

    Requires ``0 < h*beta*L < 1`` (the step guard).  Non-finite rows of R
    propagate as NaN without touching the solver — an exploded sample is
    data, not an error.  ``x_start`` optionally seeds the Newton
    iteration (used by the steppers when cfg.newton_start == "prev");
    without it the iteration starts from R.
    """
    if not (beta > 0.0):
        raise ValueError(f"implicit solve needs beta > 0, got {beta}")
    if not (h > 0.0):
        raise StepSizeError(f"step size must be positive, got {h}")
    if cfg.enforce_step_bound and not (h * beta * model.L < 1.0):
        raise StepSizeError(
            f"h*beta*L = {h * beta * model.L} outside (0, 1); the implicit step is not guaranteed well-posed"
        )
    R = np.asarray(R, dtype=float)
    finite = np.isfinite(R).all(axis=-1)
    if not np.all(finite):
        if R.ndim == 1:
            return np.full_like(R, np.nan)
        out = np.full_like(R, np.nan)
        if np.any(finite):
            good = solve_implicit(
                model, beta, h, R[finite], cfg, None if x_start is None else np.asarray(x_start, float)[finite], step_index
            )
            out[finite] = good
        return out

    mode = cfg.mode
    if mode == "auto":
        mode = "closed_form" if model.closed_form_implicit is not None else "newton"
    if mode == "closed_form" and model.closed_form_implicit is None:
        if cfg.fallback_to_newton:
            mode = "newton"
        else:
            raise ValueError("model provides no closed-form implicit solve and fallback is disabled")

    if mode == "closed_form":
        return model.closed_form_implicit(beta, h, R)
    start = None
    if cfg.newton_start == "prev" and x_start is not None:
        start = np.asarray(x_start, dtype=float)
    return _newton_solve(model, beta, h, R, cfg, start, step_index)


def step_explicit_euler(model: SdeModel, x_prev, h: float, dW):
    """One classical Euler-Maruyama step: x + h f(x) + g(x) dW.

    Never solves an equation, and happily produces non-finite output when
    the dynamics run away — that behaviour is the point of keeping this
    scheme around as a comparison baseline.
    """
    x_prev = np.asarray(x_prev, dtype=float)
    dW = np.asarray(dW, dtype=float)
    return x_prev + h * model.drift(x_prev) + _apply_noise(model.diffusion(x_prev), dW)


def _bem_rhs(x_prev: np.ndarray, g_prev: np.ndarray, dW: np.ndarray) -> np.ndarray:
    return x_prev + _apply_noise(g_prev, dW)


def _bdf2_rhs(
    x_prev: np.ndarray,
    x_prev2: np.ndarray,
    g_prev: np.ndarray,
    g_prev2: np.ndarray,
    dW_cur: np.ndarray,
    dW_prev: np.ndarray,
) -> np.ndarray:
    return (
        (4.0 / 3.0) * x_prev
        - (1.0 / 3.0) * x_prev2
        + _apply_noise(g_prev, dW_cur)
        - (1.0 / 3.0) * _apply_noise(g_prev2, dW_prev)
    )


def step_bem(model: SdeModel, cfg: ImplicitSolverConfig, x_prev, h: float, dW, step_index=None):
    """One drift-implicit Euler-Maruyama step.

    Assembles R = x_prev + g(x_prev) dW and solves x - h f(x) = R.
    """
    x_prev = np.asarray(x_prev, dtype=float)
    dW = np.asarray(dW, dtype=float)
    R = _bem_rhs(x_prev, model.diffusion(x_prev), dW)
    return solve_implicit(model, 1.0, h, R, cfg, x_start=x_prev, step_index=step_index)


def step_bdf2(
    model: SdeModel,
    cfg: ImplicitSolverConfig,
    x_prev,
    x_prev2,
    h: float,
    dW_cur,
    dW_prev,
    step_index=None,
):
    """One two-step backward-differentiation step (normalized form).

    Assembles
        R = 4/3 x_prev - 1/3 x_prev2 + g(x_prev) dW_cur - 1/3 g(x_prev2) dW_prev
    and solves x - (2/3) h f(x) = R.
    """
    x_prev = np.asarray(x_prev, dtype=float)
    x_prev2 = np.asarray(x_prev2, dtype=float)
    R = _bdf2_rhs(
        x_prev,
        x_prev2,
        model.diffusion(x_prev),
        model.diffusion(x_prev2),
        np.asarray(dW_cur, dtype=float),
        np.asarray(dW_prev, dtype=float),
    )
    return solve_implicit(model, 2.0 / 3.0, h, R, cfg, x_start=x_prev, step_index=step_index)


def step_lmm(
    model: SdeModel,
    cfg: ImplicitSolverConfig,
    coeffs: SchemeCoefficients,
    state_history,
    drift_history,
    increment_history,
    h: float,
    step_index=None,
):
    """One step of a general k-step recursion given its coefficient tuples.

    Histories are ordered oldest first and have length k:
    ``state_history[i] = U^{j-k+i}``, ``drift_history[i] = f(state_history[i])``,
    ``increment_history[i] = dW^{j-k+1+i}`` (so the newest increment pairs with
    the newest old state).  Returns ``(x_next, f_next)`` so the caller can
    maintain the drift history without re-evaluating f.
    """
    k = coeffs.k
    if not (len(state_history) == len(drift_history) == len(increment_history) == k):
        raise ValueError(
            f"histories must all have length k={k}, got "
            f"{len(state_history)}/{len(drift_history)}/{len(increment_history)}"
        )
    R = None
    for i in range(k):
        contrib = (-coeffs.alpha[i]) * np.asarray(state_history[i], dtype=float)
        if coeffs.beta[i] != 0.0:
            contrib = contrib + (h * coeffs.beta[i]) * np.asarray(drift_history[i], dtype=float)
        if coeffs.gamma[i] != 0.0:
            g_i = model.diffusion(np.asarray(state_history[i], dtype=float))
            contrib = contrib + coeffs.gamma[i] * _apply_noise(
                g_i, np.asarray(increment_history[i], dtype=float)
            )
        R = contrib if R is None else R + contrib
    if coeffs.implicit:
        x_next = solve_implicit(
            model,
            coeffs.beta[k],
            h,
            R,
            cfg,
            x_start=np.asarray(state_history[-1], dtype=float),
            step_index=step_index,
        )
    else:
        x_next = R
    f_next = model.drift(x_next)
    return x_next, f_next


def integrate(
    model: SdeModel,
    coeffs: SchemeCoefficients,
    solver_cfg: ImplicitSolverConfig,
    init: InitialValuePolicy,
    grid: TimeGrid,
    increments: IncrementTable,
    x0,
    override_step_guard: bool = False,
) -> GridFunction:
    """Run a k-step recursion across the whole grid and return the trajectory.

    ``states[0]`` is the initial condition; for k >= 2 the remaining
    starting values come from the initial-value policy (chained implicit
    Euler steps, or copies of x0).  The drift is evaluated at most twice
    per step: once inside the implicit solve, once to maintain the history.
    Non-finite states propagate silently — explosion is recorded data, not
    an error — but a singular Newton linearization aborts with the failing
    step index attached.
    """
    if increments.grid != grid:
        raise ValueError("increment table grid does not match the integration grid")
    if increments.noise_dim != model.noise_dim:
        raise ValueError(
            f"increment table has d={increments.noise_dim}, model expects {model.noise_dim}"
        )
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.state_dim,):
        raise ValueError(f"x0 must have shape ({model.state_dim},), got {x0.shape}")
    guard = StepGuard.for_scheme(model, coeffs)
    guard.check(grid.h, override=override_step_guard)
    _stability_warnings(model, coeffs, grid.h)

    N, h, k = grid.N, grid.h, coeffs.k
    inc = increments.increments
    states = np.empty((N + 1, model.state_dim), dtype=float)
    states[0] = x0

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        hist_states = [x0]
        hist_drifts = [model.drift(x0)]
        # Starting values for multistep recursions.
        for j in range(1, min(k, N + 1)):
            if init.second == "copy_first":
                xj = x0.copy()
            else:
                try:
                    xj = step_bem(model, solver_cfg, hist_states[-1], h, inc[j - 1], step_index=j)
                except SolverSingularError as err:
                    raise SolverSingularError(
                        f"implicit solve failed at step {j}: {err}", step_index=j
                    ) from err
            states[j] = xj
            hist_states.append(xj)
            hist_drifts.append(model.drift(xj))
        hist_incs = [inc[j - 1] for j in range(1, min(k, N + 1))]

        for j in range(k, N + 1):
            hist_incs.append(inc[j - 1])
            try:
                x_next, f_next = step_lmm(
                    model,
                    solver_cfg,
                    coeffs,
                    hist_states,
                    hist_drifts,
                    hist_incs,
                    h,
                    step_index=j,
                )
            except SolverSingularError as err:
                raise SolverSingularError(
                    f"implicit solve failed at step {j}: {err}", step_index=j
                ) from err
            states[j] = x_next
            hist_states = hist_states[1:] + [x_next]
            hist_drifts = hist_drifts[1:] + [f_next]
            hist_incs = hist_incs[1:]

    return GridFunction(grid=grid, states=states)
