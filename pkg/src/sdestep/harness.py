"""Strong-error convergence studies with coupled reference solutions.

The workflow mirrors the classical measurement protocol for strong
convergence rates: per Monte Carlo sample, draw one fine Brownian
increment table, integrate a high-resolution reference trajectory with a
robust implicit scheme, then rerun every (scheme, step size) combination
on *coarsened* versions of the same increments and record the maximal
mean-square deviation over the coarse grid points,

    error(h) = max_n ( 1/M * sum_m |X_ref^{(m)}(t_n) - X_h^{n,(m)}|^2 )^{1/2}.

Reproducibility rules baked in here:

* every sample's noise comes from its own counter-based stream keyed by
  ``(base_seed, sample_index)``;
* samples are processed in fixed contiguous batches and batch partial
  sums are merged in batch order with compensated (Kahan) summation, so
  the output is bitwise identical for any number of worker threads;
* a sample whose compared states contain anything non-finite is counted
  as exploded and excluded from the mean — a table cell is rendered "-"
  once at least 0.1% of samples exploded.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .brownian import IncrementTable, SeedSpec, coarsen, generate_increments
from .core import (
    BACKWARD_EULER,
    BDF2,
    EXPLICIT_EULER,
    GridFunction,
    SdeModel,
    TimeGrid,
)
from .schemes import (
    ImplicitSolverConfig,
    StepGuard,
    _apply_noise,
    _stability_warnings,
    step_bdf2,
    step_bem,
    step_explicit_euler,
)

__all__ = [
    "ExperimentConfig",
    "SchemeCell",
    "LevelRow",
    "ErrorTable",
    "ResidualReport",
    "eoc",
    "cfl_indicator",
    "reference_trajectory",
    "strong_error",
    "run_convergence_study",
    "residual_defects",
    "estimate_residuals",
    "write_csv",
]

SCHEME_COEFFS = {"eulm": EXPLICIT_EULER, "bem": BACKWARD_EULER, "bdf2": BDF2}

#: Fraction of exploded samples at which a table cell is rendered "-".
EXPLOSION_RENDER_THRESHOLD = 1e-3

_DEFAULT_LEVELS = tuple(25 * 2**k for k in range(8))


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a convergence or residual study needs, seeds included.

    ``levels`` are the coarse step counts (ascending); ``ref_steps`` is the
    reference resolution and must be divisible by every level.  The
    reference is integrated with ``reference_scheme`` (the two-step method
    by default) using the ``second_init`` starting policy ("bem" advances
    one drift-implicit Euler step, "copy" repeats x0).  ``batch_size``
    fixes the deterministic sample partitioning and is therefore part of
    the reproducibility contract; ``threads`` only distributes the fixed
    batches and never changes results.
    """

    model: SdeModel
    x0: tuple[float, ...]
    T: float = 1.0
    schemes: tuple[str, ...] = ("eulm", "bem", "bdf2")
    levels: tuple[int, ...] = _DEFAULT_LEVELS
    samples: int = 10_000
    ref_steps: int = 25 * 2**12
    base_seed: int = 0
    threads: int = 1
    second_init: str = "bem"
    solver: ImplicitSolverConfig = ImplicitSolverConfig()
    reference_scheme: str = "bdf2"
    batch_size: int = 1024

    def __post_init__(self) -> None:
        object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))
        object.__setattr__(self, "schemes", tuple(self.schemes))
        object.__setattr__(self, "levels", tuple(int(n) for n in self.levels))
        if len(self.x0) != self.model.state_dim:
            raise ValueError(
                f"x0 has dimension {len(self.x0)}, model expects {self.model.state_dim}"
            )
        if not (self.T > 0.0):
            raise ValueError(f"horizon must be positive, got {self.T}")
        if not self.schemes:
            raise ValueError("need at least one scheme")
        for s in self.schemes:
            if s not in SCHEME_COEFFS:
                raise ValueError(f"unknown scheme {s!r}; available: {sorted(SCHEME_COEFFS)}")
        if len(set(self.schemes)) != len(self.schemes):
            raise ValueError("schemes must be unique")
        if not self.levels:
            raise ValueError("need at least one level")
        if any(n < 1 for n in self.levels):
            raise ValueError("levels must be positive step counts")
        if list(self.levels) != sorted(set(self.levels)):
            raise ValueError("levels must be strictly ascending")
        if self.ref_steps < max(self.levels):
            raise ValueError("ref_steps must be at least the finest level")
        for n in self.levels:
            if self.ref_steps % n != 0:
                raise ValueError(f"ref_steps={self.ref_steps} not divisible by level N={n}")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if not (0 <= self.base_seed < 2**64):
            raise ValueError("base_seed must fit in 64 bits")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.second_init not in ("bem", "copy"):
            raise ValueError(f"second_init must be 'bem' or 'copy', got {self.second_init!r}")
        if self.reference_scheme not in ("bem", "bdf2"):
            raise ValueError(f"reference scheme must be 'bem' or 'bdf2', got {self.reference_scheme!r}")

    @property
    def fine_grid(self) -> TimeGrid:
        return TimeGrid(T=self.T, N=self.ref_steps)

    def level_grid(self, n: int) -> TimeGrid:
        return TimeGrid(T=self.T, N=n)


def eoc(error_prev: float, error_cur: float, h_prev: float, h_cur: float) -> Optional[float]:
    """Estimated order of convergence between two (h, error) measurements.

    Returns ``(log e_cur - log e_prev) / (log h_cur - log h_prev)``, or
    None when undefined (non-finite or zero errors, equal step sizes).
    """
    if not (h_prev > 0 and h_cur > 0) or h_prev == h_cur:
        return None
    if not (np.isfinite(error_prev) and np.isfinite(error_cur)):
        return None
    if error_prev <= 0.0 or error_cur <= 0.0:
        return None
    return float(
        (math.log(error_cur) - math.log(error_prev)) / (math.log(h_cur) - math.log(h_prev))
    )


def cfl_indicator(lam: float, h: float) -> bool:
    """Whether the scalar stiff test multiplier survives explicit stepping: |1 - lam*h| < 1."""
    return bool(abs(1.0 - lam * h) < 1.0)


class _SchemeStepper:
    """Advances one named scheme step by step, handling start-up and history.

    States may be single ``(m,)`` vectors or batches ``(B, m)``; the
    stepper keeps whatever shape it was given.  For the two-step scheme the
    first call applies the starting policy (one drift-implicit Euler step,
    or a copy of x0) and the recursion proper begins with the second call,
    reusing the first increment as its oldest noise term.
    """

    def __init__(
        self,
        model: SdeModel,
        scheme: str,
        solver_cfg: ImplicitSolverConfig,
        h: float,
        x0: np.ndarray,
        second_init: str = "bem",
        override_step_guard: bool = False,
    ):
        if scheme not in SCHEME_COEFFS:
            raise ValueError(f"unknown scheme {scheme!r}")
        coeffs = SCHEME_COEFFS[scheme]
        StepGuard.for_scheme(model, coeffs).check(h, override=override_step_guard)
        _stability_warnings(model, coeffs, h)
        self.model = model
        self.scheme = scheme
        self.cfg = solver_cfg
        self.h = h
        self.second_init = second_init
        self.x = np.array(x0, dtype=float)
        self.j = 0
        self._x_old: np.ndarray | None = None
        self._dW_prev: np.ndarray | None = None

    def advance(self, dW: np.ndarray) -> np.ndarray:
        self.j += 1
        j = self.j
        if self.scheme == "eulm":
            x_next = step_explicit_euler(self.model, self.x, self.h, dW)
        elif self.scheme == "bem":
            x_next = step_bem(self.model, self.cfg, self.x, self.h, dW, step_index=j)
        else:
            if j == 1:
                if self.second_init == "copy":
                    x_next = self.x.copy()
                else:
                    x_next = step_bem(self.model, self.cfg, self.x, self.h, dW, step_index=1)
            else:
                x_next = step_bdf2(
                    self.model, self.cfg, self.x, self._x_old, self.h, dW, self._dW_prev, step_index=j
                )
            self._x_old = self.x
            self._dW_prev = dW
        self.x = x_next
        return x_next


def _run_named_scheme(
    model: SdeModel,
    scheme: str,
    solver_cfg: ImplicitSolverConfig,
    table: IncrementTable,
    x0: np.ndarray,
    second_init: str = "bem",
) -> np.ndarray:
    """Full trajectory (N+1, m) of one named scheme over one increment table."""
    grid = table.grid
    states = np.empty((grid.N + 1,) + x0.shape, dtype=float)
    states[0] = x0
    stepper = _SchemeStepper(model, scheme, solver_cfg, grid.h, x0, second_init)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for j in range(1, grid.N + 1):
            states[j] = stepper.advance(table.increments[j - 1])
    return states


def reference_trajectory(config: ExperimentConfig, sample_index: int) -> GridFunction:
    """The fine reference trajectory for one sample of a study."""
    table = generate_increments(
        config.fine_grid, config.model.noise_dim, SeedSpec(config.base_seed, sample_index)
    )
    states = _run_named_scheme(
        config.model,
        config.reference_scheme,
        config.solver,
        table,
        np.asarray(config.x0, dtype=float),
        config.second_init,
    )
    return GridFunction(grid=config.fine_grid, states=states)


def _kahan_add(total: np.ndarray, comp: np.ndarray, value: np.ndarray) -> None:
    """One compensated-summation update, in place."""
    y = value - comp
    t = total + y
    comp[:] = (t - total) - y
    total[:] = t


def strong_error(
    config: ExperimentConfig,
    scheme: str,
    n_steps: int,
    references: Sequence[GridFunction],
) -> tuple[float, int]:
    """Strong error of one scheme at one level against supplied references.

    ``references[i]`` must be the fine-grid reference of sample index i
    (same base seed); the sample's noise is regenerated here and coarsened
    onto the level grid, so scheme and reference see the same Brownian
    path.  Returns ``(error, exploded_count)``; the error is NaN when
    every sample exploded.
    """
    if scheme not in SCHEME_COEFFS:
        raise ValueError(f"unknown scheme {scheme!r}")
    if config.ref_steps % n_steps != 0:
        raise ValueError(f"level N={n_steps} does not divide ref_steps={config.ref_steps}")
    factor = config.ref_steps // n_steps
    x0 = np.asarray(config.x0, dtype=float)
    total = np.zeros(n_steps + 1)
    comp = np.zeros(n_steps + 1)
    valid = 0
    exploded = 0
    for idx, ref in enumerate(references):
        if ref.grid != config.fine_grid:
            raise ValueError(f"reference {idx} lives on {ref.grid}, expected {config.fine_grid}")
        fine = generate_increments(
            config.fine_grid, config.model.noise_dim, SeedSpec(config.base_seed, idx)
        )
        level_table = coarsen(fine, factor)
        states = _run_named_scheme(
            config.model, scheme, config.solver, level_table, x0, config.second_init
        )
        ref_states = ref.states[::factor]
        with np.errstate(over="ignore", invalid="ignore"):
            dev = states - ref_states
            devsq = np.sum(dev * dev, axis=-1)
        if not np.isfinite(devsq).all():
            exploded += 1
            continue
        _kahan_add(total, comp, devsq)
        valid += 1
    if valid == 0:
        return float("nan"), exploded
    return float(np.sqrt(np.max(total / valid))), exploded


@dataclass(frozen=True)
class SchemeCell:
    """One (level, scheme) table entry."""

    error: float
    eoc: Optional[float]
    exploded: int
    samples: int

    @property
    def is_exploded(self) -> bool:
        if self.samples == 0 or not np.isfinite(self.error):
            return True
        return self.exploded / self.samples >= EXPLOSION_RENDER_THRESHOLD


@dataclass(frozen=True)
class LevelRow:
    n_steps: int
    h: float
    cells: dict[str, SchemeCell]


@dataclass(frozen=True)
class ErrorTable:
    """Convergence-study result: one row per level, one cell per scheme."""

    schemes: tuple[str, ...]
    rows: tuple[LevelRow, ...]
    samples: int

    def cell(self, n_steps: int, scheme: str) -> SchemeCell:
        for row in self.rows:
            if row.n_steps == n_steps:
                return row.cells[scheme]
        raise KeyError(f"no level with N={n_steps}")

    def render_csv(self) -> str:
        """CSV text: N, h, then (error, eoc, exploded) per scheme.

        Errors carry 6 significant digits, orders two decimals; an
        exploded cell renders "-" with its EOC left blank, as does the EOC
        of the following row (no finite predecessor).  Ends with a newline.
        """
        header = "N,h" + "".join(
            f",{s}_error,{s}_eoc,{s}_exploded" for s in self.schemes
        )
        lines = [header]
        for row in self.rows:
            parts = [str(row.n_steps), f"{row.h:g}"]
            for s in self.schemes:
                cell = row.cells[s]
                if cell.is_exploded:
                    parts.append("-")
                else:
                    parts.append(f"{cell.error:.6g}")
                parts.append("" if cell.eoc is None else f"{cell.eoc:.2f}")
                parts.append(str(cell.exploded))
            lines.append(",".join(parts))
        return "\n".join(lines) + "\n"


def write_csv(table: ErrorTable, path) -> None:
    """Write a rendered error table to ``path`` (UTF-8)."""
    text = table.render_csv()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# Batched study engine
# ---------------------------------------------------------------------------


def _batch_ranges(samples: int, batch_size: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + batch_size, samples)) for lo in range(0, samples, batch_size)]


def _chunk_steps(ref_steps: int, factors: Sequence[int]) -> int:
    """Time-chunk length: the lcm of all coarsening factors (capped by ref_steps)."""
    chunk = 1
    for f in factors:
        chunk = chunk * f // math.gcd(chunk, f)
        if chunk >= ref_steps:
            return ref_steps
    return chunk


def _reference_pass(config: ExperimentConfig, lo: int, hi: int):
    """Integrate the fine reference for samples [lo, hi) in time chunks.

    Returns ``(snapshots, coarse_incs)``: per level, the reference states
    restricted to the level grid, shape (B, N_l+1, m), and the coarsened
    increments, shape (B, N_l, d).  Coarse rows are accumulated from fine
    rows in ascending index order, exactly as :func:`brownian.coarsen`.
    """
    model = config.model
    B = hi - lo
    d = model.noise_dim
    m = model.state_dim
    ref_steps = config.ref_steps
    h_fine = config.fine_grid.h
    sqrt_h = np.sqrt(h_fine)
    factors = {n: ref_steps // n for n in config.levels}
    gcd_all = 0
    for f in factors.values():
        gcd_all = math.gcd(gcd_all, f)
    chunk = _chunk_steps(ref_steps, list(factors.values()))

    gens = [SeedSpec(config.base_seed, idx).generator() for idx in range(lo, hi)]
    x0 = np.repeat(np.asarray(config.x0, dtype=float)[None, :], B, axis=0)

    snapshots = {n: np.empty((B, n + 1, m)) for n in config.levels}
    coarse_incs = {n: np.empty((B, n, d)) for n in config.levels}
    for n in config.levels:
        snapshots[n][:, 0, :] = x0

    stepper = _SchemeStepper(
        model, config.reference_scheme, config.solver, h_fine, x0, config.second_init
    )
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        consumed = 0
        while consumed < ref_steps:
            c = min(chunk, ref_steps - consumed)
            fine_chunk = np.stack([g.standard_normal((c, d)) for g in gens]) * sqrt_h
            for n, f in factors.items():
                if c % f == 0:
                    view = fine_chunk.reshape(B, c // f, f, d)
                    acc = view[:, :, 0, :].copy()
                    for i in range(1, f):
                        acc += view[:, :, i, :]
                    coarse_incs[n][:, consumed // f : (consumed + c) // f, :] = acc
                else:  # ragged tail chunk: fall back to row-by-row accumulation
                    for r in range(c):
                        g_row = consumed + r
                        if g_row % f == 0:
                            coarse_incs[n][:, g_row // f, :] = fine_chunk[:, r, :]
                        else:
                            coarse_incs[n][:, g_row // f, :] += fine_chunk[:, r, :]
            for t in range(c):
                x = stepper.advance(fine_chunk[:, t, :])
                g_step = consumed + t + 1
                if g_step % gcd_all == 0:
                    for n, f in factors.items():
                        if g_step % f == 0:
                            snapshots[n][:, g_step // f, :] = x
            consumed += c
    return snapshots, coarse_incs


def _study_batch(config: ExperimentConfig, lo: int, hi: int):
    """Per-batch partial sums for every (level, scheme) pair."""
    model = config.model
    B = hi - lo
    x0 = np.repeat(np.asarray(config.x0, dtype=float)[None, :], B, axis=0)
    snapshots, coarse_incs = _reference_pass(config, lo, hi)

    out = {}
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for n in config.levels:
            h = config.level_grid(n).h
            ref_states = snapshots[n]
            inc = coarse_incs[n]
            for scheme in config.schemes:
                stepper = _SchemeStepper(model, scheme, config.solver, h, x0, config.second_init)
                devsq = np.empty((B, n + 1))
                devsq[:, 0] = 0.0
                for j in range(1, n + 1):
                    x = stepper.advance(inc[:, j - 1, :])
                    dev = x - ref_states[:, j, :]
                    devsq[:, j] = np.sum(dev * dev, axis=-1)
                valid = np.isfinite(devsq).all(axis=1)
                devsq[~valid] = 0.0
                out[(n, scheme)] = (
                    devsq.sum(axis=0),
                    int(valid.sum()),
                    int(B - valid.sum()),
                )
    return out


def run_convergence_study(config: ExperimentConfig) -> ErrorTable:
    """Run the full coupled-reference study and return the error table.

    Samples are split into fixed contiguous batches; each batch integrates
    its reference and all (level, scheme) combinations against the same
    coarsened noise, and the per-gridpoint squared deviations are merged
    across batches with compensated summation in batch order.  The result
    is a deterministic function of the config alone — thread count only
    spreads batches over workers.
    """
    ranges = _batch_ranges(config.samples, config.batch_size)
    if config.threads > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            partials = list(pool.map(lambda r: _study_batch(config, *r), ranges))
    else:
        partials = [_study_batch(config, *r) for r in ranges]

    rows = []
    totals = {
        (n, s): (np.zeros(n + 1), np.zeros(n + 1), 0, 0)
        for n in config.levels
        for s in config.schemes
    }
    for part in partials:
        for key, (sq, valid, exploded) in part.items():
            total, comp, v0, e0 = totals[key]
            _kahan_add(total, comp, sq)
            totals[key] = (total, comp, v0 + valid, e0 + exploded)

    prev: dict[str, tuple[float, float] | None] = {s: None for s in config.schemes}
    for n in config.levels:
        h = config.level_grid(n).h
        cells = {}
        for s in config.schemes:
            total, _comp, valid, exploded = totals[(n, s)]
            if valid > 0:
                error = float(np.sqrt(np.max(total / valid)))
            else:
                error = float("nan")
            cell_exploded = SchemeCell(error, None, exploded, config.samples).is_exploded
            order = None
            if not cell_exploded and prev[s] is not None:
                order = eoc(prev[s][0], error, prev[s][1], h)
            cells[s] = SchemeCell(error=error, eoc=order, exploded=exploded, samples=config.samples)
            prev[s] = None if cell_exploded else (error, h)
        rows.append(LevelRow(n_steps=n, h=h, cells=cells))
    return ErrorTable(schemes=config.schemes, rows=tuple(rows), samples=config.samples)


# ---------------------------------------------------------------------------
# Residual diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResidualReport:
    """Per-level maxima of the Monte Carlo L2 norms of local defects.

    For the reference path restricted to each level grid, three defects
    are measured per step j: the one-step (drift-implicit Euler) defect

        rho^j = h f(V^j) + g(V^{j-1}) dW^j - V^j + V^{j-1},

    which is also the first defect term of the two-step scheme, and the
    sum of the two extra terms the two-step form introduces
    (a trapezoidal drift correction and the shifted-noise correction).
    ``ratios`` divide each level's maximum by the next finer one; values
    near 2 indicate the defect shrinks linearly with h.
    """

    levels: tuple[int, ...]
    h: tuple[float, ...]
    samples: int
    bem_defect: tuple[float, ...]
    bdf2_one_defect: tuple[float, ...]
    bdf2_pair_defect: tuple[float, ...]

    @staticmethod
    def _ratios(values: Sequence[float]) -> tuple[float, ...]:
        out = []
        for prev_v, cur_v in zip(values, values[1:]):
            out.append(prev_v / cur_v if cur_v > 0 else float("nan"))
        return tuple(out)

    @property
    def bem_ratios(self) -> tuple[float, ...]:
        return self._ratios(self.bem_defect)

    @property
    def bdf2_pair_ratios(self) -> tuple[float, ...]:
        return self._ratios(self.bdf2_pair_defect)


def residual_defects(model: SdeModel, states: np.ndarray, increments: np.ndarray, h: float):
    """Local defects of a discrete path inserted into the scheme recursions.

    ``states`` has shape (..., N+1, m) and ``increments`` (..., N, d).
    Returns ``(one, pair)``: the one-step defect

        one[j-1] = h f(V^j) + g(V^{j-1}) dW^j - V^j + V^{j-1},   j = 1..N,

    with shape (..., N, m), and the sum of the two extra defect terms of
    the two-step scheme (trapezoidal drift correction plus shifted-noise
    correction), shape (..., N-1, m), defined for j = 2..N.
    """
    V = np.asarray(states, dtype=float)
    dW = np.asarray(increments, dtype=float)
    fV = model.drift(V)
    gV = model.diffusion(V)
    noise = _apply_noise(gV[..., :-1, :, :], dW)  # g(V^{j-1}) dW^j, j = 1..N
    one = h * fV[..., 1:, :] + noise - V[..., 1:, :] + V[..., :-1, :]
    # trapezoidal drift correction (j = 2..N) ...
    half = 0.5 * (h * fV[..., :-1, :] + noise - V[..., 1:, :] + V[..., :-1, :])
    # ... plus the shifted-noise correction, built from its own stencil
    shifted = -0.5 * (
        h * fV[..., 1:-1, :] + noise[..., :-1, :] - V[..., 1:-1, :] + V[..., :-2, :]
    )
    pair = half[..., 1:, :] + shifted
    return one, pair


def _residual_batch(config: ExperimentConfig, lo: int, hi: int):
    model = config.model
    snapshots, coarse_incs = _reference_pass(config, lo, hi)
    out = {}
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for n in config.levels:
            h = config.level_grid(n).h
            one, pair = residual_defects(model, snapshots[n], coarse_incs[n], h)
            one_sq = np.sum(one * one, axis=-1)
            pair_sq = np.sum(pair * pair, axis=-1)
            valid = np.isfinite(one_sq).all(axis=1) & np.isfinite(pair_sq).all(axis=1)
            one_sq[~valid] = 0.0
            pair_sq[~valid] = 0.0
            out[n] = (
                one_sq.sum(axis=0),
                pair_sq.sum(axis=0),
                int(valid.sum()),
            )
    return out


def estimate_residuals(config: ExperimentConfig, samples: int | None = None) -> ResidualReport:
    """Measure how the reference path's local defects scale across levels.

    Integrates the fine reference per sample, restricts it to each level
    grid, and evaluates the per-step defect formulas above under the
    coarsened noise.  ``samples`` overrides ``config.samples`` (residual
    studies are usually much cheaper than error studies).
    """
    if samples is not None:
        config = replace(config, samples=int(samples))
    if config.samples < 100:
        raise ValueError(
            "residual estimation needs at least 100 samples for a stable "
            f"Monte Carlo norm, got {config.samples}"
        )
    ranges = _batch_ranges(config.samples, config.batch_size)
    if config.threads > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            partials = list(pool.map(lambda r: _residual_batch(config, *r), ranges))
    else:
        partials = [_residual_batch(config, *r) for r in ranges]

    bem_max, pair_max, hs = [], [], []
    for n in config.levels:
        total_one = np.zeros(n)
        comp_one = np.zeros(n)
        total_pair = np.zeros(max(n - 1, 0))
        comp_pair = np.zeros(max(n - 1, 0))
        valid = 0
        for part in partials:
            one_sq, pair_sq, v = part[n]
            _kahan_add(total_one, comp_one, one_sq)
            _kahan_add(total_pair, comp_pair, pair_sq)
            valid += v
        if valid == 0:
            bem_max.append(float("nan"))
            pair_max.append(float("nan"))
        else:
            bem_max.append(float(np.sqrt(np.max(total_one / valid))))
            pair_max.append(
                float(np.sqrt(np.max(total_pair / valid))) if n >= 2 else float("nan")
            )
        hs.append(config.level_grid(n).h)
    return ResidualReport(
        levels=config.levels,
        h=tuple(hs),
        samples=config.samples,
        bem_defect=tuple(bem_max),
        bdf2_one_defect=tuple(bem_max),
        bdf2_pair_defect=tuple(pair_max),
    )
