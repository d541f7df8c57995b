"""Seeded Brownian increment tables and exact grid coarsening.

Strong-error studies compare several step sizes against a fine reference
driven by the *same* Brownian path, so the increments for every coarse
grid must aggregate the fine ones exactly.  A counter-based generator
(Philox) keyed by ``(base_seed, sample_index)`` gives every Monte Carlo
sample its own reproducible stream, independent of batching or thread
scheduling.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .core import TimeGrid

__all__ = [
    "SeedSpec",
    "IncrementTable",
    "generate_increments",
    "coarsen",
    "dump_increments",
    "load_increments",
]

_HEADER = struct.Struct("<qqd")  # N, d as signed 64-bit LE, h as float64 LE


@dataclass(frozen=True)
class SeedSpec:
    """Identifies one sample's noise stream: (base_seed, sample_index)."""

    base_seed: int
    sample_index: int = 0

    def __post_init__(self) -> None:
        if not (0 <= self.base_seed < 2**64):
            raise ValueError(f"base_seed must fit in 64 bits, got {self.base_seed}")
        if self.sample_index < 0:
            raise ValueError(f"sample_index must be >= 0, got {self.sample_index}")

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this sample's stream."""
        return np.random.Generator(np.random.Philox(key=[self.base_seed, self.sample_index]))


@dataclass(frozen=True)
class IncrementTable:
    """Brownian increments on a grid: row j-1 holds dW^j = W(t_j) - W(t_{j-1})."""

    grid: TimeGrid
    noise_dim: int
    increments: np.ndarray  # shape (N, d)

    def __post_init__(self) -> None:
        if self.noise_dim < 1:
            raise ValueError(f"noise_dim must be >= 1, got {self.noise_dim}")
        inc = np.asarray(self.increments, dtype=float)
        if inc.shape != (self.grid.N, self.noise_dim):
            raise ValueError(
                f"increments must have shape (N, d) = ({self.grid.N}, {self.noise_dim}),"
                f" got {inc.shape}"
            )
        if inc.flags.writeable:
            inc = inc.copy()
            inc.flags.writeable = False
        object.__setattr__(self, "increments", inc)

    def total_displacement(self) -> np.ndarray:
        """W(T) - W(0), i.e. the column sums of the table."""
        return self.increments.sum(axis=0)


def generate_increments(grid: TimeGrid, noise_dim: int, seed: SeedSpec) -> IncrementTable:
    """Draw the full table of N(0, h) increments for one sample.

    The table is filled row-major from the sample's own counter-based
    stream, so the result depends only on ``(grid, noise_dim, seed)`` and
    never on how many other samples are being generated concurrently.
    """
    if noise_dim < 1:
        raise ValueError(f"noise_dim must be >= 1, got {noise_dim}")
    rng = seed.generator()
    inc = rng.standard_normal((grid.N, noise_dim)) * np.sqrt(grid.h)
    return IncrementTable(grid=grid, noise_dim=noise_dim, increments=inc)


def coarsen(table: IncrementTable, factor: int) -> IncrementTable:
    """Aggregate a fine table onto a grid with ``factor`` times fewer steps.

    Coarse row j is the sum of fine rows j*factor .. (j+1)*factor - 1,
    accumulated in ascending index order.  This reproduces the increments
    the coarse grid would see from the same underlying Brownian path.
    ``factor`` must divide the fine step count; ``factor == 1`` returns an
    identical table.
    """
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    fine = table.grid
    if fine.N % factor != 0:
        raise ValueError(f"factor {factor} does not divide N={fine.N}")
    if factor == 1:
        return table
    coarse_grid = TimeGrid(T=fine.T, N=fine.N // factor)
    blocks = table.increments.reshape(coarse_grid.N, factor, table.noise_dim)
    out = blocks[:, 0, :].copy()
    for i in range(1, factor):
        out += blocks[:, i, :]
    return IncrementTable(grid=coarse_grid, noise_dim=table.noise_dim, increments=out)


def dump_increments(table: IncrementTable, path) -> None:
    """Write a table to disk: header (N, d, h) then row-major float64 data.

    All fields are little-endian 64-bit; the payload is exactly N*d doubles.
    """
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(table.grid.N, table.noise_dim, table.grid.h))
        fh.write(np.ascontiguousarray(table.increments, dtype="<f8").tobytes())


def load_increments(path) -> IncrementTable:
    """Read a table written by :func:`dump_increments`."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) != _HEADER.size:
            raise ValueError(f"truncated header in {path}")
        n, d, h = _HEADER.unpack(raw)
        if n < 1 or d < 1 or not (h > 0):
            raise ValueError(f"invalid header (N={n}, d={d}, h={h}) in {path}")
        payload = fh.read(8 * n * d)
        if len(payload) != 8 * n * d:
            raise ValueError(f"truncated payload in {path}")
    inc = np.frombuffer(payload, dtype="<f8").astype(float).reshape(n, d)
    grid = TimeGrid(T=h * n, N=n)
    return IncrementTable(grid=grid, noise_dim=d, increments=inc)
