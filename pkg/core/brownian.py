"""Reproducible Brownian ensembles.

Paths are filled in fixed blocks of BLOCK_PATHS paths. Each block draws from
its own Philox stream keyed by the ensemble seed with the block index in the
counter, so the fill order (and the number of worker threads) never changes
the result. Gaussians come from inverse-CDF mapping of open-interval uniforms.
"""

import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import numpy.typing as npt
from scipy.special import ndtri

from config import BLOCK_PATHS
from core.errors import ValidationError
from core.model import PathEnsemble, TimeGrid

logger = logging.getLogger(__name__)

_HALF_ULP = 2.0 ** -54


def block_stream(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed, counter=[block, 0, 0, 0]))


def gaussian_block(seed: int, block: int, paths: int, cells: int, d: int) -> npt.NDArray[np.float64]:
    """Standard normal draws of shape (paths, cells, d) for one block."""
    uniforms = block_stream(seed, block).random((paths, cells, d)) + _HALF_ULP
    return ndtri(uniforms)


def simulate_ensemble(grid: TimeGrid, d: int, M: int, seed: int, threads: int = 1) -> PathEnsemble:
    if M < 1 or d < 1:
        raise ValidationError(f"need M >= 1 and d >= 1, got M={M}, d={d}")
    if not 0 <= seed < 2 ** 64:
        raise ValidationError(f"seed must be an unsigned 64-bit integer, got {seed}")
    if threads < 1:
        raise ValidationError(f"threads must be positive, got {threads}")

    N = grid.N
    scale = np.sqrt(grid.widths)[None, :, None]
    increments = np.empty((M, N, d))
    blocks = (M + BLOCK_PATHS - 1) // BLOCK_PATHS

    def fill(block: int) -> None:
        start = block * BLOCK_PATHS
        stop = min(start + BLOCK_PATHS, M)
        increments[start:stop] = gaussian_block(seed, block, stop - start, N, d) * scale

    if threads == 1:
        for block in range(blocks):
            fill(block)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, range(blocks)))

    values = np.zeros((M, N + 1, d))
    values[:, 1:, :] = np.cumsum(increments, axis=1)
    logger.info(f"Simulated {M} paths, d={d}, N={N}, seed={seed} ({blocks} blocks, {threads} threads)")
    return PathEnsemble(grid=grid, d=d, M=M, values=values, seed=seed)


def antithetic_pairing(ensemble: PathEnsemble) -> PathEnsemble:
    """Append the reflected paths: path M+m carries the negated increments of path m."""
    values = np.concatenate([ensemble.values, 0.0 - ensemble.values], axis=0)
    return PathEnsemble(grid=ensemble.grid, d=ensemble.d, M=2 * ensemble.M,
                        values=values, seed=ensemble.seed, antithetic=True)


def make_ensemble(grid: TimeGrid, d: int, M: int, seed: int, threads: int = 1,
                  antithetic: bool = False) -> PathEnsemble:
    """simulate_ensemble, or M/2 simulated paths plus their reflections when antithetic."""
    if not antithetic:
        return simulate_ensemble(grid, d, M, seed, threads)
    if M % 2:
        raise ValidationError(f"antithetic ensembles need an even path count, got {M}")
    return antithetic_pairing(simulate_ensemble(grid, d, M // 2, seed, threads))
