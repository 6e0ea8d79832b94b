"""Gumbel-perturbed (Plackett-Luce) variants of the relaxed sorting operators.

Sorting ``s + z`` with ``z`` i.i.d. standard Gumbel draws a permutation from
the Plackett-Luce distribution with weights ``exp(s)``.  Relaxing the sort
with SoftSort or NeuralSort gives a reparameterised, differentiable sample.
Noise comes from numpy's PCG64 generator, whose stream is fixed across
platforms for a given seed.
"""

from __future__ import annotations

import logging

import numpy as np

from . import core
from .core import L1, InvalidInputError

logger = logging.getLogger(__name__)

U_CLAMP = 1e-12


def _generator(seed) -> np.random.Generator:
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise InvalidInputError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def _gumbel_from(rng: np.random.Generator, shape) -> np.ndarray:
    u = np.clip(rng.random(shape), U_CLAMP, 1.0 - U_CLAMP)
    return -np.log(-np.log(u))


def sample_gumbel(n_s: int, n: int, seed: int = 0) -> np.ndarray:
    """``(n_s, n)`` i.i.d. standard Gumbel samples ``-log(-log(U))``."""
    if n_s < 1 or n < 1:
        raise InvalidInputError("n_s and n must both be >= 1")
    return _gumbel_from(_generator(seed), (n_s, n))


def stochastic_relaxed_sort(s, tau: float = 1.0, d=L1, n_s: int = 1, seed: int = 0,
                            operator: str = "softsort", noise=None) -> np.ndarray:
    """Relaxed permutation matrices of ``s + z_k`` for ``k = 1..n_s``.

    Returns an array of shape ``(n_s, n, n)``.  ``noise`` overrides the Gumbel
    draw (shape ``(n_s, n)``); ``d`` is ignored for NeuralSort.  A perturbed
    vector with tied entries has its noise redrawn and the event is logged.
    """
    s = core.check_scores(s)
    if s.ndim != 1:
        raise InvalidInputError("stochastic_relaxed_sort expects a single score vector")
    if operator not in ("softsort", "neuralsort"):
        raise InvalidInputError(f"unknown operator {operator!r}")
    if n_s < 1:
        raise InvalidInputError("n_s must be >= 1")
    n = s.size
    if noise is None:
        rng = _generator(seed)
        z = _gumbel_from(rng, (n_s, n))
    else:
        rng = None
        z = np.array(noise, dtype=np.float64)
        if z.shape != (n_s, n):
            raise InvalidInputError(f"noise must have shape {(n_s, n)}, got {z.shape}")
    perturbed = s + z
    if n > 1:
        gaps = -np.diff(core.sort_desc(perturbed), axis=-1)
        for k in np.flatnonzero((gaps <= 0).any(axis=-1)):
            if rng is None:
                rng = _generator(seed)
            while True:
                logger.warning("tie in perturbed sample %d; redrawing its noise", k)
                perturbed[k] = s + _gumbel_from(rng, n)
                if core.min_gap(perturbed[k]) > 0:
                    break
    if operator == "softsort":
        return core.soft_sort(perturbed, tau, d)
    return core.neural_sort(perturbed, tau)
