"""Triangular-noise perturbation, posterior denoising, and score recovery.

Integer-valued states perturbed with per-dimension tent noise on (-1, 1)
keep their density ratios at integer points, so a score learned on the
clean data determines everything about the perturbed density. Within
each unit cell the posterior over the 2^D surrounding integer corners is
closed-form (tent weights times density ratios), the gradient of the
perturbed log-density follows from per-dimension corner aggregates, and
a Langevin chain over the continuous perturbed density can be denoised
exactly by sampling that posterior.

Corner enumeration is 2^D, capped at D = 12.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .exact import TabularDistribution, reconstruct_density
from .graphs import NeighborhoodStructure

POSTERIOR_DIM_CAP = 12

RatioFn = Callable[[Sequence[int], Sequence[int]], float]


def triangular_pdf(u: np.ndarray) -> float | np.ndarray:
    """Density of the product tent distribution, prod_d max(0, 1 - |u_d|).

    The last axis is the dimension axis; leading axes broadcast.
    """
    u = np.asarray(u, dtype=np.float64)
    vals = np.maximum(0.0, 1.0 - np.abs(u))
    out = vals.prod(axis=-1)
    return float(out) if out.ndim == 0 else out


def sample_triangular(shape, rng: np.random.Generator) -> np.ndarray:
    """Tent-distributed draws on (-1, 1) by inverse CDF."""
    u = rng.random(shape)
    return np.where(u < 0.5, np.sqrt(2.0 * u) - 1.0, 1.0 - np.sqrt(2.0 * (1.0 - u)))


def perturb(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Add independent tent noise to integer states ((D,) or (M, D))."""
    x = np.asarray(x, dtype=np.float64)
    return x + sample_triangular(x.shape, rng)


def make_ratio_fn(dist: TabularDistribution) -> RatioFn:
    """Neighboring-corner mass ratio p(y)/p(x) backed by an exact table.

    States outside the space count as zero mass. Conventions: zero
    numerator (including 0/0) gives 0.0, zero denominator alone gives
    inf; the posterior machinery re-anchors around these.
    """
    space = dist.space

    def mass(state) -> float:
        if not space.contains(state):
            return 0.0
        return float(dist.mass[space.index_of(tuple(int(v) for v in state))])

    def ratio(y, x) -> float:
        py, px = mass(y), mass(x)
        if py == 0.0:
            return 0.0
        if px == 0.0:
            return np.inf
        return py / px

    return ratio


def ratio_fn_from_score_model(
    model, structure: NeighborhoodStructure, support=None
) -> RatioFn:
    """Ratio closure from a trained score model.

    Path products along the connected graph pin down every mass ratio;
    this just reconstructs the full distribution once and serves ratios
    from the table.
    """
    recon = reconstruct_density(
        lambda s: model.score_vector(structure, s), structure, support=support
    )
    return make_ratio_fn(recon)


def _cell_corners(x_tilde: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(base corner, fractional offsets, all 2^D corner states)."""
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    ndim = x_tilde.size
    if ndim > POSTERIOR_DIM_CAP:
        raise ValueError(f"corner enumeration caps at {POSTERIOR_DIM_CAP} dims, got {ndim}")
    base = np.floor(x_tilde).astype(np.int64)
    t = x_tilde - base
    bits = (np.arange(2**ndim)[:, None] >> np.arange(ndim)[None, :]) & 1
    corners = base[None, :] + bits
    return base, t, corners


def _corner_relative_masses(corners: np.ndarray, ratio_fn: RatioFn) -> np.ndarray:
    """Masses of all cell corners relative to a positive anchor corner.

    Probes self-ratios to find an anchor with positive mass, then walks
    the corner hypercube breadth-first; every positive corner is reached
    through a positive shortest path because in-range coordinates form a
    per-dimension product set.
    """
    m = corners.shape[0]
    anchor = next(
        (i for i in range(m) if ratio_fn(corners[i], corners[i]) == 1.0), None
    )
    if anchor is None:
        raise ValueError("all corner masses are zero at this point")
    rel = np.full(m, -1.0)
    rel[anchor] = 1.0
    frontier = [anchor]
    while frontier:
        nxt = []
        for cur in frontier:
            for d in range(corners.shape[1]):
                other = cur ^ (1 << d)
                if rel[other] >= 0:
                    continue
                r = ratio_fn(corners[other], corners[cur])
                if rel[cur] == 0.0 and np.isinf(r):
                    continue  # let a positive-mass predecessor claim it
                rel[other] = rel[cur] * r
                nxt.append(other)
        frontier = nxt
    rel[rel < 0] = 0.0
    return rel


def _tent_weights(t: np.ndarray, ndim: int) -> np.ndarray:
    """(2^D, D) per-dimension tent factors for every corner."""
    bits = (np.arange(2**ndim)[:, None] >> np.arange(ndim)[None, :]) & 1
    return np.where(bits == 1, t[None, :], 1.0 - t[None, :])


def posterior_weights(
    x_tilde: np.ndarray, ratio_fn: RatioFn
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior over the clean integer corners of the cell holding x_tilde.

    Returns (corners, weights) with weights proportional to mass ratio
    times the product of tent factors, normalized to sum to one. Exact
    integer coordinates put all of that dimension's weight on the lower
    corner.
    """
    _, t, corners = _cell_corners(x_tilde)
    rel = _corner_relative_masses(corners, ratio_fn)
    w = rel * _tent_weights(t, corners.shape[1]).prod(axis=1)
    total = w.sum()
    if total <= 0:
        raise ValueError("posterior has zero total weight at this point")
    return corners, w / total


def denoise_sample(
    x_tilde: np.ndarray, ratio_fn: RatioFn, rng: np.random.Generator
) -> tuple[int, ...]:
    """Draw a clean state from the corner posterior."""
    corners, w = posterior_weights(x_tilde, ratio_fn)
    pick = rng.choice(corners.shape[0], p=w)
    return tuple(int(v) for v in corners[pick])


def recover_stein_score(x_tilde: np.ndarray, ratio_fn: RatioFn) -> np.ndarray:
    """Gradient of the perturbed log-density at a continuous point.

    Dimension d mixes the cell's corner masses into lower/upper
    aggregates A and B using the other dimensions' tent factors; the
    score is (B - A) / (A (1 - t_d) + B t_d). With one dimension this is
    exactly (r - 1) / (r t + (1 - t)) for the neighbor ratio r.
    """
    _, t, corners = _cell_corners(x_tilde)
    ndim = corners.shape[1]
    rel = _corner_relative_masses(corners, ratio_fn)
    tent = _tent_weights(t, ndim)
    bits = (np.arange(2**ndim)[:, None] >> np.arange(ndim)[None, :]) & 1
    out = np.empty(ndim)
    for d in range(ndim):
        others = np.delete(tent, d, axis=1).prod(axis=1)
        a = float((rel * others)[bits[:, d] == 0].sum())
        b = float((rel * others)[bits[:, d] == 1].sum())
        denom = a * (1.0 - t[d]) + b * t[d]
        if denom <= 0:
            raise ValueError("perturbed density vanishes at this point")
        out[d] = (b - a) / denom
    return out


def tabular_stein_field(dist: TabularDistribution) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorized perturbed-density score over particle blocks.

    Same math as :func:`recover_stein_score` but reading corner masses
    straight from the table (out-of-range corners are zero), so a
    Langevin integrator can evaluate thousands of particles per step.
    """
    space = dist.space
    ndim = space.ndim
    if ndim > POSTERIOR_DIM_CAP:
        raise ValueError(f"corner enumeration caps at {POSTERIOR_DIM_CAP} dims")
    dims = np.asarray(space.dims, dtype=np.int64)
    bits = (np.arange(2**ndim)[:, None] >> np.arange(ndim)[None, :]) & 1

    def corner_masses(base: np.ndarray) -> np.ndarray:
        corners = base[:, None, :] + bits[None, :, :]
        valid = np.all((corners >= 0) & (corners < dims), axis=2)
        flat = space.indices_of(np.clip(corners, 0, dims - 1).reshape(-1, ndim))
        mass = dist.mass[flat].reshape(corners.shape[:2])
        return np.where(valid, mass, 0.0)

    def score(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        pts = x.reshape(-1, ndim)
        base = np.floor(pts).astype(np.int64)
        t = pts - base
        mass = corner_masses(base)  # (M, 2^D)
        tent = np.where(bits[None, :, :] == 1, t[:, None, :], 1.0 - t[:, None, :])
        out = np.empty_like(pts)
        for d in range(ndim):
            others = np.delete(tent, d, axis=2).prod(axis=2)
            lower = bits[:, d] == 0
            a = (mass[:, lower] * others[:, lower]).sum(axis=1)
            b = (mass[:, ~lower] * others[:, ~lower]).sum(axis=1)
            denom = a * (1.0 - t[:, d]) + b * t[:, d]
            if np.any(denom <= 0):
                raise ValueError("perturbed density vanishes for some particle")
            out[:, d] = (b - a) / denom
        return out[0] if squeeze else out

    return score
