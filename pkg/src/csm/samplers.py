"""Sampling from learned scores.

Metropolis-Hastings walks the undirected view of the neighborhood graph:
a neighbor is proposed uniformly among states adjacent in either
direction, the density ratio comes from the score entry of whichever
directed edge exists (inverted when the edge points backwards), and the
acceptance includes the proposal-degree correction. On symmetric
structures this reduces to the plain min(1, ratio) rule. An annealed
wrapper chains final states across a model sequence, and a Langevin
integrator serves the continuous denoising pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .graphs import NeighborhoodStructure, State, is_weakly_connected


@dataclass
class ChainState:
    current: State
    rng: np.random.Generator
    step: int = 0
    accepted: int = 0
    proposed: int = 0
    clamped: int = 0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else 0.0


def _accept_prob(ratio: float, deg_here: int, deg_there: int) -> float:
    return min(1.0, ratio * deg_here / deg_there)


def mh_step(chain: ChainState, score_model, structure: NeighborhoodStructure) -> ChainState:
    """One proposal/accept update of the chain, in place.

    Ratios below zero (score entries under -1) are clamped to zero and
    counted in ``chain.clamped``.
    """
    space = structure.space
    indptr, dst, pos, fwd = structure.undirected_view()
    here = space.index_of(chain.current)
    lo, hi = int(indptr[here]), int(indptr[here + 1])
    if hi == lo:
        raise ValueError(f"state {chain.current} has no neighbors to propose")
    k = lo + int(chain.rng.integers(0, hi - lo))
    there = int(dst[k])
    if fwd[k]:
        ratio = float(score_model.score_vector(structure, chain.current)[pos[k]]) + 1.0
    else:
        back = float(score_model.score_vector(structure, space.state_of(there))[pos[k]]) + 1.0
        ratio = np.inf if back == 0 else 1.0 / back
    if ratio < 0:
        ratio = 0.0
        chain.clamped += 1
    deg_here = hi - lo
    deg_there = int(indptr[there + 1] - indptr[there])
    chain.proposed += 1
    if chain.rng.random() < _accept_prob(ratio, deg_here, deg_there):
        chain.current = space.state_of(there)
        chain.accepted += 1
    chain.step += 1
    return chain


def _edge_ratio_table(score_model, structure) -> np.ndarray:
    """Precomputed density ratio for every undirected-view entry."""
    space = structure.space
    indptr, dst, pos, fwd = structure.undirected_view()
    n = space.total_states
    src = np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr))
    ratios = np.empty(src.size)
    if fwd.any():
        states = space.states_of(src[fwd])
        ratios[fwd] = score_model.score_entries(structure, states, pos[fwd]) + 1.0
    rev = ~fwd
    if rev.any():
        states = space.states_of(dst[rev])
        back = score_model.score_entries(structure, states, pos[rev]) + 1.0
        with np.errstate(divide="ignore"):
            ratios[rev] = np.where(back == 0, np.inf, 1.0 / back)
    return ratios


def run_chain(
    score_model,
    structure: NeighborhoodStructure,
    init: Sequence[int],
    steps: int,
    burn_in: int = 0,
    thin: int = 1,
    rng: np.random.Generator | None = None,
    seed: int | None = None,
    check_connected: bool = True,
) -> tuple[np.ndarray, ChainState]:
    """Run Metropolis-Hastings and return (kept states, final chain state).

    Keeps every ``thin``-th state after ``burn_in`` steps; ``steps=0``
    returns just the initial state. Refuses to start on a structure whose
    undirected view is disconnected (skip with ``check_connected=False``
    for non-enumerable spaces).
    """
    space = structure.space
    init = space.validate_state(init)
    if steps < 0 or burn_in < 0 or thin < 1:
        raise ValueError("steps and burn_in must be >= 0, thin >= 1")
    if steps and burn_in >= steps:
        raise ValueError("need steps > burn_in")
    if check_connected:
        if not space.enumerable:
            raise ValueError("connectivity check needs an enumerable space")
        if not is_weakly_connected(structure):
            raise ValueError("structure is not weakly connected; the chain cannot be ergodic")
    rng = rng if rng is not None else np.random.default_rng(seed)
    chain = ChainState(current=init, rng=rng)
    if steps == 0:
        return np.asarray([init], dtype=np.int64), chain

    indptr, dst, _, _ = structure.undirected_view()
    ratios = _edge_ratio_table(score_model, structure)
    if np.any(ratios < 0):
        chain.clamped += int((ratios < 0).sum())
        ratios = np.maximum(ratios, 0.0)
    degs = np.diff(indptr)

    kept: list[int] = []
    here = space.index_of(init)
    for step in range(1, steps + 1):
        lo = indptr[here]
        deg = degs[here]
        if deg == 0:
            raise ValueError(f"state {space.state_of(here)} has no neighbors to propose")
        k = lo + rng.integers(0, deg)
        there = dst[k]
        chain.proposed += 1
        if rng.random() < _accept_prob(ratios[k], deg, degs[there]):
            here = int(there)
            chain.accepted += 1
        if step > burn_in and (step - burn_in) % thin == 0:
            kept.append(here)
    chain.step = steps
    chain.current = space.state_of(here)
    return space.states_of(np.asarray(kept, dtype=np.int64)), chain


def run_annealed(
    score_models: Sequence,
    structure: NeighborhoodStructure,
    init: Sequence[int],
    steps_per_level: int,
    rng: np.random.Generator | None = None,
    seed: int | None = None,
    burn_in: int = 0,
    thin: int = 1,
) -> tuple[np.ndarray, ChainState]:
    """Run one chain per model (highest noise first), chaining final states.

    Returns the kept samples of the last level. With a single model this
    is exactly :func:`run_chain`.
    """
    if not score_models:
        raise ValueError("need at least one score model")
    rng = rng if rng is not None else np.random.default_rng(seed)
    current = structure.space.validate_state(init)
    samples = None
    chain = None
    for model in score_models:
        samples, chain = run_chain(
            model, structure, current, steps_per_level, burn_in=burn_in, thin=thin, rng=rng
        )
        current = chain.current
    return samples, chain


def langevin(
    score_fn: Callable[[np.ndarray], np.ndarray],
    init: np.ndarray,
    step_size: float,
    steps: int,
    rng: np.random.Generator | None = None,
    seed: int | None = None,
    burn_in: int = 0,
    thin: int = 1,
    noise_scale: float = 1.0,
    clamp: tuple[float, float] | None = None,
) -> np.ndarray:
    """Unadjusted Langevin updates x += (eps/2) s(x) + sqrt(eps) noise.

    ``init`` may be a single point (D,) or a particle block (M, D);
    ``score_fn`` must be vectorized over rows in the latter case. Returns
    the post-burn-in, thinned trajectory stacked on a new leading axis.
    ``noise_scale=0`` gives plain gradient ascent on the log-density;
    ``clamp`` box-projects after every step, for bounded-support targets.
    """
    if step_size <= 0:
        raise ValueError("step_size must be positive")
    rng = rng if rng is not None else np.random.default_rng(seed)
    x = np.array(init, dtype=np.float64)
    root = np.sqrt(step_size)
    kept = []
    for step in range(1, steps + 1):
        s = np.asarray(score_fn(x), dtype=np.float64)
        if not np.all(np.isfinite(s)):
            raise FloatingPointError(f"non-finite score at step {step}")
        x = x + 0.5 * step_size * s
        if noise_scale:
            x = x + noise_scale * root * rng.standard_normal(x.shape)
        if clamp is not None:
            x = np.clip(x, clamp[0], clamp[1])
        if step > burn_in and (step - burn_in) % thin == 0:
            kept.append(x.copy())
    return np.stack(kept) if kept else np.empty((0,) + x.shape)
