"""Exact tabular distributions and the oracle score operations.

Everything here enumerates: probabilities are dense arrays over the flat
state order of a :class:`~csm.graphs.DiscreteSpace`. The score of a
distribution at a state is the vector of relative neighbor differences
(p(x_n) - p(x)) / p(x); on a weakly connected structure that score
determines the distribution, and :func:`reconstruct_density` inverts it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .graphs import DiscreteSpace, NeighborhoodStructure, State

log = logging.getLogger(__name__)

MASS_TOL = 1e-12
# score entries this close to -1 are clamped before the log is taken
SCORE_CLAMP = 1e-9


class TabularDistribution:
    """Dense probability mass function over an enumerable discrete space.

    ``mass[i]`` is the probability of the state with flat index i. Masses
    must be nonnegative and sum to 1 within 1e-12 (pass ``normalize=True``
    to rescale). ``strictly_positive`` guards the ratio-based operations.
    """

    def __init__(self, space: DiscreteSpace, mass: np.ndarray, normalize: bool = False):
        n = space.require_enumerable("tabular distribution")
        mass = np.asarray(mass, dtype=np.float64)
        if mass.shape != (n,):
            raise ValueError(f"mass must have shape ({n},), got {mass.shape}")
        if np.any(mass < 0) or not np.all(np.isfinite(mass)):
            raise ValueError("masses must be finite and nonnegative")
        total = mass.sum()
        if normalize:
            if total <= 0:
                raise ValueError("cannot normalize a zero mass vector")
            mass = mass / total
        elif abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"masses sum to {total!r}, not 1")
        self.space = space
        self.mass = mass
        self.mass.flags.writeable = False

    @property
    def strictly_positive(self) -> bool:
        return bool(self.mass.min() > 0)

    def prob(self, state: Sequence[int]) -> float:
        return float(self.mass[self.space.index_of(self.space.validate_state(state))])

    def probs_of(self, states: np.ndarray) -> np.ndarray:
        return self.mass[self.space.indices_of(states)]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(self.space.total_states, size=n, p=self.mass)
        return self.space.states_of(idx)

    @classmethod
    def uniform(cls, space: DiscreteSpace) -> "TabularDistribution":
        n = space.require_enumerable("uniform distribution")
        return cls(space, np.full(n, 1.0 / n))

    @classmethod
    def from_samples(cls, space: DiscreteSpace, samples: np.ndarray) -> "TabularDistribution":
        """Empirical histogram of a sample array (m, D)."""
        n = space.require_enumerable("empirical distribution")
        idx = space.indices_of(np.asarray(samples, dtype=np.int64))
        counts = np.bincount(idx, minlength=n).astype(np.float64)
        return cls(space, counts, normalize=True)

    @classmethod
    def random_positive(
        cls, space: DiscreteSpace, rng: np.random.Generator, floor: float = 0.05
    ) -> "TabularDistribution":
        """Random strictly positive distribution (for round-trip tests)."""
        n = space.require_enumerable("random distribution")
        return cls(space, rng.random(n) + floor, normalize=True)

    def to_csv(self, path) -> None:
        """One line per state: ``state_indices..., mass``."""
        from .io import atomic_write

        lines = []
        for i, m in enumerate(self.mass):
            coords = ",".join(str(v) for v in self.space.state_of(i))
            lines.append(f"{coords},{float(m)!r}")
        atomic_write(path, "\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path, space: DiscreteSpace) -> "TabularDistribution":
        n = space.require_enumerable("tabular distribution")
        mass = np.zeros(n)
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != space.ndim + 1:
                    raise ValueError(f"{path}:{lineno}: expected {space.ndim} coords and a mass")
                state = space.validate_state([int(v) for v in parts[:-1]])
                mass[space.index_of(state)] = float(parts[-1])
        return cls(space, mass)


def concrete_score_exact(
    p: TabularDistribution, structure: NeighborhoodStructure, x: Sequence[int]
) -> np.ndarray:
    """Score vector of ``p`` at ``x``: entry i is p(x_ni)/p(x) - 1."""
    x = p.space.validate_state(x)
    px = p.prob(x)
    if px <= 0:
        raise ValueError(f"distribution has zero mass at {x}")
    nbrs = structure.neighbors(x)
    if not nbrs:
        return np.empty(0)
    return np.array([p.prob(nb) for nb in nbrs]) / px - 1.0


class TabularScoreModel:
    """Score-model view of an exact distribution (the oracle c_p)."""

    def __init__(self, dist: TabularDistribution):
        if not dist.strictly_positive:
            raise ValueError("score model needs a strictly positive distribution")
        self.dist = dist
        self.space = dist.space

    def score_vector(self, structure: NeighborhoodStructure, x: Sequence[int]) -> np.ndarray:
        return concrete_score_exact(self.dist, structure, x)

    def score_entries(
        self, structure: NeighborhoodStructure, states: np.ndarray, positions: np.ndarray
    ) -> np.ndarray:
        dst = structure.neighbor_states_at(states, positions)
        return self.dist.probs_of(dst) / self.dist.probs_of(states) - 1.0


def _support_indices(
    structure: NeighborhoodStructure, support: Iterable[Sequence[int]] | None
) -> list[int]:
    space = structure.space
    if support is None:
        return list(range(space.require_enumerable("density reconstruction")))
    idx = sorted({space.index_of(space.validate_state(s)) for s in support})
    if not idx:
        raise ValueError("empty support")
    return idx


def _undirected_support_view(structure, members):
    """(neighbor lists restricted to support) in undirected-view terms."""
    indptr, dst, pos, fwd = structure.undirected_view()
    adj: dict[int, list[tuple[int, int, bool]]] = {}
    for u in members:
        adj[u] = [
            (int(dst[k]), int(pos[k]), bool(fwd[k]))
            for k in range(indptr[u], indptr[u + 1])
            if int(dst[k]) in members
        ]
    return adj


def reconstruct_density(
    score_fn: Callable[[State], np.ndarray],
    structure: NeighborhoodStructure,
    support: Iterable[Sequence[int]] | None = None,
    root: Sequence[int] | None = None,
) -> TabularDistribution:
    """Rebuild the distribution a score function encodes.

    Walks a BFS spanning tree of the undirected induced graph, summing
    log(score entry + 1) along each tree edge (negated when the edge is
    traversed against its direction), then normalizes by log-sum-exp.
    Off-tree edges are ignored; see :func:`max_cycle_residual` for the
    consistency diagnostic. Entries at or below -1 are clamped to
    -1 + 1e-9 and counted in a warning.
    """
    space = structure.space
    members_list = _support_indices(structure, support)
    members = set(members_list)
    adj = _undirected_support_view(structure, members)

    root_idx = members_list[0] if root is None else space.index_of(space.validate_state(root))
    if root_idx not in members:
        raise ValueError("root must belong to the support")

    scores: dict[int, np.ndarray] = {}

    def entry(state_idx: int, pos: int, clamped: list) -> float:
        if state_idx not in scores:
            scores[state_idx] = np.asarray(score_fn(space.state_of(state_idx)), dtype=np.float64)
        c = float(scores[state_idx][pos])
        if c <= -1.0 + SCORE_CLAMP:
            clamped.append(state_idx)
            c = -1.0 + SCORE_CLAMP
        return c

    clamped: list = []
    logmass = {root_idx: 0.0}
    frontier = [root_idx]
    while frontier:
        nxt = []
        for u in frontier:
            for v, pos, forward in adj[u]:
                if v in logmass:
                    continue
                if forward:
                    logmass[v] = logmass[u] + np.log1p(entry(u, pos, clamped))
                else:
                    logmass[v] = logmass[u] - np.log1p(entry(v, pos, clamped))
                nxt.append(v)
        frontier = nxt
    if len(logmass) != len(members):
        raise ValueError(
            f"structure is disconnected on the support: reached {len(logmass)} "
            f"of {len(members)} states"
        )
    if clamped:
        log.warning("reconstruct_density clamped %d score entries at -1", len(clamped))

    lm = np.full(space.total_states, -np.inf)
    for i, v in logmass.items():
        lm[i] = v
    peak = max(logmass.values())
    mass = np.exp(lm - peak)
    return TabularDistribution(space, mass / mass.sum())


def max_cycle_residual(
    score_fn: Callable[[State], np.ndarray],
    structure: NeighborhoodStructure,
    support: Iterable[Sequence[int]] | None = None,
) -> float:
    """Worst absolute log-ratio disagreement over off-tree edges.

    Zero (to rounding) iff the scores are consistent with some
    distribution on the support; large values flag a score field that is
    not the score of any distribution.
    """
    recon = reconstruct_density(score_fn, structure, support=support)
    space = structure.space
    members = set(_support_indices(structure, support))
    with np.errstate(divide="ignore"):
        lm = np.log(recon.mass)
    worst = 0.0
    for u in members:
        c = np.asarray(score_fn(space.state_of(u)), dtype=np.float64)
        for pos, v in enumerate(structure._neighbor_indices(space.state_of(u))):
            if v not in members:
                continue
            resid = abs((lm[v] - lm[u]) - np.log1p(max(c[pos], -1.0 + SCORE_CLAMP)))
            worst = max(worst, float(resid))
    return worst


def scaled_score_limit(
    density_fn: Callable[[np.ndarray], float], x: np.ndarray, delta: float
) -> np.ndarray:
    """Forward-difference surrogate for the log-density gradient.

    Entry d is (p(x + delta e_d) - p(x)) / (delta p(x)); as delta shrinks
    this converges to the gradient of log p at O(delta) rate. Test oracle
    for the continuous limit, not a production operation.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    x = np.asarray(x, dtype=np.float64)
    px = float(density_fn(x))
    if px <= 0:
        raise ValueError("density must be positive at x")
    out = np.empty(x.size)
    for d in range(x.size):
        shifted = x.copy()
        shifted[d] += delta
        pd = float(density_fn(shifted))
        if pd <= 0:
            raise ValueError("density must be positive at x + delta e_d")
        out[d] = (pd - px) / (delta * px)
    return out


def kl_and_tv(p: TabularDistribution, q: TabularDistribution) -> tuple[float, float]:
    """(KL(p || q), total variation distance)."""
    if p.space.dims != q.space.dims:
        raise ValueError("distributions live on different spaces")
    tv = 0.5 * float(np.abs(p.mass - q.mass).sum())
    mask = p.mass > 0
    if np.any(q.mass[mask] <= 0):
        kl = float("inf")
    else:
        kl = float(np.sum(p.mass[mask] * (np.log(p.mass[mask]) - np.log(q.mass[mask]))))
    return kl, tv
