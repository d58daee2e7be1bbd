"""Training objectives for score and density models.

Exact, fully enumerated losses (the l2 score-matching loss and its
tractable two-term expansion), their unbiased single-neighbor Monte
Carlo estimators, reparameterized estimators for chain/cycle/grid
structures that need no reverse index, the denoising variant built on a
per-dimension categorical noise kernel, the corrected and original
ratio-matching and marginalization baselines, and plain negative
log-likelihood.

Every public objective returns an :class:`ObjectiveValue` carrying the
scalar, the parameter gradients from the tape, and bookkeeping counts.
Estimators report batch means so learning rates transfer across batch
sizes; states with nothing to sample (no neighbors, or an empty reverse
set) contribute zero and are counted in ``meta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exact import TabularDistribution
from .graphs import DiscreteSpace, NeighborhoodStructure, ReverseIndex

# dcsm_loss_exact enumerates (clean, noisy) pairs; quadratic blowup guard
EXACT_PAIR_CAP = 4096
COND_FLOOR = 1e-6


@dataclass
class ObjectiveValue:
    value: float
    grads: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class NoiseKernel:
    """Per-dimension categorical corruption: stay with probability w,
    otherwise move uniformly to any other category of that dimension."""

    space: DiscreteSpace
    w: float

    def __post_init__(self):
        if not (0.0 < self.w < 1.0):
            raise ValueError(f"stay probability must lie in (0, 1), got {self.w}")

    def spread(self, d: int) -> float:
        return (1.0 - self.w) / (self.space.dims[d] - 1)

    def row(self, d: int) -> np.ndarray:
        """Transition matrix of dimension d, rows summing to one."""
        n = self.space.dims[d]
        m = np.full((n, n), self.spread(d))
        np.fill_diagonal(m, self.w)
        return m

    def sample(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        states = np.asarray(states, dtype=np.int64)
        out = states.copy()
        for d, n in enumerate(self.space.dims):
            move = rng.random(states.shape[0]) >= self.w
            k = rng.integers(0, n - 1, size=states.shape[0])
            moved = k + (k >= states[:, d])  # skip the current category
            out[move, d] = moved[move]
        return out

    def log_prob(self, clean: np.ndarray, noisy: np.ndarray) -> np.ndarray:
        clean = np.asarray(clean, dtype=np.int64)
        noisy = np.asarray(noisy, dtype=np.int64)
        out = np.zeros(clean.shape[0])
        for d in range(self.space.ndim):
            same = clean[:, d] == noisy[:, d]
            out += np.where(same, np.log(self.w), np.log(self.spread(d)))
        return out

    def score_targets(
        self, clean: np.ndarray, at: np.ndarray, to: np.ndarray
    ) -> np.ndarray:
        """Exact score entries of the conditional q(.|clean) along edges at -> to."""
        return np.exp(self.log_prob(clean, to) - self.log_prob(clean, at)) - 1.0


# ---------------------------------------------------------------------------
# shared plumbing


def _entries_t(model, structure, states, positions) -> Tensor:
    if hasattr(model, "score_entries_t"):
        return model.score_entries_t(structure, states, positions)
    # oracle models without parameters enter the tape as constants
    return Tensor(model.score_entries(structure, states, positions))


def _finalize(model, loss: Tensor, meta: dict) -> ObjectiveValue:
    params = getattr(model, "params", {})
    for p in params.values():
        p.grad = None
    loss.backward()
    grads = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
    return ObjectiveValue(value=float(loss.data), grads=grads, meta=meta)


def _all_edges(structure: NeighborhoodStructure):
    indptr, indices = structure.adjacency()
    degs = np.diff(indptr)
    src = np.repeat(np.arange(structure.space.total_states, dtype=np.int64), degs)
    pos = np.arange(indptr[-1], dtype=np.int64) - indptr[src]
    return src, pos, indices


# ---------------------------------------------------------------------------
# exact enumerated objectives


def csm_loss_exact(model, p: TabularDistribution, structure: NeighborhoodStructure) -> ObjectiveValue:
    """Expected squared distance to the exact score, fully enumerated.

    Zero exactly when the model matches the score of ``p`` everywhere on
    its support. States with zero mass carry zero weight and are skipped
    (their score target is undefined).
    """
    space = structure.space
    src, pos, dst = _all_edges(structure)
    w = p.mass[src]
    keep = w > 0
    src, pos, dst, w = src[keep], pos[keep], dst[keep], w[keep]
    target = p.mass[dst] / p.mass[src] - 1.0
    entries = _entries_t(model, structure, space.states_of(src), pos)
    loss = ad.tsum(ad.mul(ad.square(ad.sub(entries, target)), w))
    meta = {"edges": int(src.size), "states": int(space.total_states)}
    return _finalize(model, loss, meta)


def jcsm_exact(model, p: TabularDistribution, structure: NeighborhoodStructure) -> ObjectiveValue:
    """Tractable expansion J1 - J2 of the exact loss, fully enumerated.

    Differs from :func:`csm_loss_exact` by a model-independent constant,
    so gradients and minimizers coincide.
    """
    space = structure.space
    src, pos, dst = _all_edges(structure)
    entries = _entries_t(model, structure, space.states_of(src), pos)
    j1 = ad.tsum(ad.mul(ad.add(ad.square(entries), ad.mul(entries, 2.0)), p.mass[src]))
    j2 = ad.tsum(ad.mul(entries, 2.0 * p.mass[dst]))
    loss = ad.sub(j1, j2)
    meta = {
        "edges": int(src.size),
        "j1": float(j1.data),
        "j2": float(j2.data),
    }
    return _finalize(model, loss, meta)


# ---------------------------------------------------------------------------
# Monte Carlo estimators


def _flat_entries_t(model, structure, src_flat, positions) -> Tensor:
    if hasattr(model, "score_entries_flat_t"):
        return model.score_entries_flat_t(structure, src_flat, positions)
    return _entries_t(model, structure, structure.space.states_of(src_flat), positions)


def _j1_term(model, batch: np.ndarray, structure, rng, flat=None) -> tuple[Tensor, dict]:
    b = batch.shape[0]
    if flat is None:
        degs = structure.degrees_of(batch)
    else:
        indptr, _ = structure.adjacency()
        degs = indptr[flat + 1] - indptr[flat]
    live = degs > 0
    meta = {"batch": b, "j1_skipped_empty": int((~live).sum())}
    if not live.any():
        return Tensor(0.0), meta
    pos = rng.integers(0, degs[live])
    if flat is None:
        entries = _entries_t(model, structure, batch[live], pos)
    else:
        entries = _flat_entries_t(model, structure, flat[live], pos)
    per = ad.mul(ad.add(ad.square(entries), ad.mul(entries, 2.0)), degs[live].astype(np.float64))
    return ad.mul(ad.tsum(per), 1.0 / b), meta


def _j2_term(
    model, batch: np.ndarray, structure, rev: ReverseIndex, rng, flat=None
) -> tuple[Tensor, dict]:
    b = batch.shape[0]
    if flat is None:
        flat = structure.space.indices_of(batch)
    counts = rev.indptr[flat + 1] - rev.indptr[flat]
    live = counts > 0
    meta = {"batch": b, "j2_skipped_empty": int((~live).sum())}
    if not live.any():
        return Tensor(0.0), meta
    k = rng.integers(0, counts[live])
    sel = rev.indptr[flat[live]] + k
    entries = _flat_entries_t(model, structure, rev.src[sel], rev.pos[sel])
    per = ad.mul(entries, 2.0 * counts[live].astype(np.float64))
    return ad.mul(ad.tsum(per), 1.0 / b), meta


def _j2_structured_term(model, batch: np.ndarray, structure, rng) -> tuple[Tensor, dict]:
    space = structure.space
    b = batch.shape[0]
    if structure.kind in ("chain", "cycle"):
        flat = space.indices_of(batch)
        n = space.total_states
        if structure.kind == "cycle":
            live = np.ones(b, dtype=bool)
            pred = (flat - 1) % n
        else:
            live = flat > 0  # the first chain state has no predecessor
            pred = np.where(live, flat - 1, 0)
        meta = {"batch": b, "j2_skipped_empty": int((~live).sum())}
        if not live.any():
            return Tensor(0.0), meta
        entries = _entries_t(
            model,
            structure,
            space.states_of(pred[live]),
            np.zeros(int(live.sum()), dtype=np.int64),
        )
        return ad.mul(ad.tsum(ad.mul(entries, 2.0)), 1.0 / b), meta
    if structure.kind != "grid":
        raise ValueError(
            f"structured estimator supports chain/cycle/grid, not {structure.kind!r}"
        )
    dims = np.asarray(space.dims, dtype=np.int64)
    ndim = len(dims)
    d = rng.integers(0, ndim, size=b)
    wrap = structure.boundary == "wrap"
    rows_idx = np.arange(b)
    v = batch[rows_idx, d]
    n_d = dims[d]

    # incoming edges along the sampled dimension: from x - e_d (its "+"
    # move), from x + e_d (its "-" move), or from the single bit flip
    srcs: list[np.ndarray] = []
    poss: list[np.ndarray] = []

    def block_offset(states, dim_sel):
        per_dim = structure.grid_dim_degrees(states)
        cum = np.cumsum(per_dim, axis=1)
        before = np.where(dim_sel > 0, cum[np.arange(states.shape[0]), dim_sel - 1], 0)
        return before, per_dim

    flip_mask = n_d == 2
    if flip_mask.any():
        y = batch[flip_mask].copy()
        dd = d[flip_mask]
        y[np.arange(y.shape[0]), dd] = 1 - y[np.arange(y.shape[0]), dd]
        before, _ = block_offset(y, dd)
        srcs.append(y)
        poss.append(before)

    multi = ~flip_mask
    # predecessor y = x - e_d, whose "+" move lands on x
    has_pred = multi & (wrap | (v > 0))
    if has_pred.any():
        y = batch[has_pred].copy()
        dd = d[has_pred]
        y[np.arange(y.shape[0]), dd] = (y[np.arange(y.shape[0]), dd] - 1) % dims[dd]
        before, _ = block_offset(y, dd)
        srcs.append(y)
        poss.append(before)
    # successor y = x + e_d, whose "-" move lands on x
    has_succ = multi & (wrap | (v + 1 < n_d))
    if has_succ.any():
        y = batch[has_succ].copy()
        dd = d[has_succ]
        y[np.arange(y.shape[0]), dd] = (y[np.arange(y.shape[0]), dd] + 1) % dims[dd]
        before, per_dim = block_offset(y, dd)
        plus_exists = wrap | (y[np.arange(y.shape[0]), dd] + 1 < dims[dd])
        srcs.append(y)
        poss.append(before + plus_exists.astype(np.int64))

    meta = {"batch": b, "j2_edges": int(sum(s.shape[0] for s in srcs))}
    if not srcs:
        return Tensor(0.0), meta
    src_states = np.concatenate(srcs, axis=0)
    positions = np.concatenate(poss)
    entries = _entries_t(model, structure, src_states, positions)
    return ad.mul(ad.tsum(ad.mul(entries, 2.0 * ndim)), 1.0 / b), meta


def estimate_j1(model, minibatch: np.ndarray, structure, rng) -> ObjectiveValue:
    """Unbiased single-neighbor estimator of the J1 term.

    Per state: draw one neighbor slot uniformly and upweight the entry's
    c^2 + 2c by the neighborhood size. Empty neighborhoods contribute 0.
    """
    batch = np.asarray(minibatch, dtype=np.int64)
    term, meta = _j1_term(model, batch, structure, rng)
    return _finalize(model, term, meta)


def estimate_j2(model, minibatch: np.ndarray, structure, reverse_index: ReverseIndex, rng) -> ObjectiveValue:
    """Unbiased reverse-neighborhood estimator of the J2 term.

    Per state x': draw (x, i) uniformly from the reverse set and
    upweight 2 c(x)_i by its size. Empty reverse sets contribute 0.
    """
    batch = np.asarray(minibatch, dtype=np.int64)
    term, meta = _j2_term(model, batch, structure, reverse_index, rng)
    return _finalize(model, term, meta)


def estimate_j2_structured(model, minibatch: np.ndarray, structure, rng) -> ObjectiveValue:
    """Reverse-index-free J2 estimator for chain, cycle and grid kinds.

    Chains and cycles reparameterize J2 as the score at the flat-order
    predecessor of each sample; grids draw a dimension uniformly, apply
    the per-dimension reparameterization in both orientations, and scale
    by the number of dimensions.
    """
    batch = np.asarray(minibatch, dtype=np.int64)
    term, meta = _j2_structured_term(model, batch, structure, rng)
    return _finalize(model, term, meta)


def csm_mc_loss(model, minibatch, structure, reverse_index, rng) -> ObjectiveValue:
    """J1 - J2 with both Monte Carlo estimators on one tape."""
    batch = np.asarray(minibatch, dtype=np.int64)
    flat = structure.space.indices_of(batch) if structure.space.enumerable else None
    j1, m1 = _j1_term(model, batch, structure, rng, flat=flat)
    j2, m2 = _j2_term(model, batch, structure, reverse_index, rng, flat=flat)
    return _finalize(model, ad.sub(j1, j2), {**m1, **m2})


def csm_structured_loss(model, minibatch, structure, rng) -> ObjectiveValue:
    """J1 - J2 with the structured (reverse-index-free) J2 estimator."""
    batch = np.asarray(minibatch, dtype=np.int64)
    j1, m1 = _j1_term(model, batch, structure, rng)
    j2, m2 = _j2_structured_term(model, batch, structure, rng)
    return _finalize(model, ad.sub(j1, j2), {**m1, **m2})


# ---------------------------------------------------------------------------
# denoising objective


def dcsm_loss(model, minibatch, kernel: NoiseKernel, structure, rng) -> ObjectiveValue:
    """Denoising score matching against the noise-kernel conditional.

    Each clean state is corrupted once; the model's score at the noisy
    state is matched to the exact (closed-form) score of the kernel
    conditional, whose minimizer over all states is the score of the
    perturbed data distribution.
    """
    batch = np.asarray(minibatch, dtype=np.int64)
    if tuple(kernel.space.dims) != tuple(structure.space.dims):
        raise ValueError("kernel and structure disagree on the space")
    noisy = kernel.sample(batch, rng)
    rows, pos, dst = structure.all_neighbors_of(noisy)
    target = kernel.score_targets(batch[rows], noisy[rows], dst)
    entries = _entries_t(model, structure, noisy[rows], pos)
    loss = ad.mul(ad.tsum(ad.square(ad.sub(entries, target))), 1.0 / batch.shape[0])
    meta = {"batch": batch.shape[0], "neighbor_evals": int(rows.size)}
    return _finalize(model, loss, meta)


def dcsm_loss_exact(model, p: TabularDistribution, kernel: NoiseKernel, structure) -> ObjectiveValue:
    """Fully enumerated expectation of the denoising objective.

    Sums over every (clean, noisy) pair weighted by p(clean) q(noisy|clean);
    only usable on small spaces, but free of Monte Carlo noise, which the
    fixed-point checks need.
    """
    space = structure.space
    n = space.require_enumerable("exact denoising objective")
    if n > EXACT_PAIR_CAP:
        raise ValueError(f"exact denoising loss caps at {EXACT_PAIR_CAP} states, got {n}")
    states = space.all_states()
    # pairwise kernel matrix Q[i, j] = q(state j | state i)
    q = np.ones((n, n))
    for d in range(space.ndim):
        q *= kernel.row(d)[np.ix_(states[:, d], states[:, d])]
    src, pos, dst = _all_edges(structure)
    entries = _entries_t(model, structure, space.states_of(src), pos)
    e = src.size
    # weight of (clean i, edge k at noisy src[k]) and its target entry
    clean_idx = np.repeat(np.arange(n), e)
    edge_idx = np.tile(np.arange(e), n)
    weights = (p.mass[:, None] * q[:, src]).reshape(-1)
    targets = (q[:, dst] / q[:, src] - 1.0).reshape(-1)
    tiled = ad.gather(entries, edge_idx)
    loss = ad.tsum(ad.mul(ad.square(ad.sub(tiled, targets)), weights))
    return _finalize(model, loss, {"pairs": int(n * e)})


# ---------------------------------------------------------------------------
# conditional baselines and likelihood


def _conditional_terms(model, batch: np.ndarray, d: int):
    clp = model.conditional_log_probs_t(batch, d)
    q = ad.texp(clp)
    q_obs = ad.take_pairs(q, np.arange(batch.shape[0]), batch[:, d])
    return q, q_obs


def ratio_matching_loss(model, minibatch: np.ndarray, variant: str = "fixed") -> ObjectiveValue:
    """Squared-conditional ratio matching over every dimension.

    ``fixed`` is the corrected objective (1 - q(x_d|rest))^2 plus the sum
    of squared off-value conditionals; ``original`` is the degenerate
    published form whose minimizer is the uniform conditional regardless
    of the data, kept only as a baseline.
    """
    if variant not in ("fixed", "original"):
        raise ValueError(f"unknown variant {variant!r}")
    batch = np.asarray(minibatch, dtype=np.int64)
    b = batch.shape[0]
    total: Tensor | None = None
    for d in range(model.space.ndim):
        q, q_obs = _conditional_terms(model, batch, d)
        if variant == "fixed":
            term = ad.add(
                ad.square(ad.sub(1.0, q_obs)),
                ad.sub(ad.tsum(ad.square(q), axis=1), ad.square(q_obs)),
            )
        else:
            term = ad.tsum(ad.square(ad.sub(1.0, q)), axis=1)
        total = term if total is None else ad.add(total, term)
    loss = ad.mul(ad.tsum(total), 1.0 / b)
    return _finalize(model, loss, {"batch": b, "dims": model.space.ndim, "variant": variant})


def marginalization_loss(
    model, minibatch: np.ndarray, variant: str = "fixed", floor: float = COND_FLOOR
) -> ObjectiveValue:
    """Inverse-conditional marginalization objective.

    The 1/q^2 terms explode as conditionals approach zero, so they are
    clamped at ``floor`` (clamp events are counted in meta). ``original``
    keeps the degenerate published form.
    """
    if variant not in ("fixed", "original"):
        raise ValueError(f"unknown variant {variant!r}")
    batch = np.asarray(minibatch, dtype=np.int64)
    b = batch.shape[0]
    total: Tensor | None = None
    clamped = 0
    for d in range(model.space.ndim):
        q, _ = _conditional_terms(model, batch, d)
        clamped += int((q.data <= floor).sum())
        qc = ad.clip_min(q, floor)
        qc_obs = ad.take_pairs(qc, np.arange(b), batch[:, d])
        if variant == "fixed":
            term = ad.sub(
                ad.pow_const(qc_obs, -2.0),
                ad.tsum(ad.mul(ad.pow_const(qc, -1.0), 2.0), axis=1),
            )
        else:
            term = ad.tsum(
                ad.sub(ad.pow_const(qc, -2.0), ad.mul(ad.pow_const(qc, -1.0), 2.0)), axis=1
            )
        total = term if total is None else ad.add(total, term)
    loss = ad.mul(ad.tsum(total), 1.0 / b)
    meta = {"batch": b, "variant": variant, "clamped_conditionals": clamped}
    return _finalize(model, loss, meta)


def nll_loss(model, minibatch: np.ndarray) -> ObjectiveValue:
    """Mean negative log-likelihood under an exactly normalized model."""
    batch = np.asarray(minibatch, dtype=np.int64)
    loss = ad.mul(ad.tsum(model.log_mass_t(batch)), -1.0 / batch.shape[0])
    return _finalize(model, loss, {"batch": batch.shape[0]})


# ---------------------------------------------------------------------------
# name-based dispatch (the CLI's objective strings)

OBJECTIVE_NAMES = (
    "csm_exact",
    "csm_mc",
    "csm_structured",
    "dcsm",
    "ratio_fixed",
    "ratio_original",
    "marginal_fixed",
    "marginal_original",
    "nll",
)


def make_objective(
    name: str,
    structure: NeighborhoodStructure | None = None,
    empirical: TabularDistribution | None = None,
    kernel: NoiseKernel | None = None,
    reverse_index: ReverseIndex | None = None,
):
    """Bind an objective name to its context; returns f(model, batch, rng)."""
    if name not in OBJECTIVE_NAMES:
        raise ValueError(f"unknown objective {name!r}; expected one of {OBJECTIVE_NAMES}")
    if name.startswith("csm") or name == "dcsm":
        if structure is None:
            raise ValueError(f"objective {name!r} needs a neighborhood structure")
    if name == "csm_exact":
        if empirical is None:
            raise ValueError("csm_exact needs the empirical distribution")
        return lambda model, batch, rng: csm_loss_exact(model, empirical, structure)
    if name == "csm_mc":
        if reverse_index is None:
            raise ValueError("csm_mc needs a reverse index")
        return lambda model, batch, rng: csm_mc_loss(model, batch, structure, reverse_index, rng)
    if name == "csm_structured":
        return lambda model, batch, rng: csm_structured_loss(model, batch, structure, rng)
    if name == "dcsm":
        if kernel is None:
            raise ValueError("dcsm needs a noise kernel")
        return lambda model, batch, rng: dcsm_loss(model, batch, kernel, structure, rng)
    if name == "ratio_fixed":
        return lambda model, batch, rng: ratio_matching_loss(model, batch, "fixed")
    if name == "ratio_original":
        return lambda model, batch, rng: ratio_matching_loss(model, batch, "original")
    if name == "marginal_fixed":
        return lambda model, batch, rng: marginalization_loss(model, batch, "fixed")
    if name == "marginal_original":
        return lambda model, batch, rng: marginalization_loss(model, batch, "original")
    return lambda model, batch, rng: nll_loss(model, batch)
