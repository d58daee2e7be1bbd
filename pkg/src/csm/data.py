"""Synthetic dataset generators and tabular CSV ingestion.

Each generator stores its exact ground-truth distribution alongside the
samples so tests compare against our construction, not against figures.
The 2-D toys are documented closed forms on [-2.5, 2.5]^2 mapped onto a
bins x bins grid:

- checkerboard: uniform on the "on" squares of a 4x4 alternating
  pattern, softened by an isotropic Gaussian of 0.7 bin widths (the
  blurred square wave has a separable closed form, so bin masses are
  exact 1-D quadratures);
- rings: two circles of radius 1 and 2 with Gaussian radial profile
  sigma = 0.1, Cartesian density sum_k 0.5 phi_sigma(|x| - R_k) / (2 pi |x|);
- spirals: two Archimedean arms rho = 0.25 + 1.95 t, phi = pi/4 + 3 pi t
  for t ~ U(0, 1), arms offset by pi, isotropic Gaussian cross-section
  sigma = 0.1 (bin masses by midpoint quadrature, renormalized).

Every 2-D toy is mixed with a 1% uniform background, which keeps the
low-density regions qualitative (off checkerboard squares still receive
under 1% of the mass) while making the quantized distribution strictly
positive and its neighbor ratios bounded: ratio- and score-based
objectives are only well posed without structural zeros (the exact
module excludes them outright), and score-matched tables over bins with
unboundedly large neighbor ratios have no finite optimum to converge to.
The sub-bin checkerboard blur exists for the same reason and leaves the
pattern visually sharp at 91 bins.

Randomness comes exclusively from numpy's seeded PCG64 generator, so
regeneration with the same seed is bit-identical across platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exact import TabularDistribution
from .graphs import DiscreteSpace
from .objectives import NoiseKernel

TOY_1D_CATEGORIES = 16
FIELD_HALF_WIDTH = 2.5  # the 2-D toys live on [-2.5, 2.5]^2
RING_RADII = (1.0, 2.0)
RING_SIGMA = 0.1
SPIRAL_SIGMA = 0.1
CHECKER_CELLS = 4
CHECKER_BLUR_BINS = 0.7  # checkerboard edge softening, in bin widths
QUAD_SUBDIV = 3  # midpoint quadrature points per bin edge for smooth toys
BACKGROUND_MIX = 0.01  # uniform background fraction mixed into the 2-D toys

TOY_2D_NAMES = ("checkerboard", "spirals", "rings")


@dataclass
class Dataset:
    space: DiscreteSpace
    samples: np.ndarray  # (N, D) int64
    name: str
    seed: int
    ground_truth: TabularDistribution | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.int64)
        if self.samples.ndim != 2 or self.samples.shape[1] != self.space.ndim:
            raise ValueError("samples must be (N, D) matching the space")
        for d, n in enumerate(self.space.dims):
            col = self.samples[:, d]
            if col.size and (col.min() < 0 or col.max() >= n):
                raise ValueError(f"sample coordinate out of range in dimension {d}")


def toy_1d_masses() -> np.ndarray:
    """Fixed two-mode categorical over 16 states, strictly positive."""
    k = np.arange(TOY_1D_CATEGORIES, dtype=np.float64)
    raw = (
        np.exp(-((k - 4.0) ** 2) / (2.0 * 1.5**2))
        + 0.85 * np.exp(-((k - 11.0) ** 2) / (2.0 * 2.0**2))
        + 0.03
    )
    return raw / raw.sum()


def gen_1d_toy(n: int, seed: int = 0) -> Dataset:
    """Samples from the fixed 16-category mixture."""
    if n <= 0:
        raise ValueError("need a positive sample count")
    space = DiscreteSpace((TOY_1D_CATEGORIES,))
    truth = TabularDistribution(space, toy_1d_masses())
    rng = np.random.default_rng(seed)
    return Dataset(space, truth.sample(n, rng), name="toy1d", seed=seed, ground_truth=truth)


def _quantize(points: np.ndarray, bins: int) -> np.ndarray:
    u = (points + FIELD_HALF_WIDTH) / (2.0 * FIELD_HALF_WIDTH) * bins
    return np.clip(np.floor(u).astype(np.int64), 0, bins - 1)


_phi_cdf = np.vectorize(lambda z: 0.5 * (1.0 + math.erf(z / math.sqrt(2.0))))


def _checkerboard_marginals(bins: int) -> tuple[np.ndarray, np.ndarray]:
    """1-D quadratures of the blurred unit-square and square-wave factors.

    The hard density on the unit square is 1 + s(u) s(v) for the square
    wave s(u) = (-1)^floor(4u), so the Gaussian-blurred density stays
    separable; samples falling outside the square are folded into the
    edge bins, matching the clipping in :func:`_quantize`.
    """
    sigma = CHECKER_BLUR_BINS / bins
    sub = 24
    pts = (np.arange(bins * sub) + 0.5) / (bins * sub)
    # extend the end bins to catch the blur tails that quantize clips
    tail = np.linspace(-6 * sigma, 0, 200)
    width = 1.0 / (bins * sub)

    def box(u):
        return _phi_cdf(u / sigma) - _phi_cdf((u - 1.0) / sigma)

    def wave(u):
        total = np.zeros_like(u)
        for k in range(CHECKER_CELLS):
            lo, hi = k / CHECKER_CELLS, (k + 1) / CHECKER_CELLS
            total += (-1.0) ** k * (_phi_cdf((u - lo) / sigma) - _phi_cdf((u - hi) / sigma))
        return total

    m = box(pts).reshape(bins, sub).sum(axis=1) * width
    c = wave(pts).reshape(bins, sub).sum(axis=1) * width
    dt = tail[1] - tail[0]
    m[0] += np.trapezoid(box(tail), dx=dt)
    m[-1] += np.trapezoid(box(1.0 - tail), dx=dt)
    c[0] += np.trapezoid(wave(tail), dx=dt)
    c[-1] += np.trapezoid(wave(1.0 - tail), dx=dt)
    return m, c


def _checkerboard_masses(bins: int) -> np.ndarray:
    m, c = _checkerboard_marginals(bins)
    mass = np.outer(m, m) + np.outer(c, c)
    return (mass / mass.sum()).reshape(-1)


def _sample_checkerboard(n: int, rng: np.random.Generator, bins: int) -> np.ndarray:
    on = [(i, j) for i in range(CHECKER_CELLS) for j in range(CHECKER_CELLS) if (i + j) % 2 == 0]
    cells = rng.integers(0, len(on), size=n)
    corners = np.asarray(on, dtype=np.float64)[cells]
    u = (corners + rng.random((n, 2))) / CHECKER_CELLS  # uniform in the cell
    u = u + (CHECKER_BLUR_BINS / bins) * rng.standard_normal((n, 2))
    return (2.0 * u - 1.0) * FIELD_HALF_WIDTH


def _rings_density(points: np.ndarray) -> np.ndarray:
    r = np.linalg.norm(points, axis=-1)
    r = np.maximum(r, 1e-12)
    out = np.zeros_like(r)
    for radius in RING_RADII:
        out += np.exp(-((r - radius) ** 2) / (2.0 * RING_SIGMA**2))
    return out / (2.0 * len(RING_RADII) * np.pi * r * RING_SIGMA * np.sqrt(2.0 * np.pi))


def _sample_rings(n: int, rng: np.random.Generator) -> np.ndarray:
    which = rng.integers(0, len(RING_RADII), size=n)
    radius = np.asarray(RING_RADII)[which] + RING_SIGMA * rng.standard_normal(n)
    angle = rng.random(n) * 2.0 * np.pi
    return np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)


def _spiral_centers(t: np.ndarray, arm: np.ndarray) -> np.ndarray:
    rho = 0.25 + 1.95 * t
    phi = np.pi / 4.0 + 3.0 * np.pi * t + np.pi * arm
    return np.stack([rho * np.cos(phi), rho * np.sin(phi)], axis=-1)


def _spirals_density(points: np.ndarray, n_quad: int = 600) -> np.ndarray:
    t = (np.arange(n_quad) + 0.5) / n_quad
    out = np.zeros(points.shape[0])
    norm = 1.0 / (2.0 * np.pi * SPIRAL_SIGMA**2)
    for arm in (0.0, 1.0):
        centers = _spiral_centers(t, np.full(n_quad, arm))  # (n_quad, 2)
        # chunk the pairwise distances to bound memory
        for lo in range(0, points.shape[0], 4096):
            chunk = points[lo : lo + 4096]
            d2 = ((chunk[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            out[lo : lo + 4096] += 0.5 * norm * np.exp(-d2 / (2.0 * SPIRAL_SIGMA**2)).mean(axis=1)
    return out


def _sample_spirals(n: int, rng: np.random.Generator) -> np.ndarray:
    t = rng.random(n)
    arm = rng.integers(0, 2, size=n).astype(np.float64)
    return _spiral_centers(t, arm) + SPIRAL_SIGMA * rng.standard_normal((n, 2))


def _quadrature_masses(density_fn, bins: int) -> np.ndarray:
    """Midpoint-rule bin masses of a smooth density, renormalized."""
    step = 2.0 * FIELD_HALF_WIDTH / bins
    offsets = (np.arange(QUAD_SUBDIV) + 0.5) / QUAD_SUBDIV
    centers_1d = -FIELD_HALF_WIDTH + step * (np.arange(bins)[:, None] + offsets[None, :])
    xs = centers_1d.reshape(-1)
    grid = np.stack(np.meshgrid(xs, xs, indexing="ij"), axis=-1).reshape(-1, 2)
    dens = density_fn(grid).reshape(bins, QUAD_SUBDIV, bins, QUAD_SUBDIV)
    mass = dens.mean(axis=(1, 3)).reshape(-1)
    return mass / mass.sum()


def gen_2d_toy(name: str, n: int, bins: int = 91, seed: int = 0) -> Dataset:
    """Quantized draws from one of the documented 2-D toy densities."""
    if name not in TOY_2D_NAMES:
        raise ValueError(f"unknown 2-D toy {name!r}; expected one of {TOY_2D_NAMES}")
    if n <= 0:
        raise ValueError("need a positive sample count")
    if bins < 2:
        raise ValueError("need at least 2 bins per side")
    space = DiscreteSpace((bins, bins))
    rng = np.random.default_rng(seed)
    if name == "checkerboard":
        points = _sample_checkerboard(n, rng, bins)
        masses = _checkerboard_masses(bins)
    elif name == "rings":
        points = _sample_rings(n, rng)
        masses = _quadrature_masses(_rings_density, bins)
    else:
        points = _sample_spirals(n, rng)
        masses = _quadrature_masses(_spirals_density, bins)
    # background mixing happens in the continuous domain: a uniform draw
    # over the field quantizes to a uniform bin
    background = rng.random(n) < BACKGROUND_MIX
    points[background] = (rng.random((int(background.sum()), 2)) * 2.0 - 1.0) * FIELD_HALF_WIDTH
    masses = (1.0 - BACKGROUND_MIX) * masses + BACKGROUND_MIX / masses.size
    truth = TabularDistribution(space, masses, normalize=True)
    return Dataset(space, _quantize(points, bins), name=name, seed=seed, ground_truth=truth)


def load_tabular_csv(path, header: bool = False) -> Dataset:
    """Binary rows of comma-separated 0/1 values; rejects ragged rows."""
    rows: list[list[int]] = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if header and lineno == 1:
                continue
            line = raw.strip()
            if not line:
                continue
            try:
                values = [int(v) for v in line.split(",")]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-integer value") from exc
            if any(v not in (0, 1) for v in values):
                raise ValueError(f"{path}:{lineno}: non-binary value")
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise ValueError(
                    f"{path}:{lineno}: ragged row of length {len(values)}, expected {width}"
                )
            rows.append(values)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    samples = np.asarray(rows, dtype=np.int64)
    space = DiscreteSpace(tuple([2] * samples.shape[1]))
    return Dataset(space, samples, name="csv", seed=0)


def save_dataset_csv(path, dataset: Dataset) -> None:
    from .io import write_samples_csv

    write_samples_csv(path, dataset.samples)


def make_noise_kernel(w: float, space: DiscreteSpace) -> NoiseKernel:
    """Per-dimension stay-w kernel spreading (1-w) over the other categories."""
    return NoiseKernel(space=space, w=w)
