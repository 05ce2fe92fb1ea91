"""Bound-constrained differential evolution and the enhancement-matching search.

DE/rand/1/bin with clamp-to-box trial repair, greedy selection and early
stopping on population fitness spread. Fully deterministic for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import imagekit
from .enhance import ALPHA_MAX, ALPHA_MIN, GAMMA_MAX, GAMMA_MIN, EnhanceParams, enhance


class ObjectiveError(RuntimeError):
    """Raised when the objective returns a non-finite value."""

    def __init__(self, x, value):
        super().__init__(f"objective returned non-finite value {value} at {np.asarray(x)}")
        self.x = np.asarray(x, dtype=np.float64).copy()
        self.value = value


@dataclass(frozen=True)
class DEConfig:
    population: int = 10
    max_iterations: int = 30
    tolerance: float = 1e-4
    mutation_factor: float = 0.8
    crossover_rate: float = 0.9
    seed: int = 0

    def validate(self) -> "DEConfig":
        if self.population < 4:
            raise ValueError("population must be >= 4 for rand/1 mutation")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be > 0")
        if not (0.0 < self.crossover_rate <= 1.0):
            raise ValueError("crossover rate must be in (0, 1]")
        if self.mutation_factor <= 0:
            raise ValueError("mutation factor must be > 0")
        return self

    def as_dict(self) -> dict:
        return {
            "population": self.population,
            "max_iterations": self.max_iterations,
            "tolerance": self.tolerance,
            "mutation_factor": self.mutation_factor,
            "crossover_rate": self.crossover_rate,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DEConfig":
        return cls(**d)


@dataclass(frozen=True)
class Bounds:
    low: tuple
    high: tuple

    def __post_init__(self):
        if len(self.low) != len(self.high):
            raise ValueError("bounds low/high length mismatch")
        for lo, hi in zip(self.low, self.high):
            if not lo < hi:
                raise ValueError(f"invalid bound pair ({lo}, {hi})")

    @property
    def dim(self) -> int:
        return len(self.low)

    def arrays(self):
        return np.asarray(self.low, dtype=np.float64), np.asarray(self.high, dtype=np.float64)


ENHANCE_BOX = Bounds(low=(ALPHA_MIN, GAMMA_MIN), high=(ALPHA_MAX, GAMMA_MAX))


def _eval(objective, x):
    f = float(objective(x))
    if not np.isfinite(f):
        raise ObjectiveError(x, f)
    return f


def minimize(objective, bounds: Bounds, cfg: DEConfig):
    """DE/rand/1/bin minimization over a box.

    Returns (best_x, best_f, iterations_used). Every evaluated candidate lies
    inside the box; best_f never increases across generations.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    lo, hi = bounds.arrays()
    dim = bounds.dim
    npop = cfg.population

    pop = lo + rng.random((npop, dim)) * (hi - lo)
    fit = np.array([_eval(objective, pop[i]) for i in range(npop)])

    iterations = 0
    for _ in range(cfg.max_iterations):
        iterations += 1
        for i in range(npop):
            choices = [j for j in range(npop) if j != i]
            a, b, c = rng.choice(choices, size=3, replace=False)
            mutant = pop[a] + cfg.mutation_factor * (pop[b] - pop[c])
            np.clip(mutant, lo, hi, out=mutant)
            cross = rng.random(dim) < cfg.crossover_rate
            cross[rng.integers(dim)] = True  # force at least one mutant dimension
            trial = np.where(cross, mutant, pop[i])
            f_trial = _eval(objective, trial)
            if f_trial <= fit[i]:
                pop[i] = trial
                fit[i] = f_trial
        if float(fit.max() - fit.min()) < cfg.tolerance:
            break
    best = int(np.argmin(fit))
    return pop[best].copy(), float(fit[best]), iterations


def enhancement_objective(rendered, target):
    """Composite matching loss as a function of (alpha, gamma).

    Equal-weight mean of MSE, (1 - SSIM) and (1 - histogram correlation)
    between the enhanced render and the target; zero iff the enhanced render
    matches the target exactly.
    """
    rendered = imagekit.as_image(rendered)
    target = imagekit.as_image(target)
    if rendered.shape != target.shape:
        raise imagekit.ImageError(
            f"image dimension mismatch: {rendered.shape} vs {target.shape}"
        )

    def objective(x):
        alpha, gamma = float(x[0]), float(x[1])
        e = enhance(rendered, EnhanceParams(alpha, gamma))
        return (
            imagekit.mse(e, target)
            + (1.0 - imagekit.ssim(e, target))
            + (1.0 - imagekit.hist_correlation(e, target))
        ) / 3.0

    return objective


@dataclass(frozen=True)
class SearchResult:
    params: EnhanceParams
    loss: float
    iterations: int


def search_params(rendered, target, cfg: DEConfig = DEConfig()) -> SearchResult:
    """Recover the enhancement parameters mapping `rendered` onto `target`."""
    objective = enhancement_objective(rendered, target)
    x, f, iters = minimize(objective, ENHANCE_BOX, cfg)
    return SearchResult(EnhanceParams(float(x[0]), float(x[1])), f, iters)
