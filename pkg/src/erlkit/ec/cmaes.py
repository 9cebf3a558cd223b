"""Full-covariance (mu/mu_w, lambda)-CMA-ES with Hansen's default constants."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from erlkit.exec import rng

log = logging.getLogger(__name__)


class CapacityError(RuntimeError):
    """Genotype too large for a dense d x d covariance."""


@dataclass(frozen=True)
class CmaConstants:
    weights: np.ndarray
    mu_eff: float
    cc: float
    cs: float
    c1: float
    cmu: float
    damps: float
    chi_n: float


@lru_cache(maxsize=64)
def cma_constants(dim: int, popsize: int, elites: int) -> CmaConstants:
    w = np.log((popsize + 1) / 2.0) - np.log(np.arange(1, elites + 1))
    if np.any(w <= 0):
        # fall back to the mu-based form when elites exceed half the population
        w = np.log(elites + 0.5) - np.log(np.arange(1, elites + 1))
    w = w / w.sum()
    mu_eff = 1.0 / float(np.sum(w * w))
    n = float(dim)
    cc = (4 + mu_eff / n) / (n + 4 + 2 * mu_eff / n)
    cs = (mu_eff + 2) / (n + mu_eff + 5)
    c1 = 2 / ((n + 1.3) ** 2 + mu_eff)
    cmu = min(1 - c1, 2 * (mu_eff - 2 + 1 / mu_eff) / ((n + 2) ** 2 + mu_eff))
    damps = 1 + 2 * max(0.0, np.sqrt((mu_eff - 1) / (n + 1)) - 1) + cs
    chi_n = np.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))
    return CmaConstants(w, mu_eff, cc, cs, c1, cmu, damps, chi_n)


@dataclass(frozen=True)
class CmaState:
    mean: np.ndarray
    sigma: float
    C: np.ndarray
    p_sigma: np.ndarray
    p_c: np.ndarray
    B: np.ndarray
    D: np.ndarray  # sqrt of eigenvalues of C
    generation: int = 0
    popsize: int = 128
    elites: int = 64
    reconditioned: int = 0


def _factorize(C: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, bool]:
    """Eigen-factorization of a symmetric C; adds 1e-10 * I until it is positive definite."""
    fixed = False
    eye = np.eye(C.shape[0])
    for _ in range(20):
        try:
            evals, B = np.linalg.eigh(C)
            if np.all(np.isfinite(evals)) and evals.min() > 0:
                return C, B, np.sqrt(evals), fixed
        except np.linalg.LinAlgError:
            pass
        C = C + 1e-10 * eye
        fixed = True
    raise np.linalg.LinAlgError("covariance matrix could not be re-conditioned")


def cmaes_init(mean, sigma0=0.1, popsize=128, elites=64, max_dim=4096) -> CmaState:
    mean = np.array(mean, dtype=np.float64)
    d = mean.shape[0]
    if d > max_dim:
        raise CapacityError(
            f"CMA-ES covariance for dimension {d} exceeds the configured cap of {max_dim} (ec.cmaes.max_dim)"
        )
    if not 1 <= elites <= popsize:
        raise ValueError("elites must be in [1, popsize]")
    return CmaState(
        mean=mean,
        sigma=float(sigma0),
        C=np.eye(d),
        p_sigma=np.zeros(d),
        p_c=np.zeros(d),
        B=np.eye(d),
        D=np.ones(d),
        popsize=int(popsize),
        elites=int(elites),
    )


def cmaes_ask(state: CmaState, key, n: int | None = None) -> np.ndarray:
    n = state.popsize if n is None else n
    if n < 2:
        raise ValueError("population size must be >= 2")
    z = rng.generator(key).standard_normal((n, state.mean.shape[0]))
    y = (z * state.D) @ state.B.T
    return state.mean + state.sigma * y


def cmaes_tell(state: CmaState, candidates, fitness):
    """Update from candidates and their fitness (higher is better)."""
    x = np.asarray(candidates, dtype=np.float64)
    fitness = np.asarray(fitness, dtype=np.float64)
    d = state.mean.shape[0]
    k = cma_constants(d, x.shape[0], state.elites)
    order = np.argsort(-fitness, kind="stable")[: state.elites]
    y = (x[order] - state.mean) / state.sigma
    y_w = k.weights @ y
    mean = state.mean + state.sigma * y_w

    c_inv_sqrt_yw = state.B @ ((state.B.T @ y_w) / state.D)
    p_sigma = (1 - k.cs) * state.p_sigma + np.sqrt(k.cs * (2 - k.cs) * k.mu_eff) * c_inv_sqrt_yw
    g = state.generation + 1
    ps_norm = float(np.linalg.norm(p_sigma))
    h_sigma = ps_norm / np.sqrt(1 - (1 - k.cs) ** (2 * g)) < (1.4 + 2 / (d + 1)) * k.chi_n
    p_c = (1 - k.cc) * state.p_c + (np.sqrt(k.cc * (2 - k.cc) * k.mu_eff) * y_w if h_sigma else 0.0)
    delta_h = (1 - h_sigma) * k.cc * (2 - k.cc)
    rank_mu = (y * k.weights[:, None]).T @ y
    C = (1 + k.c1 * delta_h - k.c1 - k.cmu) * state.C + k.c1 * np.outer(p_c, p_c) + k.cmu * rank_mu
    C = (C + C.T) / 2.0
    sigma = state.sigma * float(np.exp((k.cs / k.damps) * (ps_norm / k.chi_n - 1)))

    C, B, D, fixed = _factorize(C)
    if fixed:
        log.warning("CMA-ES covariance re-conditioned at generation %d", g)
    new = replace(
        state,
        mean=mean,
        sigma=sigma,
        C=C,
        p_sigma=p_sigma,
        p_c=p_c,
        B=B,
        D=D,
        generation=g,
        reconditioned=state.reconditioned + int(fixed),
    )
    return new, {"sigma": sigma, "reconditioned": bool(fixed)}
