"""Spike-and-slab prior, hyperparameter defaults and the node log-kernel h."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .model import ModelError, NodeDesign, PottsSpec

DEFAULT_SIGMA = 0.1
DEFAULT_GRAD_CAP = 100.0


@dataclass(frozen=True)
class Hyperparams:
    """Prior and kernel tuning constants for one fit.

    u, q      selection prior; q is the prior inclusion probability
    rho       slab variance
    gamma     spike variance
    sigma     MALA step size
    grad_cap  truncation constant for the Langevin drift
    """

    u: float
    q: float
    rho: float
    gamma: float
    sigma: float = DEFAULT_SIGMA
    grad_cap: float = DEFAULT_GRAD_CAP
    fix_diagonal_active: bool = True

    def __post_init__(self):
        if not 0.0 < self.q < 1.0:
            raise ModelError("q must lie in (0, 1)")
        for name in ("rho", "gamma", "sigma", "grad_cap"):
            if not getattr(self, name) > 0.0:
                raise ModelError(f"{name} must be positive")

    @property
    def log_odds(self) -> float:
        """Per-inclusion log weight: ln(q/(1-q)) + 0.5 ln(gamma/rho)."""
        return math.log(self.q / (1.0 - self.q)) + 0.5 * math.log(self.gamma / self.rho)

    def replace(self, **changes) -> "Hyperparams":
        d = asdict(self)
        d.update(changes)
        return Hyperparams(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def default_hyperparams(n: int, p: int, u: float = 2.0, c0: float = 1.0, c1: float = 1.0,
                        **overrides) -> Hyperparams:
    """q = p^-(1+u), gamma = c0 / max(n, p), rho = c1 sqrt(n / ln p)."""
    if p < 2:
        raise ModelError("p must be at least 2 (log p must be positive)")
    if n < 1 or u <= 0 or c0 <= 0 or c1 <= 0:
        raise ModelError("need n >= 1 and u, c0, c1 > 0")
    hp = dict(
        u=float(u),
        q=float(p) ** (-(1.0 + u)),
        gamma=c0 / max(n, p),
        rho=c1 * math.sqrt(n / math.log(p)),
    )
    hp.update(overrides)
    return Hyperparams(**hp)


def sparsify(theta_r, delta_r):
    return np.where(np.asarray(delta_r, dtype=bool), theta_r, 0.0)


def quadratic_penalty(delta_r, theta_r, hp: Hyperparams) -> float:
    d = np.asarray(delta_r, dtype=bool)
    t2 = np.asarray(theta_r, dtype=np.float64) ** 2
    return float(t2[d].sum() / (2.0 * hp.rho) + t2[~d].sum() / (2.0 * hp.gamma))


def log_h(delta_r, theta_r, Z, hp: Hyperparams, spec: PottsSpec, r: int | None = None,
          design: NodeDesign | None = None) -> float:
    """Sparsified conditional log-likelihood minus the spike/slab penalties.

    Either ``design`` or the node index ``r`` (with ``Z``) must be given.
    """
    theta_r = np.asarray(theta_r, dtype=np.float64)
    delta_r = np.asarray(delta_r)
    if theta_r.shape != (spec.p,) or delta_r.shape != (spec.p,):
        raise ModelError(f"delta_r and theta_r must have length {spec.p}")
    if design is None:
        if r is None:
            raise ModelError("log_h needs the node index r")
        design = NodeDesign(r, Z, spec)
    return design.loglik(sparsify(theta_r, delta_r)) - quadratic_penalty(delta_r, theta_r, hp)


def log_prior(delta_r, theta_r, hp: Hyperparams) -> float:
    """Log spike-and-slab prior density, zero at (delta, theta) = (0, 0)."""
    k = int(np.count_nonzero(delta_r))
    return k * hp.log_odds - quadratic_penalty(delta_r, theta_r, hp)
