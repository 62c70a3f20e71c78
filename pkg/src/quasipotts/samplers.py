"""Single-node MCMC transition kernels.

Two kernels target the same node quasi-posterior over (delta_r, theta_r):

* :class:`MalaKernel` - coordinate-wise Langevin updates of the active
  parameters, exact Gaussian refresh of the inactive ones, then a sweep of
  Metropolised flips of the selection vector.  Works for any Potts model.
* :class:`PolyaGammaKernel` - Polya-Gamma augmented Gibbs update of the
  active block (binary Ising model only), the same inactive refresh, then a
  flip sweep evaluated on the augmented density.

Kernels update :class:`NodeState` in place and also return it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from . import kernels
from .model import ModelError, NodeDesign, PottsSpec
from .polyagamma import pg_draw
from .prior import Hyperparams, quadratic_penalty, sparsify

THETA_BOUND = 1e3


class SamplerError(RuntimeError):
    pass


@dataclass
class NodeState:
    theta: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        self.theta = np.array(self.theta, dtype=np.float64)
        self.delta = np.array(self.delta, dtype=np.int8)
        if self.theta.shape != self.delta.shape or self.theta.ndim != 1:
            raise ModelError("theta and delta must be vectors of equal length")

    def copy(self) -> "NodeState":
        return NodeState(self.theta.copy(), self.delta.copy())


@dataclass
class KernelDiagnostics:
    active_proposals: int = 0
    active_accepts: int = 0
    flips_attempted: int = 0
    flips_made: int = 0
    clamp_events: int = 0

    def __iadd__(self, other: "KernelDiagnostics"):
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    @property
    def acceptance_rate(self) -> float:
        return self.active_accepts / self.active_proposals if self.active_proposals else float("nan")


@dataclass
class _Cache:
    eta: np.ndarray
    h: float
    grad: np.ndarray = field(repr=False)


class NodeKernel:
    """State-independent pieces shared by both kernels for node ``r``.

    ``free`` marks coordinates allowed to carry signal; the others are held at
    theta = 0, delta = 0 and never touched.  With ``hp.fix_diagonal_active``
    the diagonal coordinate is pinned to delta = 1.
    """

    def __init__(self, r: int, Z, spec: PottsSpec, hp: Hyperparams, free=None,
                 design: NodeDesign | None = None, random_scan: bool = False):
        self.r = r
        self.random_scan = random_scan
        self.spec = spec
        self.hp = hp
        self.design = design if design is not None else NodeDesign(r, Z, spec)
        p = spec.p
        self.free = np.ones(p, dtype=bool) if free is None else np.asarray(free, dtype=bool).copy()
        self.pinned = np.zeros(p, dtype=bool)
        if hp.fix_diagonal_active:
            self.pinned[r] = True
            self.free[r] = True
        self.flippable = self.free & ~self.pinned

    def flip_order(self, rng):
        idx = np.flatnonzero(self.flippable)
        return rng.permutation(idx) if self.random_scan else idx

    def check_state(self, state: NodeState):
        if state.theta.shape != (self.spec.p,):
            raise ModelError(f"state must have length {self.spec.p}")
        if self.hp.fix_diagonal_active and state.delta[self.r] != 1:
            raise ModelError("diagonal selection must be 1 when fix_diagonal_active is set")

    # -- shared pieces -------------------------------------------------------

    def log_h(self, state: NodeState, eta=None) -> float:
        if eta is None:
            eta = self.design.eta(sparsify(state.theta, state.delta))
        return self.design.loglik_from_eta(eta) - quadratic_penalty(state.delta, state.theta, self.hp)

    def grad_h(self, state: NodeState, eta=None):
        """Gradient of h in theta_r (active: data term and slab; inactive: spike)."""
        if eta is None:
            eta = self.design.eta(sparsify(state.theta, state.delta))
        act = state.delta.astype(bool)
        g_ll = self.design.grad_from_eta(eta)
        return np.where(act, g_ll - state.theta / self.hp.rho, -state.theta / self.hp.gamma)

    def truncated_gradient(self, state: NodeState, eta=None):
        return truncate(self.grad_h(state, eta), self.hp.grad_cap)

    def sample_inactive(self, state: NodeState, rng) -> NodeState:
        idx = np.flatnonzero(self.free & (state.delta == 0))
        if idx.size:
            state.theta[idx] = math.sqrt(self.hp.gamma) * rng.standard_normal(idx.size)
        return state

    def _clamp(self, state: NodeState, diag: KernelDiagnostics):
        over = np.abs(state.theta) > THETA_BOUND
        if over.any():
            diag.clamp_events += int(over.sum())
            np.clip(state.theta, -THETA_BOUND, THETA_BOUND, out=state.theta)


def truncate(grad, cap: float):
    """Rescale ``grad`` to Euclidean norm ``cap`` when it exceeds it."""
    norm = float(np.linalg.norm(grad))
    return grad * (cap / max(cap, norm))


class MalaKernel(NodeKernel):
    """Metropolis-adjusted Langevin kernel for general Potts models."""

    def _cache(self, state: NodeState) -> _Cache:
        eta = self.design.eta(sparsify(state.theta, state.delta))
        return _Cache(eta, self.log_h(state, eta), self.truncated_gradient(state, eta))

    def log_proposal(self, x_to: float, state_from: NodeState, grad_from, j: int) -> float:
        sig = self.hp.sigma
        mean = state_from.theta[j] + 0.5 * sig * grad_from[j]
        return -((x_to - mean) ** 2) / (2.0 * sig * sig)

    def proposal_ratio(self, state: NodeState, j: int, value: float, cache: _Cache | None = None):
        """Log Hastings ratio for moving coordinate ``j`` of ``state`` to ``value``.

        Returns ``(log_ratio, proposed_state, proposed_cache)``.
        """
        if cache is None:
            cache = self._cache(state)
        prop = state.copy()
        prop.theta[j] = value
        eta_p = cache.eta + (value - state.theta[j]) * self.design.F[:, :, j]
        h_p = self.log_h(prop, eta_p)
        g_p = self.truncated_gradient(prop, eta_p)
        log_ratio = (h_p - cache.h
                     + self.log_proposal(state.theta[j], prop, g_p, j)
                     - self.log_proposal(value, state, cache.grad, j))
        return log_ratio, prop, _Cache(eta_p, h_p, g_p)

    def active_step(self, state: NodeState, j: int, rng, cache: _Cache | None = None,
                    diag: KernelDiagnostics | None = None):
        """One Langevin proposal on active coordinate ``j``; returns the new cache."""
        if not state.delta[j]:
            raise SamplerError(f"coordinate {j} is not active")
        if cache is None:
            cache = self._cache(state)
        sig = self.hp.sigma
        value = state.theta[j] + 0.5 * sig * cache.grad[j] + sig * rng.standard_normal()
        log_ratio, prop, cache_p = self.proposal_ratio(state, j, value, cache)
        u = rng.random()
        if diag is not None:
            diag.active_proposals += 1
        if np.isfinite(log_ratio) and (log_ratio >= 0.0 or u < math.exp(log_ratio)):
            state.theta[j] = value
            if diag is not None:
                diag.active_accepts += 1
            if abs(value) > THETA_BOUND:
                self._clamp(state, diag if diag is not None else KernelDiagnostics())
                return self._cache(state)
            return cache_p
        return cache

    def flip_log_ratio(self, state: NodeState, j: int, eta=None):
        """Log of the selection-flip ratio at ``j`` and the flipped eta."""
        if eta is None:
            eta = self.design.eta(sparsify(state.theta, state.delta))
        tj = state.theta[j]
        hp = self.hp
        if state.delta[j]:
            eta_f = eta - tj * self.design.F[:, :, j]
            prior = -hp.log_odds + tj * tj * (0.5 / hp.rho - 0.5 / hp.gamma)
        else:
            eta_f = eta + tj * self.design.F[:, :, j]
            prior = hp.log_odds + tj * tj * (0.5 / hp.gamma - 0.5 / hp.rho)
        if tj == 0.0:
            d_ll = 0.0
        else:
            d_ll = self.design.loglik_from_eta(eta_f) - self.design.loglik_from_eta(eta)
        return prior + d_ll, eta_f

    def flip(self, state: NodeState, j: int, rng, eta=None, diag: KernelDiagnostics | None = None):
        """Metropolised flip of delta_j; returns the (possibly updated) eta."""
        if not self.flippable[j]:
            raise SamplerError(f"coordinate {j} is not flippable")
        log_ratio, eta_f = self.flip_log_ratio(state, j, eta)
        u = rng.random()
        if diag is not None:
            diag.flips_attempted += 1
        if log_ratio >= 0.0 or u < math.exp(log_ratio):
            state.delta[j] = 1 - state.delta[j]
            if diag is not None:
                diag.flips_made += 1
            return eta_f
        return eta if eta is not None else self.design.eta(sparsify(state.theta, state.delta))

    def iterate(self, state: NodeState, rng):
        diag = KernelDiagnostics()
        active = np.flatnonzero(state.delta)
        if active.size:
            cache = self._cache(state)
            for j in active:
                cache = self.active_step(state, int(j), rng, cache, diag)
        self.sample_inactive(state, rng)
        eta = self.design.eta(sparsify(state.theta, state.delta))
        for j in self.flip_order(rng):
            eta = self.flip(state, int(j), rng, eta, diag)
        return state, diag


class PolyaGammaKernel(NodeKernel):
    """Polya-Gamma augmented Gibbs kernel for the binary Ising model."""

    def __init__(self, r: int, Z, spec: PottsSpec, hp: Hyperparams, free=None,
                 design: NodeDesign | None = None, random_scan: bool = False):
        if not spec.is_ising:
            raise ModelError("the Polya-Gamma sampler needs the binary ising-identity model")
        super().__init__(r, Z, spec, hp, free, design, random_scan)
        self.X = np.ascontiguousarray(self.design.F[:, 1, :])
        self.kappa = self.design.zr - 0.5
        self.xk = self.X.T @ self.kappa

    def draw_omega(self, state: NodeState, rng):
        act = np.flatnonzero(state.delta)
        psi = self.X[:, act] @ state.theta[act] if act.size else np.zeros(self.design.n)
        return pg_draw(psi, rng, size=psi.shape) if psi.size else np.zeros(0)

    def gram(self, omega):
        return (self.X * omega[:, None]).T @ self.X

    def conditional_moments(self, act, omega, gram=None):
        """Mean and Cholesky factor of the active-block precision given omega."""
        if gram is None:
            gram = self.gram(omega)
        prec = gram[np.ix_(act, act)] + np.eye(act.size) / self.hp.rho
        try:
            chol = cholesky(prec, lower=True)
        except np.linalg.LinAlgError as exc:  # impossible with finite rho
            raise SamplerError("active-block precision is not positive definite") from exc
        mean = cho_solve((chol, True), self.xk[act])
        return mean, chol

    def active_step(self, state: NodeState, omega, rng, gram=None) -> NodeState:
        act = np.flatnonzero(state.delta)
        if not act.size:
            return state
        mean, chol = self.conditional_moments(act, omega, gram)
        xi = rng.standard_normal(act.size)
        state.theta[act] = mean + solve_triangular(chol.T, xi, lower=False)
        return state

    def flip_sweep(self, state: NodeState, gram, rng, diag: KernelDiagnostics | None = None):
        order = self.flip_order(rng)
        uniforms = rng.random(self.spec.p)
        hp = self.hp
        made = kernels.pg_flip_sweep(
            state.theta, state.delta, gram, self.xk, uniforms,
            hp.log_odds, 0.5 * (1.0 / hp.gamma - 1.0 / hp.rho), self.flippable, order,
        )
        if diag is not None:
            diag.flips_attempted += int(self.flippable.sum())
            diag.flips_made += int(made)
        return state

    def flip_log_ratio(self, state: NodeState, j: int, gram) -> float:
        """Log ratio of the augmented density for flipping delta_j (fast form)."""
        hp = self.hp
        act = state.delta.astype(bool).copy()
        act[j] = False
        tj = state.theta[j]
        cross = gram[j, act] @ state.theta[act]
        d = (hp.log_odds + 0.5 * (1.0 / hp.gamma - 1.0 / hp.rho) * tj * tj
             + tj * self.xk[j] - 0.5 * tj * tj * gram[j, j] - tj * cross)
        return -d if state.delta[j] else d

    def iterate(self, state: NodeState, rng):
        diag = KernelDiagnostics()
        omega = self.draw_omega(state, rng)
        gram = self.gram(omega)
        act = int(np.count_nonzero(state.delta))
        self.active_step(state, omega, rng, gram)
        diag.active_proposals += act
        diag.active_accepts += act
        self._clamp(state, diag)
        self.sample_inactive(state, rng)
        self.flip_sweep(state, gram, rng, diag)
        return state, diag


# -- functional wrappers ------------------------------------------------------


def truncated_gradient(delta_r, theta_r, Z, hp: Hyperparams, spec: PottsSpec, r: int):
    k = NodeKernel(r, Z, spec, hp.replace(fix_diagonal_active=False))
    return k.truncated_gradient(NodeState(theta_r, delta_r))


def mala_active_step(state: NodeState, j: int, Z, hp: Hyperparams, spec: PottsSpec, r: int, rng):
    MalaKernel(r, Z, spec, hp).active_step(state, j, rng)
    return state


def sample_inactive(state: NodeState, hp: Hyperparams, rng):
    idx = np.flatnonzero(state.delta == 0)
    if idx.size:
        state.theta[idx] = math.sqrt(hp.gamma) * rng.standard_normal(idx.size)
    return state


def delta_flip_mala(state: NodeState, j: int, Z, hp: Hyperparams, spec: PottsSpec, r: int, rng):
    MalaKernel(r, Z, spec, hp).flip(state, j, rng)
    return state


def mala_node_iteration(state: NodeState, Z, hp: Hyperparams, spec: PottsSpec, r: int, rng):
    return MalaKernel(r, Z, spec, hp).iterate(state, rng)


def pg_active_step(state: NodeState, Z, hp: Hyperparams, spec: PottsSpec, r: int, rng):
    k = PolyaGammaKernel(r, Z, spec, hp)
    omega = k.draw_omega(state, rng)
    k.active_step(state, omega, rng)
    return state, omega


def delta_flip_pg(state: NodeState, Z, hp: Hyperparams, spec: PottsSpec, r: int, omega, rng):
    k = PolyaGammaKernel(r, Z, spec, hp)
    k.flip_sweep(state, k.gram(np.asarray(omega, dtype=np.float64)), rng)
    return state


def pg_node_iteration(state: NodeState, Z, hp: Hyperparams, spec: PottsSpec, r: int, rng):
    return PolyaGammaKernel(r, Z, spec, hp).iterate(state, rng)
