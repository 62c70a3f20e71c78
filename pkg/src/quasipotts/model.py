"""Potts / Ising model family: node conditionals, pseudo-likelihood, exact
enumeration for tiny models, and Gibbs-sampled synthetic data.

Colors are 0-based throughout.  A parameter matrix ``theta`` is indexed as
``theta[r, j]`` = coefficient of node ``j`` in the conditional of node ``r``;
generating matrices are symmetric so the row/column distinction vanishes.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import kernels

MAX_ENUMERATION_STATES = 2**20


class ModelError(ValueError):
    """Inputs that do not conform to the model specification."""


def _builtin_tables(name: str, m: int):
    s = np.arange(m, dtype=np.float64)
    if name == "ising-identity":
        return s.copy(), np.outer(s, s)
    if name == "scaled-quadratic":
        scale = float(m - 1)
        return (s / scale) ** 2, np.outer(s, s) / scale**2
    raise ModelError(f"unknown function id {name!r}")


@dataclass(frozen=True)
class PottsSpec:
    """Model shape: ``p`` nodes with ``m`` colors and the C(s), C(s, t) tables.

    ``mean_field`` and ``coupling`` accept either a built-in id
    (``"ising-identity"`` or ``"scaled-quadratic"``) or explicit tables of
    shape ``(m,)`` and ``(m, m)``.
    """

    p: int
    m: int = 2
    mean_field: object = "ising-identity"
    coupling: object = "ising-identity"
    mf_table: np.ndarray = field(init=False, repr=False, compare=False)
    cp_table: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.p) < 1:
            raise ModelError("p must be a positive integer")
        if int(self.m) < 2:
            raise ModelError("m must be at least 2")
        m = int(self.m)
        if isinstance(self.mean_field, str):
            mf = _builtin_tables(self.mean_field, m)[0]
        else:
            mf = np.asarray(self.mean_field, dtype=np.float64)
        if isinstance(self.coupling, str):
            cp = _builtin_tables(self.coupling, m)[1]
        else:
            cp = np.asarray(self.coupling, dtype=np.float64)
        if mf.shape != (m,) or not np.all(np.isfinite(mf)):
            raise ModelError(f"mean-field table must hold {m} finite values")
        if cp.shape != (m, m) or not np.all(np.isfinite(cp)):
            raise ModelError(f"coupling table must be a finite {m}x{m} array")
        object.__setattr__(self, "mf_table", np.ascontiguousarray(mf))
        object.__setattr__(self, "cp_table", np.ascontiguousarray(cp))

    @property
    def is_ising(self) -> bool:
        """True for the binary model with C(s) = s and C(s, t) = s t."""
        s = np.arange(2.0)
        return (
            self.m == 2
            and np.array_equal(self.mf_table, s)
            and np.array_equal(self.cp_table, np.outer(s, s))
        )


def check_data(Z, spec: PottsSpec) -> np.ndarray:
    Z = np.asarray(Z)
    if Z.ndim != 2 or Z.shape[1] != spec.p:
        raise ModelError(f"data must be n x {spec.p}, got shape {Z.shape}")
    if Z.size and not np.issubdtype(Z.dtype, np.integer):
        if not np.all(Z == np.round(Z)):
            raise ModelError("data must be integer colors")
    Z = Z.astype(np.int64, copy=False)
    if Z.size and (Z.min() < 0 or Z.max() >= spec.m):
        raise ModelError(f"data values must lie in 0..{spec.m - 1}")
    return Z


def _check_node(r: int, theta_r, spec: PottsSpec) -> np.ndarray:
    if not 0 <= r < spec.p:
        raise ModelError(f"node index {r} out of range for p={spec.p}")
    theta_r = np.asarray(theta_r, dtype=np.float64)
    if theta_r.shape != (spec.p,):
        raise ModelError(f"theta_r must have length {spec.p}")
    return theta_r


class NodeDesign:
    """Feature tensor for the conditional of node ``r``.

    ``F[i, s, j]`` is ``C(s, z_ij)`` for ``j != r`` and ``C(s)`` for ``j == r``,
    so the conditional log-odds table is ``eta = F @ theta_r`` with shape
    ``(n, m)``.
    """

    def __init__(self, r: int, Z, spec: PottsSpec):
        Z = check_data(Z, spec)
        if not 0 <= r < spec.p:
            raise ModelError(f"node index {r} out of range for p={spec.p}")
        self.r = r
        self.spec = spec
        self.n = Z.shape[0]
        F = spec.cp_table[:, Z].transpose(1, 0, 2).copy()
        F[:, :, r] = spec.mf_table[None, :]
        self.F = F
        self.zr = Z[:, r].copy()
        self.F_obs = F[np.arange(self.n), self.zr, :]
        self.obs_sum = self.F_obs.sum(axis=0)

    def eta(self, theta_r):
        return self.F @ theta_r

    def loglik_from_eta(self, eta) -> float:
        if self.n == 0:
            return 0.0
        return float(eta[np.arange(self.n), self.zr].sum() - logsumexp(eta, axis=1).sum())

    def grad_from_eta(self, eta):
        if self.n == 0:
            return np.zeros(self.spec.p)
        P = np.exp(eta - logsumexp(eta, axis=1, keepdims=True))
        return self.obs_sum - np.einsum("is,isj->j", P, self.F)

    def loglik(self, theta_r) -> float:
        return self.loglik_from_eta(self.eta(theta_r))

    def grad(self, theta_r):
        return self.grad_from_eta(self.eta(theta_r))


def conditional_pmf(r: int, theta_r, Z, spec: PottsSpec):
    """Row-wise conditional distribution of node ``r``; shape ``(n, m)``."""
    theta_r = _check_node(r, theta_r, spec)
    d = NodeDesign(r, Z, spec)
    eta = d.eta(theta_r)
    return np.exp(eta - logsumexp(eta, axis=1, keepdims=True))


def conditional_log_likelihood(r: int, theta_r, Z, spec: PottsSpec) -> float:
    """Log conditional likelihood of node ``r`` summed over the rows of ``Z``."""
    theta_r = _check_node(r, theta_r, spec)
    return NodeDesign(r, Z, spec).loglik(theta_r)


def conditional_log_lik_gradient(r: int, theta_r, Z, spec: PottsSpec):
    theta_r = _check_node(r, theta_r, spec)
    return NodeDesign(r, Z, spec).grad(theta_r)


def pseudo_log_likelihood(theta, Z, spec: PottsSpec) -> float:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (spec.p, spec.p):
        raise ModelError(f"theta must be {spec.p} x {spec.p}")
    total = 0.0
    for r in range(spec.p):
        total += conditional_log_likelihood(r, theta[r], Z, spec)
    return total


def _check_symmetric(theta, spec: PottsSpec) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (spec.p, spec.p):
        raise ModelError(f"theta must be {spec.p} x {spec.p}")
    if not np.all(np.isfinite(theta)):
        raise ModelError("theta must be finite")
    if not np.allclose(theta, theta.T, rtol=0.0, atol=1e-12):
        raise ModelError("generating theta must be symmetric")
    return theta


def _energy(states, theta, spec: PottsSpec):
    # sum_r theta_rr C(z_r) + sum_{j<r} theta_rj C(z_r, z_j)
    e = spec.mf_table[states] @ np.diag(theta)
    p = spec.p
    for r in range(p):
        for j in range(r):
            e = e + theta[r, j] * spec.cp_table[states[:, r], states[:, j]]
    return e


def all_states(spec: PottsSpec) -> np.ndarray:
    return np.array(list(itertools.product(range(spec.m), repeat=spec.p)), dtype=np.int64).reshape(-1, spec.p)


def exact_log_pmf_table(theta, spec: PottsSpec):
    """All states and their exact log-probabilities, by enumeration."""
    if spec.m**spec.p > MAX_ENUMERATION_STATES:
        raise ModelError(f"state space {spec.m}^{spec.p} too large to enumerate")
    theta = _check_symmetric(theta, spec)
    states = all_states(spec)
    e = _energy(states, theta, spec)
    return states, e - logsumexp(e)


def exact_log_pmf(z, theta, spec: PottsSpec) -> float:
    z = np.asarray(z, dtype=np.int64)
    if z.shape != (spec.p,) or z.min() < 0 or z.max() >= spec.m:
        raise ModelError("z must be a length-p vector of colors")
    states, logp = exact_log_pmf_table(theta, spec)
    idx = int(np.ravel_multi_index(tuple(z), (spec.m,) * spec.p))
    assert np.array_equal(states[idx], z)
    return float(logp[idx])


def gibbs_generate(theta, spec: PottsSpec, n: int, burn_in: int = 1000, thin: int = 10,
                   seed=None, chunk: int = 4096) -> np.ndarray:
    """Draw ``n`` rows from the Potts model by systematic-scan Gibbs sampling.

    One chain is run: ``burn_in`` full sweeps are discarded, then every
    ``thin``-th sweep is kept.  The initial state is uniform over colors.
    """
    theta = _check_symmetric(theta, spec)
    if burn_in < 1 or thin < 1:
        raise ModelError("burn_in and thin must be >= 1")
    if n < 0:
        raise ModelError("n must be non-negative")
    rng = np.random.default_rng(seed)
    state = rng.integers(spec.m, size=spec.p).astype(np.int64)
    out = np.empty((n, spec.p), dtype=np.int64)
    total = burn_in + n * thin
    theta = np.ascontiguousarray(theta)
    row = 0
    done = 0
    while done < total:
        k = min(chunk, total - done)
        sweeps = np.arange(done + 1, done + k + 1)
        record = (sweeps > burn_in) & ((sweeps - burn_in) % thin == 0)
        uniforms = rng.random((k, spec.p))
        row = kernels.gibbs_sweeps(state, theta, spec.mf_table, spec.cp_table,
                                   uniforms, record, out, row)
        done += k
    assert row == n
    return out
