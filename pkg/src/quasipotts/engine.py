"""Full fits: per-node initialisation, chain execution and node-parallel runs.

Node ``r`` draws from its own ``numpy.random.Generator`` seeded with
``SeedSequence(master_seed, spawn_key=(r,))`` (the stream numpy's
``SeedSequence(master_seed).spawn(p)[r]`` would give).  Results therefore do
not depend on how node tasks are scheduled or how many workers run them.
"""
from __future__ import annotations

import logging
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import ModelError, NodeDesign, PottsSpec, check_data
from .prior import Hyperparams
from .samplers import KernelDiagnostics, MalaKernel, NodeState, PolyaGammaKernel

log = logging.getLogger(__name__)

WORKERS_ENV = "QUASIPOTTS_WORKERS"
SAMPLERS = ("mala", "pg")
INITS = ("lasso", "zero", "given")


class EngineError(RuntimeError):
    pass


class NodeRunError(EngineError):
    def __init__(self, node: int, cause: BaseException):
        super().__init__(f"node {node}: {type(cause).__name__}: {cause}")
        self.node = node


@dataclass(frozen=True)
class McmcConfig:
    sampler: str = "pg"
    iterations: int = 5000
    burn_in: int = 1000
    thin: int = 1
    master_seed: int = 0
    init: str = "lasso"
    lasso_lambda: float | None = None
    random_scan: bool = False

    def __post_init__(self):
        if self.sampler not in SAMPLERS:
            raise EngineError(f"sampler must be one of {SAMPLERS}")
        if self.init not in INITS:
            raise EngineError(f"init must be one of {INITS}")
        if self.thin < 1:
            raise EngineError("thin must be >= 1")
        if not 0 <= self.burn_in < self.iterations:
            raise EngineError("need 0 <= burn_in < iterations")
        if self.n_retained < 1:
            raise EngineError("(iterations - burn_in) / thin must be >= 1")
        if not 0 <= int(self.master_seed) < 2**64:
            raise EngineError("master_seed must be a 64-bit unsigned integer")

    @property
    def n_retained(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class NodeRunResult:
    node: int
    theta_samples: np.ndarray
    delta_samples: np.ndarray
    diagnostics: KernelDiagnostics
    wall_time: float = 0.0
    constant_column: bool = False


@dataclass
class FitResult:
    nodes: list
    config: McmcConfig
    hyperparams: Hyperparams
    spec: PottsSpec = field(repr=False)

    @property
    def p(self) -> int:
        return len(self.nodes)

    def theta_samples(self) -> np.ndarray:
        """Array ``(p, S, p)``: node, retained sample, coordinate."""
        return np.stack([nr.theta_samples for nr in self.nodes])

    def delta_samples(self) -> np.ndarray:
        return np.stack([nr.delta_samples for nr in self.nodes])


def node_seed(master_seed: int, r: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master_seed), spawn_key=(int(r),))


def node_rng(master_seed: int, r: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(node_seed(master_seed, r)))


def default_lambda(n: int, p: int) -> float:
    return math.sqrt(math.log(p) / n)


def _soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def lasso_init(r: int, Z, lam: float, spec: PottsSpec, max_iter: int = 20_000, tol: float = 1e-7,
               design: NodeDesign | None = None, zero_tol: float = 1e-6):
    """L1-penalised conditional MLE by proximal gradient with backtracking.

    Minimises ``-loglik_r / n + lam * sum_{j != r} |theta_j|``.  Iteration
    stops once the gradient mapping ``(theta - prox(theta - t grad)) / t`` has
    sup-norm at most ``tol``.  Returns ``(theta0, delta0)`` with
    ``delta0 = |theta0| > zero_tol``.
    """
    if lam < 0:
        raise ModelError("lambda must be non-negative")
    d = design if design is not None else NodeDesign(r, Z, spec)
    n = max(d.n, 1)
    weights = np.full(spec.p, lam)
    weights[r] = 0.0

    def smooth(th):
        return -d.loglik(th) / n

    def grad(th):
        return -d.grad(th) / n

    theta = np.zeros(spec.p)
    f = smooth(theta)
    step = 1.0
    for it in range(max_iter):
        g = grad(theta)
        step = min(step * 2.0, 1e6)
        while True:
            cand = _soft_threshold(theta - step * g, step * weights)
            diff = cand - theta
            f_c = smooth(cand)
            if f_c <= f + g @ diff + diff @ diff / (2.0 * step) + 1e-15:
                break
            step *= 0.5
            if step < 1e-12:
                break
        if not np.isfinite(f_c):
            raise EngineError(f"node {r}: non-finite objective in lasso initialisation")
        theta, f = cand, f_c
        if np.max(np.abs(diff)) / step <= tol:
            break
    else:
        log.warning("node %d: lasso initialisation stopped at max_iter=%d", r, max_iter)
    delta = (np.abs(theta) > zero_tol).astype(np.int8)
    return theta, delta


def _kernel(r, Z, spec, hp, cfg, free, design):
    cls = PolyaGammaKernel if cfg.sampler == "pg" else MalaKernel
    return cls(r, Z, spec, hp, free=free, design=design, random_scan=cfg.random_scan)


def initial_state(r: int, Z, spec: PottsSpec, hp: Hyperparams, cfg: McmcConfig, free,
                  design: NodeDesign, given: NodeState | None = None) -> NodeState:
    p = spec.p
    if cfg.init == "given":
        if given is None:
            raise EngineError("init='given' needs an initial state")
        state = given.copy()
    elif cfg.init == "zero":
        state = NodeState(np.zeros(p), np.zeros(p, dtype=np.int8))
        state.delta[r] = 1
    else:
        lam = cfg.lasso_lambda if cfg.lasso_lambda is not None else default_lambda(max(design.n, 1), p)
        theta, delta = lasso_init(r, Z, lam, spec, design=design)
        state = NodeState(theta, delta)
    state.theta[~free] = 0.0
    state.delta[~free] = 0
    if hp.fix_diagonal_active:
        state.delta[r] = 1
    return state


def run_node(r: int, Z, hp: Hyperparams, spec: PottsSpec, cfg: McmcConfig, seed=None,
             init_state: NodeState | None = None) -> NodeRunResult:
    """Run one node's chain and keep every ``thin``-th draw after ``burn_in``."""
    t0 = time.perf_counter()
    Z = check_data(Z, spec)
    if cfg.sampler == "pg" and not spec.is_ising:
        raise EngineError("sampler 'pg' requires m = 2 with the ising-identity functions")
    rng = node_rng(cfg.master_seed, r) if seed is None else np.random.default_rng(seed)
    design = NodeDesign(r, Z, spec)
    free = np.ones(spec.p, dtype=bool)
    constant = Z.shape[0] > 0 and np.all(Z[:, r] == Z[0, r])
    if constant:
        warnings.warn(f"node {r} has a constant data column; off-diagonal terms pinned to zero",
                      RuntimeWarning, stacklevel=2)
        free[:] = False
        free[r] = True
    kernel = _kernel(r, Z, spec, hp, cfg, free, design)
    state = initial_state(r, Z, spec, hp, cfg, kernel.free, design, init_state)
    kernel.check_state(state)
    S = cfg.n_retained
    theta_out = np.empty((S, spec.p))
    delta_out = np.empty((S, spec.p), dtype=np.int8)
    diag = KernelDiagnostics()
    k = 0
    for t in range(1, cfg.iterations + 1):
        _, d = kernel.iterate(state, rng)
        diag += d
        if t > cfg.burn_in and (t - cfg.burn_in) % cfg.thin == 0:
            theta_out[k] = state.theta
            delta_out[k] = state.delta
            k += 1
    assert k == S
    return NodeRunResult(r, theta_out, delta_out, diag, time.perf_counter() - t0, bool(constant))


def _node_task(args):
    r, Z, hp, spec, cfg, init = args
    try:
        return run_node(r, Z, hp, spec, cfg, init_state=init)
    except Exception as exc:  # re-raised with node provenance
        raise NodeRunError(r, exc) from exc


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    return max(1, int(workers))


def run_all(Z, hp: Hyperparams, spec: PottsSpec, cfg: McmcConfig, workers: int | None = None,
            progress=None, init_states=None) -> FitResult:
    """Run every node's chain; ``workers > 1`` uses a process pool.

    ``progress(event, node, info)`` is called with ``"finished"`` events
    carrying the node's acceptance rate and wall time.
    """
    Z = check_data(Z, spec)
    workers = resolve_workers(workers)
    p = spec.p
    inits = init_states if init_states is not None else [None] * p
    tasks = [(r, Z, hp, spec, cfg, inits[r]) for r in range(p)]
    results = [None] * p

    def _done(res: NodeRunResult):
        results[res.node] = res
        log.debug("node %d finished in %.2fs", res.node, res.wall_time)
        if progress is not None:
            progress("finished", res.node, {
                "acceptance_rate": res.diagnostics.acceptance_rate,
                "wall_time": res.wall_time,
            })

    if workers == 1 or p == 1:
        for task in tasks:
            if progress is not None:
                progress("started", task[0], {})
            _done(_node_task(task))
    else:
        with ProcessPoolExecutor(max_workers=min(workers, p)) as pool:
            for res in pool.map(_node_task, tasks):
                _done(res)
    return FitResult(results, cfg, hp, spec)
