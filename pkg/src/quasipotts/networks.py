"""Built-in generating matrices for synthetic experiments."""
import numpy as np

from .model import ModelError


def _assemble(p, edges, diag, offdiag):
    theta = np.zeros((p, p))
    np.fill_diagonal(theta, diag)
    for i, j in edges:
        theta[i, j] = theta[j, i] = offdiag
    return theta


def random_edges(p: int, n_edges: int, diag: float = -2.0, offdiag: float = 4.0, seed=None,
                 max_degree: int | None = None, max_tries: int = 10_000):
    """Symmetric matrix with ``n_edges`` off-diagonal pairs chosen uniformly.

    ``max_degree`` rejects edge sets in which some node has more neighbours;
    strong positive couplings on high-degree nodes freeze those nodes.
    """
    total = p * (p - 1) // 2
    if not 0 <= n_edges <= total:
        raise ModelError(f"n_edges must be in 0..{total}")
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(p, k=1)
    for _ in range(max_tries):
        pick = np.sort(rng.choice(total, size=n_edges, replace=False))
        rows, cols = iu[0][pick], iu[1][pick]
        if max_degree is None or np.bincount(np.r_[rows, cols], minlength=p).max() <= max_degree:
            return _assemble(p, zip(rows, cols), diag, offdiag)
    raise ModelError(f"no edge set with max degree {max_degree} found")


def diagonal_blocks(p: int, n_edges: int, block_size: int = 2, diag: float = -2.0,
                    offdiag: float = 4.0):
    """Block-diagonal topology: consecutive blocks filled with edges in order.

    Blocks of ``block_size`` consecutive nodes are filled with all their
    within-block edges until ``n_edges`` edges are placed.
    """
    if block_size < 2:
        raise ModelError("block_size must be >= 2")
    edges = []
    for start in range(0, p - 1, block_size):
        members = range(start, min(start + block_size, p))
        for i in members:
            for j in members:
                if i < j and len(edges) < n_edges:
                    edges.append((i, j))
    if len(edges) < n_edges:
        raise ModelError(f"blocks of size {block_size} hold at most {len(edges)} edges for p={p}")
    return _assemble(p, edges, diag, offdiag)


def support(theta, tol: float = 0.0):
    """Binary selection matrix of nonzero entries."""
    return (np.abs(np.asarray(theta)) > tol).astype(np.int8)
