"""Posterior summaries, recovery metrics, trait aggregation and Ward clustering."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SummaryError(ValueError):
    pass


@dataclass
class PosteriorSummary:
    """Point estimates and intervals for a p x p parameter matrix.

    ``theta_hat[i, j]`` is node i's posterior mean of theta_ij; the other
    matrices are symmetric.  ``ci_lo_dir``/``ci_hi_dir`` hold the directional
    intervals from which the union intervals ``ci_lo``/``ci_hi`` are built.
    The diagonal of ``edge_prob`` is node i's own inclusion frequency of its
    diagonal term.
    """

    theta_hat: np.ndarray
    theta_tilde: np.ndarray
    edge_prob: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    ci_lo_dir: np.ndarray
    ci_hi_dir: np.ndarray
    level: float


@dataclass
class Metrics:
    relative_error: float
    f1: float
    coverage: float
    inactive_zero_coverage: float = float("nan")
    inactive_mean_half_width: float = float("nan")
    diagonal_coverage: float = float("nan")


@dataclass
class ClusterTree:
    """Agglomerative merge list.

    ``merges[k] = (a, b, height, size)``; leaves are ``0..k-1`` and the cluster
    formed at step ``k`` gets id ``n_leaves + k`` (the scipy linkage layout).
    """

    merges: list
    labels: list

    def linkage_matrix(self) -> np.ndarray:
        return np.array([[a, b, h, s] for a, b, h, s in self.merges], dtype=np.float64).reshape(-1, 4)


def symmetrize(theta_hat):
    theta_hat = np.asarray(theta_hat, dtype=np.float64)
    return 0.5 * (theta_hat + theta_hat.T)


def summarize_samples(theta_samples, delta_samples, level: float = 0.95) -> PosteriorSummary:
    """Summaries from arrays shaped ``(p, S, p)`` (node, sample, coordinate)."""
    T = np.asarray(theta_samples, dtype=np.float64)
    D = np.asarray(delta_samples)
    if T.ndim != 3 or T.shape[0] != T.shape[2] or D.shape != T.shape:
        raise SummaryError("samples must be shaped (p, S, p) for theta and delta alike")
    if T.shape[1] < 2:
        raise SummaryError("need at least 2 retained samples per node")
    if not 0.0 < level < 1.0:
        raise SummaryError("level must lie in (0, 1)")
    theta_hat = T.mean(axis=1)
    incl = D.mean(axis=1)
    edge_prob = 0.5 * (incl + incl.T)
    np.fill_diagonal(edge_prob, np.diag(incl))
    lo_q, hi_q = (1.0 - level) / 2.0, (1.0 + level) / 2.0
    lo_dir = np.quantile(T, lo_q, axis=1, method="linear")
    hi_dir = np.quantile(T, hi_q, axis=1, method="linear")
    ci_lo = np.minimum(lo_dir, lo_dir.T)
    ci_hi = np.maximum(hi_dir, hi_dir.T)
    return PosteriorSummary(theta_hat, symmetrize(theta_hat), edge_prob, ci_lo, ci_hi,
                            lo_dir, hi_dir, level)


def summarize(fit, level: float = 0.95) -> PosteriorSummary:
    return summarize_samples(fit.theta_samples(), fit.delta_samples(), level)


# -- metrics ----------------------------------------------------------------


def relative_error(theta_est, theta_star, per_node: bool = False):
    """||est - truth||_2 / ||truth||_2.

    For matrices the ratio is taken row by row (node by node); the mean over
    nodes is returned, or the per-node vector when ``per_node`` is set.
    """
    est = np.asarray(theta_est, dtype=np.float64)
    star = np.asarray(theta_star, dtype=np.float64)
    if est.shape != star.shape:
        raise SummaryError("estimate and truth must have the same shape")
    if star.ndim == 1:
        denom = np.linalg.norm(star)
        if denom == 0:
            raise SummaryError("true parameter has zero norm")
        return float(np.linalg.norm(est - star) / denom)
    denom = np.linalg.norm(star, axis=-1)
    if np.any(denom == 0):
        raise SummaryError("a node's true parameter has zero norm")
    ratios = np.linalg.norm(est - star, axis=-1) / denom
    return ratios if per_node else float(ratios.mean())


def f1_score(delta_est, delta_star) -> float:
    """Harmonic mean of precision and recall over all entries given; 0 if both are 0."""
    est = np.asarray(delta_est).astype(bool)
    star = np.asarray(delta_star).astype(bool)
    if est.shape != star.shape:
        raise SummaryError("selection matrices must have the same shape")
    hits = np.count_nonzero(est & star)
    n_pred, n_true = np.count_nonzero(est), np.count_nonzero(star)
    precision = hits / n_pred if n_pred else 0.0
    recall = hits / n_true if n_true else 0.0
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def node_f1(delta_est, delta_star):
    """Row-wise F1 for ``(..., p)`` selection arrays against a ``(p,)`` truth."""
    est = np.asarray(delta_est).astype(bool)
    star = np.asarray(delta_star).astype(bool)
    hits = np.count_nonzero(est & star, axis=-1)
    n_pred = np.count_nonzero(est, axis=-1)
    n_true = np.count_nonzero(star, axis=-1)
    precision = np.divide(hits, n_pred, out=np.zeros(hits.shape), where=n_pred > 0)
    recall = np.divide(hits, n_true, out=np.zeros(hits.shape), where=n_true > 0)
    s = precision + recall
    return np.divide(2.0 * precision * recall, s, out=np.zeros(hits.shape), where=s > 0)


def trace_metrics(theta_samples, delta_samples, theta_star, sparsified: bool = False,
                  include_diagonal: bool = False):
    """Node-averaged relative error and F1 at every retained iteration.

    Inputs are ``(p, S, p)`` sample arrays.  F1 per node scores the
    off-diagonal selections (edges) unless ``include_diagonal`` is set; the
    relative error always covers the whole row.  With ``sparsified`` the
    relative error uses theta * delta instead of theta.
    """
    T = np.asarray(theta_samples, dtype=np.float64)
    D = np.asarray(delta_samples)
    star = np.asarray(theta_star, dtype=np.float64)
    if sparsified:
        T = T * D
    denom = np.linalg.norm(star, axis=1)
    if np.any(denom == 0):
        raise SummaryError("a node's true parameter has zero norm")
    err = np.linalg.norm(T - star[:, None, :], axis=2) / denom[:, None]
    p = star.shape[0]
    keep = [np.arange(p) if include_diagonal else np.delete(np.arange(p), r) for r in range(p)]
    f1 = np.stack([node_f1(D[r][:, keep[r]], star[r, keep[r]] != 0) for r in range(p)])
    return err.mean(axis=0), f1.mean(axis=0)


def coverage_report(summary: PosteriorSummary, theta_star) -> Metrics:
    """Interval coverage over the upper triangle, plus headline estimate metrics.

    ``coverage`` is the share of truly nonzero off-diagonal parameters inside
    their union interval; ``inactive_zero_coverage`` is the share of zero
    parameters whose interval contains 0.
    """
    star = np.asarray(theta_star, dtype=np.float64)
    if star.shape != summary.theta_hat.shape:
        raise SummaryError("truth and summary dimensions differ")
    iu = np.triu_indices(star.shape[0], k=1)
    truth = star[iu]
    lo, hi = summary.ci_lo[iu], summary.ci_hi[iu]
    inside = (lo <= truth) & (truth <= hi)
    act = truth != 0
    cov = float(inside[act].mean()) if act.any() else float("nan")
    zero_in = (lo[~act] <= 0) & (0 <= hi[~act])
    zcov = float(zero_in.mean()) if (~act).any() else float("nan")
    hw = float((0.5 * (hi[~act] - lo[~act])).mean()) if (~act).any() else float("nan")
    d = np.diag(star)
    dcov = float(((np.diag(summary.ci_lo) <= d) & (d <= np.diag(summary.ci_hi))).mean())
    offdiag = ~np.eye(star.shape[0], dtype=bool)
    f1 = f1_score((summary.edge_prob > 0.5)[offdiag], (star != 0)[offdiag])
    rel = relative_error(summary.theta_hat, star) if np.all(np.linalg.norm(star, axis=1) > 0) else float("nan")
    return Metrics(rel, f1, cov, zcov, hw, dcov)


# -- trait aggregation and clustering ---------------------------------------


def phi_matrix(edge_prob, groups) -> np.ndarray:
    """Average edge probability within and between node groups.

    ``groups`` is a sequence of index collections partitioning ``0..p-1``.
    Between groups all |S_a||S_b| pairs count; within a group the unordered
    distinct pairs do.  A singleton group's own entry is NaN.
    """
    P = np.asarray(edge_prob, dtype=np.float64)
    p = P.shape[0]
    sets = [np.asarray(sorted(g), dtype=np.int64) for g in groups]
    if any(s.size == 0 for s in sets):
        raise SummaryError("groups must be non-empty")
    flat = np.concatenate(sets)
    if flat.size != p or not np.array_equal(np.sort(flat), np.arange(p)):
        raise SummaryError("groups must partition the node set")
    k = len(sets)
    phi = np.empty((k, k))
    for a in range(k):
        for b in range(a, k):
            block = P[np.ix_(sets[a], sets[b])]
            if a == b:
                na = sets[a].size
                pairs = na * (na - 1) // 2
                phi[a, a] = block[np.triu_indices(na, k=1)].sum() / pairs if pairs else np.nan
            else:
                phi[a, b] = phi[b, a] = block.mean()
    return phi


def pseudo_distance(phi) -> np.ndarray:
    """Elementwise 1/phi with zero diagonal; phi = 0 maps to 10x the largest finite distance."""
    phi = np.asarray(phi, dtype=np.float64)
    with np.errstate(divide="ignore"):
        d = np.where(phi > 0, 1.0 / np.where(phi > 0, phi, 1.0), np.inf)
    np.fill_diagonal(d, 0.0)
    finite = d[np.isfinite(d) & (d > 0)]
    sentinel = 10.0 * finite.max() if finite.size else 1.0
    d[~np.isfinite(d)] = sentinel
    return d


def ward_cluster(dissimilarity, labels=None) -> ClusterTree:
    """Ward agglomerative clustering (Lance-Williams on squared dissimilarities).

    Merge heights are on the original scale; ties go to the pair with the
    lowest (i, j) cluster ids.
    """
    D = np.asarray(dissimilarity, dtype=np.float64)
    k = D.shape[0]
    if D.ndim != 2 or D.shape[1] != k:
        raise SummaryError("dissimilarity must be square")
    if k < 2:
        raise SummaryError("need at least two leaves")
    if not np.allclose(D, D.T) or np.any(D < 0) or np.any(np.diag(D) != 0):
        raise SummaryError("dissimilarity must be symmetric, nonnegative, zero on the diagonal")
    d2 = {}
    for i in range(k):
        for j in range(i + 1, k):
            d2[(i, j)] = D[i, j] ** 2
    size = {i: 1 for i in range(k)}
    active = list(range(k))
    merges = []
    for step in range(k - 1):
        best = None
        for ai, a in enumerate(active):
            for b in active[ai + 1:]:
                v = d2[(a, b)]
                if best is None or v < best[0]:
                    best = (v, a, b)
        v, a, b = best
        new = k + step
        na, nb = size[a], size[b]
        for c in active:
            if c in (a, b):
                continue
            nc = size[c]
            dac = d2[(min(a, c), max(a, c))]
            dbc = d2[(min(b, c), max(b, c))]
            d2[(c, new)] = ((na + nc) * dac + (nb + nc) * dbc - nc * v) / (na + nb + nc)
        active = [c for c in active if c not in (a, b)] + [new]
        size[new] = na + nb
        merges.append((a, b, float(np.sqrt(max(v, 0.0))), na + nb))
    labels = list(labels) if labels is not None else [str(i) for i in range(k)]
    return ClusterTree(merges, labels)
