"""Hot inner loops, each in a numba-compiled and a pure-numpy variant.

Public dispatchers (``pg_draw_many``, ``gibbs_sweeps``, ``pg_flip_sweep``)
pick the variant from :data:`quasipotts._accel.USE_NUMBA`.  The Gibbs and
flip sweeps consume pre-drawn uniforms, so both variants walk the same random
path.  The Polya-Gamma sampler draws from the Generator directly; its numpy
variant is vectorised and therefore consumes the stream in a different order.
"""
import math

import numpy as np
from scipy.special import ndtr

from ._accel import USE_NUMBA, njit

PG_TRUNC = 0.64
_PI = math.pi
_PI2_8 = _PI * _PI / 8.0
_LOG_HALF_PI = math.log(0.5 * _PI)


# ----------------------------------------------------------------------------
# Polya-Gamma PG(1, c): alternating-series accept/reject (Devroye / Windle)
# ----------------------------------------------------------------------------


@njit
def _pnorm(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


@njit
def _right_piece_prob(z, fz):
    # probability mass of the exponential tail piece of the envelope
    t = PG_TRUNC
    rt = math.sqrt(1.0 / t)
    b = rt * (t * z - 1.0)
    a = -rt * (t * z + 1.0)
    x0 = math.log(fz) + fz * t
    qdivp = 0.0
    pb = _pnorm(b)
    if pb > 0.0:
        qdivp += math.exp(x0 - z + math.log(pb))
    pa = _pnorm(a)
    if pa > 0.0:
        qdivp += math.exp(x0 + z + math.log(pa))
    qdivp *= 4.0 / _PI
    return 1.0 / (1.0 + qdivp)


@njit
def _series_coef(n, x):
    k = (n + 0.5) * _PI
    if x > PG_TRUNC:
        return k * math.exp(-0.5 * k * k * x)
    if x > 0.0:
        expnt = -1.5 * (_LOG_HALF_PI + math.log(x)) + math.log(k) - 2.0 * (n + 0.5) * (n + 0.5) / x
        return math.exp(expnt)
    return 0.0


@njit
def _truncated_invgauss(z, rng):
    # inverse Gaussian IG(1/z, 1) restricted to (0, PG_TRUNC)
    t = PG_TRUNC
    x = t + 1.0
    if z < 1.0 / t:
        alpha = 0.0
        while rng.random() > alpha:
            e1 = rng.standard_exponential()
            e2 = rng.standard_exponential()
            while e1 * e1 > 2.0 * e2 / t:
                e1 = rng.standard_exponential()
                e2 = rng.standard_exponential()
            x = 1.0 + e1 * t
            x = t / (x * x)
            alpha = math.exp(-0.5 * z * z * x)
    else:
        mu = 1.0 / z
        while x > t:
            y = rng.standard_normal()
            y *= y
            half_mu = 0.5 * mu
            mu_y = mu * y
            x = mu + half_mu * mu_y - half_mu * math.sqrt(4.0 * mu_y + mu_y * mu_y)
            if rng.random() > mu / (mu + x):
                x = mu * mu / x
    return x


@njit
def _pg1_scalar(c, rng):
    z = 0.5 * abs(c)
    fz = _PI2_8 + 0.5 * z * z
    p_right = _right_piece_prob(z, fz)
    while True:
        if rng.random() < p_right:
            x = PG_TRUNC + rng.standard_exponential() / fz
        else:
            x = _truncated_invgauss(z, rng)
        s = _series_coef(0, x)
        y = rng.random() * s
        n = 0
        while True:
            n += 1
            if n % 2 == 1:
                s -= _series_coef(n, x)
                if y <= s:
                    return 0.25 * x
            else:
                s += _series_coef(n, x)
                if y > s:
                    break


@njit
def pg_draw_many_numba(c, rng):
    out = np.empty(c.shape[0])
    for i in range(c.shape[0]):
        out[i] = _pg1_scalar(c[i], rng)
    return out


def _series_coef_vec(n, x):
    k = (n + 0.5) * _PI
    out = np.zeros_like(x)
    right = x > PG_TRUNC
    out[right] = k * np.exp(-0.5 * k * k * x[right])
    left = ~right & (x > 0.0)
    xl = x[left]
    out[left] = np.exp(-1.5 * (_LOG_HALF_PI + np.log(xl)) + math.log(k) - 2.0 * (n + 0.5) ** 2 / xl)
    return out


def _right_piece_prob_vec(z, fz):
    t = PG_TRUNC
    rt = math.sqrt(1.0 / t)
    x0 = np.log(fz) + fz * t
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        tb = np.exp(x0 - z + np.log(ndtr(rt * (t * z - 1.0))))
        ta = np.exp(x0 + z + np.log(ndtr(-rt * (t * z + 1.0))))
    qdivp = 4.0 / _PI * (np.nan_to_num(tb, nan=0.0) + np.nan_to_num(ta, nan=0.0))
    return 1.0 / (1.0 + qdivp)


def _truncated_invgauss_vec(z, rng):
    t = PG_TRUNC
    out = np.empty_like(z)
    small = np.flatnonzero(z < 1.0 / t)
    while small.size:
        e1 = rng.standard_exponential(small.size)
        e2 = rng.standard_exponential(small.size)
        ok = e1 * e1 <= 2.0 * e2 / t
        idx, e1 = small[ok], e1[ok]
        x = t / (1.0 + e1 * t) ** 2
        keep = rng.random(idx.size) <= np.exp(-0.5 * z[idx] ** 2 * x)
        out[idx[keep]] = x[keep]
        done = np.zeros(small.size, dtype=bool)
        done[np.flatnonzero(ok)[keep]] = True
        small = small[~done]
    large = np.flatnonzero(z >= 1.0 / t)
    while large.size:
        mu = 1.0 / z[large]
        y = rng.standard_normal(large.size) ** 2
        mu_y = mu * y
        x = mu + 0.5 * mu * mu_y - 0.5 * mu * np.sqrt(4.0 * mu_y + mu_y * mu_y)
        flip = rng.random(large.size) > mu / (mu + x)
        x[flip] = mu[flip] ** 2 / x[flip]
        ok = x <= t
        out[large[ok]] = x[ok]
        large = large[~ok]
    return out


def pg_draw_many_numpy(c, rng):
    z = 0.5 * np.abs(np.asarray(c, dtype=np.float64))
    fz = _PI2_8 + 0.5 * z * z
    p_right = _right_piece_prob_vec(z, fz)
    out = np.empty_like(z)
    pending = np.arange(z.size)
    while pending.size:
        zp, fp = z[pending], fz[pending]
        right = rng.random(pending.size) < p_right[pending]
        x = np.empty(pending.size)
        x[right] = PG_TRUNC + rng.standard_exponential(int(right.sum())) / fp[right]
        x[~right] = _truncated_invgauss_vec(zp[~right], rng)
        s = _series_coef_vec(0, x)
        y = rng.random(pending.size) * s
        open_ = np.ones(pending.size, dtype=bool)
        accepted = np.zeros(pending.size, dtype=bool)
        n = 0
        while open_.any():
            n += 1
            idx = np.flatnonzero(open_)
            if n % 2 == 1:
                s[idx] -= _series_coef_vec(n, x[idx])
                hit = idx[y[idx] <= s[idx]]
                accepted[hit] = True
                open_[hit] = False
            else:
                s[idx] += _series_coef_vec(n, x[idx])
                open_[idx[y[idx] > s[idx]]] = False
        out[pending[accepted]] = 0.25 * x[accepted]
        pending = pending[~accepted]
    return out


def pg_draw_many(c, rng):
    c = np.ascontiguousarray(c, dtype=np.float64).ravel()
    if USE_NUMBA:
        return pg_draw_many_numba(c, rng)
    return pg_draw_many_numpy(c, rng)


# ----------------------------------------------------------------------------
# Systematic-scan single-site Gibbs sweeps for data generation
# ----------------------------------------------------------------------------


@njit
def gibbs_sweeps_numba(state, theta, mean_field, coupling, uniforms, record, out, out_start):
    p = state.shape[0]
    m = mean_field.shape[0]
    eta = np.empty(m)
    row = out_start
    for t in range(uniforms.shape[0]):
        for r in range(p):
            top = -np.inf
            for s in range(m):
                acc = theta[r, r] * mean_field[s]
                for j in range(p):
                    if j != r:
                        acc += theta[r, j] * coupling[s, state[j]]
                eta[s] = acc
                if acc > top:
                    top = acc
            total = 0.0
            for s in range(m):
                eta[s] = math.exp(eta[s] - top)
                total += eta[s]
            target = uniforms[t, r] * total
            cum = 0.0
            pick = m - 1
            for s in range(m):
                cum += eta[s]
                if target < cum:
                    pick = s
                    break
            state[r] = pick
        if record[t]:
            out[row, :] = state
            row += 1
    return row


def gibbs_sweeps_numpy(state, theta, mean_field, coupling, uniforms, record, out, out_start):
    p = state.shape[0]
    row = out_start
    for t in range(uniforms.shape[0]):
        for r in range(p):
            eta = theta[r, r] * mean_field + coupling[:, state] @ theta[r] - coupling[:, state[r]] * theta[r, r]
            w = np.exp(eta - eta.max())
            cum = np.cumsum(w)
            pick = int(np.searchsorted(cum, uniforms[t, r] * cum[-1], side="right"))
            state[r] = min(pick, len(w) - 1)
        if record[t]:
            out[row, :] = state
            row += 1
    return row


def gibbs_sweeps(state, theta, mean_field, coupling, uniforms, record, out, out_start):
    fn = gibbs_sweeps_numba if USE_NUMBA else gibbs_sweeps_numpy
    return fn(state, theta, mean_field, coupling, uniforms, record, out, out_start)


# ----------------------------------------------------------------------------
# Selection sweep of the Polya-Gamma sampler
# ----------------------------------------------------------------------------


@njit
def pg_flip_sweep_numba(theta, delta, gram, xk, uniforms, log_odds, half_prec_gap, free, order):
    """Sweep j over ``order`` flipping delta[j] given the augmented Gram matrix.

    ``gram`` is X' Omega X, ``xk`` is X' (z_r - 1/2).  Returns the number of
    flips made.  ``delta`` (int8) is modified in place.
    """
    p = theta.shape[0]
    act = np.zeros(p)
    for k in range(p):
        if delta[k]:
            for i in range(p):
                act[i] += gram[i, k] * theta[k]
    flips = 0
    for idx in range(order.shape[0]):
        j = order[idx]
        if not free[j]:
            continue
        tj = theta[j]
        cross = act[j] - delta[j] * gram[j, j] * tj
        d = log_odds + half_prec_gap * tj * tj + tj * xk[j] - 0.5 * tj * tj * gram[j, j] - tj * cross
        if delta[j]:
            d = -d
        if d >= 0.0 or uniforms[j] < math.exp(d):
            sign = -1.0 if delta[j] else 1.0
            delta[j] = 1 - delta[j]
            for i in range(p):
                act[i] += sign * gram[i, j] * tj
            flips += 1
    return flips


def pg_flip_sweep_numpy(theta, delta, gram, xk, uniforms, log_odds, half_prec_gap, free, order):
    act = gram[:, delta.astype(bool)] @ theta[delta.astype(bool)]
    flips = 0
    for j in order[free[order]]:
        tj = theta[j]
        cross = act[j] - delta[j] * gram[j, j] * tj
        d = log_odds + half_prec_gap * tj * tj + tj * xk[j] - 0.5 * tj * tj * gram[j, j] - tj * cross
        if delta[j]:
            d = -d
        if d >= 0.0 or uniforms[j] < math.exp(d):
            sign = -1.0 if delta[j] else 1.0
            delta[j] = 1 - delta[j]
            act += sign * gram[:, j] * tj
            flips += 1
    return flips


def pg_flip_sweep(theta, delta, gram, xk, uniforms, log_odds, half_prec_gap, free, order=None):
    if order is None:
        order = np.arange(theta.shape[0])
    fn = pg_flip_sweep_numba if USE_NUMBA else pg_flip_sweep_numpy
    return fn(theta, delta, gram, xk, uniforms, log_odds, half_prec_gap, free,
              np.asarray(order, dtype=np.int64))
