"""
Compiled inner loops: rate-table inversion, the collision displacement, the
azimuth rotation of the coupling, and the candidate screening loops.

Candidate batches are drawn in Python and handed to the loops as arrays, so
the random stream is the same with or without numba. Without numba the
functions run as plain Python.
"""

import math

import numpy as np

try:
    import numba as nb
    HAVE_NUMBA = True
except Exception:
    HAVE_NUMBA = False

HALF_PI = 0.5 * math.pi
# below this |Y_perp| / |Y| the pair (X, Y) is treated as colinear
COLINEAR_TOL = 1e-12
# relative slack on the per-jump bound for floating drift
PER_JUMP_SLACK = 1e-10
# full recomputation cadence for incrementally updated moment sums
RECOMPUTE_EVERY = 2 ** 16


def _build_jit(use_jit=True):
    if use_jit and HAVE_NUMBA:
        return nb.njit(cache=True, nogil=True)

    def passthrough(func):
        return func
    return passthrough


njit = _build_jit()


# ---------------------------------------------------------------- rate table

@njit
def _segment(xs, x):
    lo, hi = 0, xs.shape[0] - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if xs[mid] <= x:
            lo = mid
        else:
            hi = mid
    return lo


@njit
def hermite_value(xs, ys, ms, x):
    k = _segment(xs, x)
    h = xs[k + 1] - xs[k]
    t = (x - xs[k]) / h
    r = 1.0 - t
    return ((1.0 + 2.0 * t) * r * r * ys[k] + t * r * r * h * ms[k]
            + t * t * (3.0 - 2.0 * t) * ys[k + 1] + t * t * (t - 1.0) * h * ms[k + 1])


@njit
def hermite_slope(xs, ys, ms, x):
    k = _segment(xs, x)
    h = xs[k + 1] - xs[k]
    t = (x - xs[k]) / h
    return ((6.0 * t * t - 6.0 * t) * (ys[k] - ys[k + 1]) / h
            + (3.0 * t * t - 4.0 * t + 1.0) * ms[k] + (3.0 * t * t - 2.0 * t) * ms[k + 1])


@njit
def series_rate(theta, params):
    """H below the smallest knot; params = (H_max, theta_small, nu, c0, c2, s_lo, s_hi)."""
    H_max, ts, nu, c0, c2 = params[0], params[1], params[2], params[3], params[4]
    return H_max + c0 * ((theta ** -nu - ts ** -nu) / nu
                         + c2 * (ts ** (2.0 - nu) - theta ** (2.0 - nu)) / (2.0 - nu))


@njit
def invert_series(z, params):
    H_max, ts, nu, c0, c2 = params[0], params[1], params[2], params[3], params[4]
    theta = (ts ** -nu + nu * (z - H_max) / c0) ** (-1.0 / nu)
    for _ in range(8):
        residual = series_rate(theta, params) - z
        step = residual / (-c0 * theta ** (-1.0 - nu) * (1.0 + c2 * theta * theta))
        theta = min(max(theta - step, 0.5 * theta), ts)
        if abs(step) <= 1e-15 * theta:
            break
    return theta


@njit
def invert_rate(z, tab):
    """
    G(z) for z > 0. ``tab`` holds the forward spline (log-angle, H, slope),
    the inverse spline (H, log-angle, 1/slope) and the scalar parameters.
    """
    params = tab[6]
    if z > params[0]:
        return invert_series(z, params)
    s_lo, s_hi = params[5], params[6]
    s = min(max(hermite_value(tab[3], tab[4], tab[5], z), s_lo), s_hi)
    for _ in range(3):
        s = s - (hermite_value(tab[0], tab[1], tab[2], s) - z) / hermite_slope(tab[0], tab[1], tab[2], s)
        s = min(max(s, s_lo), s_hi)
    return min(math.exp(s), HALF_PI)


@njit
def invert_many(zs, tab):
    out = np.empty(zs.shape[0])
    for k in range(zs.shape[0]):
        out[k] = invert_rate(zs[k], tab)
    return out


@njit
def rate_many(thetas, tab):
    out = np.empty(thetas.shape[0])
    params = tab[6]
    for k in range(thetas.shape[0]):
        if thetas[k] < params[1]:
            out[k] = series_rate(thetas[k], params)
        else:
            out[k] = hermite_value(tab[0], tab[1], tab[2], math.log(thetas[k]))
    return out


# ------------------------------------------------------------------ geometry

@njit
def _householder(v):
    """(sign, norm, scale, w0, ww) of the frame of v; w = (w0, scale v_1, ..., scale v_{d-1})."""
    d = v.shape[0]
    sq = 0.0
    for c in range(d):
        sq += v[c] * v[c]
    norm = math.sqrt(sq)
    first = 0
    while v[first] == 0.0:
        first += 1
    sign = 1.0 if v[first] > 0.0 else -1.0
    scale = sign / norm
    tail = 0.0
    for c in range(1, d):
        ec = scale * v[c]
        tail += ec * ec
    w0 = -tail / (1.0 + scale * v[0])
    return sign, norm, scale, w0, w0 * w0 + tail


@njit
def tangent_into(v, phi, out):
    """out = Gamma(v, phi) for v != 0."""
    d = v.shape[0]
    sign, norm, scale, w0, ww = _householder(v)
    dot = 0.0
    for c in range(1, d):
        dot += scale * v[c] * phi[c - 1]
    coef = 2.0 * dot / ww if ww > 0.0 else 0.0
    lead = sign * norm
    out[0] = lead * (-coef * w0)
    for c in range(1, d):
        out[c] = lead * (phi[c - 1] - coef * scale * v[c])


@njit
def frame_coordinates_into(v, h, out):
    """out = coordinates of h in the unit frame iota(v)/|v|."""
    d = v.shape[0]
    sign, norm, scale, w0, ww = _householder(v)
    dot = w0 * h[0]
    for c in range(1, d):
        dot += scale * v[c] * h[c]
    coef = 2.0 * dot / ww if ww > 0.0 else 0.0
    for c in range(1, d):
        out[c - 1] = sign * (h[c] - coef * scale * v[c])


@njit
def displacement_into(u, theta, phi, out):
    """out = -(1 - cos theta)/2 u + sin(theta)/2 Gamma(u, phi) for u != 0."""
    tangent_into(u, phi, out)
    one_minus_cos = 2.0 * math.sin(0.5 * theta) ** 2
    half_sin = 0.5 * math.sin(theta)
    for c in range(u.shape[0]):
        out[c] = -0.5 * one_minus_cos * u[c] + half_sin * out[c]


@njit
def rotate_azimuth_into(X, Y, phi, out):
    """
    out = R(X, Y) phi for nonzero X, Y, without forming R.

    With g = iota(X) phi / |X| and the plane rotations j_X, j_Y of X and Y,
    R phi is the iota(Y) coordinate vector of g + (j_X . g)(j_Y - j_X).
    """
    d = X.shape[0]
    nx = 0.0
    ny = 0.0
    for c in range(d):
        nx += X[c] * X[c]
        ny += Y[c] * Y[c]
    nx = math.sqrt(nx)
    ny = math.sqrt(ny)
    g = np.empty(d)
    tangent_into(X, phi, g)
    y_par = 0.0
    for c in range(d):
        g[c] /= nx
        y_par += Y[c] * X[c] / nx
    perp = np.empty(d)
    perp_sq = 0.0
    for c in range(d):
        perp[c] = Y[c] - y_par * X[c] / nx
        perp_sq += perp[c] * perp[c]
    perp_norm = math.sqrt(perp_sq)
    h = np.empty(d)
    if perp_norm < COLINEAR_TOL * ny:
        if y_par >= 0.0:
            for c in range(d):
                h[c] = g[c]
        else:
            axis = np.zeros(d - 1)
            axis[0] = 1.0
            first = np.empty(d)
            tangent_into(X, axis, first)
            for c in range(d):
                h[c] = g[c] - 2.0 * phi[0] * first[c] / nx
    else:
        ye = 0.0
        yf = 0.0
        fg = 0.0
        for c in range(d):
            e = X[c] / nx
            f = perp[c] / perp_norm
            ye += Y[c] / ny * e
            yf += Y[c] / ny * f
            fg += f * g[c]
        for c in range(d):
            e = X[c] / nx
            f = perp[c] / perp_norm
            h[c] = g[c] + fg * (ye * f - yf * e - f)
    frame_coordinates_into(Y, h, out)


# ------------------------------------------------------------------- moments

@njit
def moment_sum(V, h):
    total = 0.0
    for r in range(V.shape[0]):
        sq = 0.0
        for c in range(V.shape[1]):
            sq += V[r, c] * V[r, c]
        total += (1.0 + sq) ** h
    return total


@njit
def track_jump(V, i, j, old_sq_i, old_sq_j, orders, sums, max_ratio, peak, violations, updates,
               jump_lambda, jump_ratio, row):
    """
    Update the moment sums after particles i and j moved; old_sq_* are
    1 + |v|^2 before the jump. Writes Lambda_k and the ratio into row ``row``
    of the jump buffers when row >= 0.
    """
    n, d = V.shape
    updates[0] += 1
    full = updates[0] % RECOMPUTE_EVERY == 0
    new_sq_i = 1.0
    new_sq_j = 1.0
    for c in range(d):
        new_sq_i += V[i, c] * V[i, c]
        new_sq_j += V[j, c] * V[j, c]
    for q in range(orders.shape[0]):
        h = 0.5 * orders[q]
        before = sums[q]
        if full:
            after = moment_sum(V, h)
        else:
            after = before - old_sq_i ** h - old_sq_j ** h + new_sq_i ** h + new_sq_j ** h
        sums[q] = after
        ratio = after / before
        if ratio > max_ratio[q]:
            max_ratio[q] = ratio
        if ratio > 2.0 ** (h + 1.0) * (1.0 + PER_JUMP_SLACK):
            violations[q] += 1
        value = after / n
        if value > peak[q]:
            peak[q] = value
        if row >= 0:
            jump_lambda[row, q] = value
            jump_ratio[row, q] = ratio


# ------------------------------------------------------------------- screens

@njit
def screen_single(V, clock, t_stop, start, gaps, first, second, zs, phis, K, gamma, tab, counters,
                  log_mode, log_k, log_t, log_theta, log_accepted,
                  orders, sums, max_ratio, peak, violations, updates, jump_lambda, jump_ratio):
    """
    Screen candidates ``start``.. of one batch for the cutoff-K process.

    Stops at the end of the batch or before the first candidate later than
    ``t_stop``; returns the batch position reached and leaves the time of the
    last screened candidate in clock[0]. counters = (candidates, accepted,
    logged). log_mode 1 logs accepted candidates, 2 logs all of them.
    """
    n, d = V.shape
    u = np.empty(d)
    a = np.empty(d)
    t = clock[0]
    k = start
    tracking = orders.shape[0] > 0
    while k < gaps.shape[0]:
        t_next = t + gaps[k]
        if t_next > t_stop:
            break
        t = t_next
        i = first[k]
        j = second[k]
        z = zs[k]
        counters[0] += 1
        xx = 0.0
        for c in range(d):
            u[c] = V[i, c] - V[j, c]
            xx += u[c] * u[c]
        x = math.sqrt(xx)
        if x == 0.0 or z > K * x ** gamma:
            if log_mode == 2:
                row = counters[2]
                log_k[row] = k
                log_t[row] = t
                log_theta[row] = np.nan
                log_accepted[row] = False
                counters[2] += 1
            k += 1
            continue
        theta = invert_rate(z / x ** gamma, tab)
        displacement_into(u, theta, phis[k], a)
        old_sq_i = 1.0
        old_sq_j = 1.0
        for c in range(d):
            old_sq_i += V[i, c] * V[i, c]
            old_sq_j += V[j, c] * V[j, c]
        for c in range(d):
            V[i, c] += a[c]
            V[j, c] -= a[c]
        counters[1] += 1
        row = -1
        if log_mode >= 1:
            row = counters[2]
            log_k[row] = k
            log_t[row] = t
            log_theta[row] = theta
            log_accepted[row] = True
            counters[2] += 1
        if tracking:
            track_jump(V, i, j, old_sq_i, old_sq_j, orders, sums, max_ratio, peak, violations, updates,
                       jump_lambda, jump_ratio, row)
        k += 1
    clock[0] = t
    return k


@njit
def screen_coupled(V, W, clock, t_stop, start, gaps, first, second, zs, phis, K_prime, levels, gamma, tab,
                   counters, coarse_counts):
    """
    Screen candidates for one fine process V (cutoff K_prime) and coarse
    processes W[m] (cutoff levels[m]) on the same stream.

    A coarse process fires on (z, R(u, w) phi) when z <= K |w|^gamma, with
    u, w the pre-jump differences. counters = (candidates, fine accepted);
    coarse_counts[0, m] counts coarse jumps, coarse_counts[1, m] joint ones.
    """
    n, d = V.shape
    u = np.empty(d)
    w = np.empty(d)
    a = np.empty(d)
    b = np.empty(d)
    turned = np.empty(d - 1)
    t = clock[0]
    k = start
    while k < gaps.shape[0]:
        t_next = t + gaps[k]
        if t_next > t_stop:
            break
        t = t_next
        i = first[k]
        j = second[k]
        z = zs[k]
        phi = phis[k]
        counters[0] += 1
        xx = 0.0
        for c in range(d):
            u[c] = V[i, c] - V[j, c]
            xx += u[c] * u[c]
        x = math.sqrt(xx)
        fine = x > 0.0 and z <= K_prime * x ** gamma
        if fine:
            displacement_into(u, invert_rate(z / x ** gamma, tab), phi, a)
        for m in range(levels.shape[0]):
            yy = 0.0
            same = True
            for c in range(d):
                w[c] = W[m, i, c] - W[m, j, c]
                yy += w[c] * w[c]
                if w[c] != u[c]:
                    same = False
            y = math.sqrt(yy)
            if not (y > 0.0 and z <= levels[m] * y ** gamma):
                continue
            if x > 0.0 and not same:
                rotate_azimuth_into(u, w, phi, turned)
            else:
                for c in range(d - 1):
                    turned[c] = phi[c]
            displacement_into(w, invert_rate(z / y ** gamma, tab), turned, b)
            for c in range(d):
                W[m, i, c] += b[c]
                W[m, j, c] -= b[c]
            coarse_counts[0, m] += 1
            if fine:
                coarse_counts[1, m] += 1
        if fine:
            for c in range(d):
                V[i, c] += a[c]
                V[j, c] -= a[c]
            counters[1] += 1
        k += 1
    clock[0] = t
    return k
