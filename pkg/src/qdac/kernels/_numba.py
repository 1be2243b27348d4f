"""Numba loop versions of the kernels in ``_numpy.py``."""

import numpy as np
from numba import njit


@njit(cache=True)
def point_step(state, action, dt, a_max, v_max, drag, cost, wall_x, gap_lo, gap_hi):
    n = state.shape[0]
    out = np.empty_like(state)
    reward = np.empty(n)
    feat = np.empty((n, 2))
    for i in range(n):
        x, y, vx, vy = state[i, 0], state[i, 1], state[i, 2], state[i, 3]
        ax, ay = action[i, 0], action[i, 1]
        vx_new = min(max(vx + dt * (a_max * ax - drag * vx), -v_max), v_max)
        vy_new = min(max(vy + dt * (a_max * ay - drag * vy), -v_max), v_max)
        x_new = x + dt * vx_new
        y_new = y + dt * vy_new
        crossing = (x < wall_x and x_new >= wall_x) or (x > wall_x and x_new <= wall_x)
        if crossing and (y_new <= gap_lo or y_new >= gap_hi):
            x_new = x
            vx_new = 0.0
        reward[i] = vx_new - cost * (ax * ax + ay * ay)
        out[i, 0] = x_new
        out[i, 1] = y_new
        out[i, 2] = vx_new
        out[i, 3] = vy_new
        feat[i, 0] = vx_new
        feat[i, 1] = vy_new
    return out, reward, feat


@njit(cache=True)
def hopper_step(state, action, dt, gravity, jump, a_fwd, drag, cost):
    n = state.shape[0]
    out = np.empty_like(state)
    reward = np.empty(n)
    feat = np.empty((n, 1))
    for i in range(n):
        x, h, vx, vh, stance = state[i, 0], state[i, 1], state[i, 2], state[i, 3], state[i, 4]
        u_up, u_fwd = action[i, 0], action[i, 1]
        c = 1.0 if h <= 0.0 else 0.0
        vx_new = vx + dt * (a_fwd * u_fwd * c - drag * vx)
        if c == 1.0:
            vh = jump * 0.5 * (u_up + 1.0)
        vh_new = vh - dt * gravity
        h_new = h + dt * vh_new
        if h_new <= 0.0:
            h_new = 0.0
            vh_new = 0.0
            stance = stance + 1.0
        else:
            stance = 0.0
        reward[i] = vx_new - cost * (u_up * u_up + u_fwd * u_fwd)
        out[i, 0] = x + dt * vx_new
        out[i, 1] = h_new
        out[i, 2] = vx_new
        out[i, 3] = vh_new
        out[i, 4] = stance
        feat[i, 0] = c
    return out, reward, feat


@njit(cache=True)
def power_iteration(m, rho, tol, max_iter):
    n = rho.shape[0]
    rho = rho.copy()
    nxt = np.empty(n)
    for it in range(1, max_iter + 1):
        for j in range(n):
            acc = 0.0
            for i in range(n):
                acc += rho[i] * m[i, j]
            nxt[j] = acc
        resid = 0.0
        for j in range(n):
            resid = max(resid, abs(nxt[j] - rho[j]))
        if resid < tol:
            return nxt / nxt.sum(), it, True
        total = 0.0
        for j in range(n):
            rho[j] = 0.5 * nxt[j] + 0.5 * rho[j]
            total += rho[j]
        for j in range(n):
            rho[j] /= total
    return rho, max_iter, False


@njit(cache=True)
def _draw(cdf, u):
    k = 0
    n = cdf.shape[0]
    while k < n - 1 and cdf[k] <= u:
        k += 1
    return k


@njit(cache=True)
def discounted_rollouts(p_cdf, pi_cdf, phi, gamma, s0, a0, uniforms):
    n, horizon, _ = uniforms.shape
    d = phi.shape[2]
    total = np.zeros((n, d))
    for i in range(n):
        s = s0[i]
        disc = 1.0
        for t in range(horizon):
            a = _draw(pi_cdf[s], uniforms[i, t, 0])
            if t == 0 and a0[i] >= 0:
                a = a0[i]
            for k in range(d):
                total[i, k] += disc * phi[s, a, k]
            s = _draw(p_cdf[s, a], uniforms[i, t, 1])
            disc *= gamma
    return total


@njit(cache=True)
def chain_batch_means(p_cdf, pi_cdf, phi, s0, uniforms, batch):
    steps = uniforms.shape[0]
    n_batches = steps // batch
    d = phi.shape[2]
    out = np.zeros((n_batches, d))
    s = s0
    for t in range(n_batches * batch):
        a = _draw(pi_cdf[s], uniforms[t, 0])
        for k in range(d):
            out[t // batch, k] += phi[s, a, k]
        s = _draw(p_cdf[s, a], uniforms[t, 1])
    return out / batch
