"""Vectorised NumPy implementations of the hot loops.

Each function mirrors the loop in ``_numba.py`` operation for operation, so
both backends produce bit-identical results on the same inputs.
"""

import numpy as np


def point_step(state, action, dt, a_max, v_max, drag, cost, wall_x, gap_lo, gap_hi):
    x, y, vx, vy = state[:, 0], state[:, 1], state[:, 2], state[:, 3]
    ax, ay = action[:, 0], action[:, 1]
    vx_new = np.minimum(np.maximum(vx + dt * (a_max * ax - drag * vx), -v_max), v_max)
    vy_new = np.minimum(np.maximum(vy + dt * (a_max * ay - drag * vy), -v_max), v_max)
    x_new = x + dt * vx_new
    y_new = y + dt * vy_new
    crossing = ((x < wall_x) & (x_new >= wall_x)) | ((x > wall_x) & (x_new <= wall_x))
    blocked = crossing & ((y_new <= gap_lo) | (y_new >= gap_hi))
    x_new = np.where(blocked, x, x_new)
    vx_new = np.where(blocked, 0.0, vx_new)
    reward = vx_new - cost * (ax * ax + ay * ay)
    out = np.empty_like(state)
    out[:, 0] = x_new
    out[:, 1] = y_new
    out[:, 2] = vx_new
    out[:, 3] = vy_new
    feat = np.empty((state.shape[0], 2))
    feat[:, 0] = vx_new
    feat[:, 1] = vy_new
    return out, reward, feat


def hopper_step(state, action, dt, gravity, jump, a_fwd, drag, cost):
    x, h, vx, vh, stance = state[:, 0], state[:, 1], state[:, 2], state[:, 3], state[:, 4]
    u_up, u_fwd = action[:, 0], action[:, 1]
    contact = h <= 0.0
    c = contact.astype(np.float64)
    vx_new = vx + dt * (a_fwd * u_fwd * c - drag * vx)
    vh = np.where(contact, jump * 0.5 * (u_up + 1.0), vh)
    vh_new = vh - dt * gravity
    h_new = h + dt * vh_new
    landed = h_new <= 0.0
    h_new = np.where(landed, 0.0, h_new)
    vh_new = np.where(landed, 0.0, vh_new)
    stance = np.where(landed, stance + 1.0, 0.0)
    x_new = x + dt * vx_new
    reward = vx_new - cost * (u_up * u_up + u_fwd * u_fwd)
    out = np.empty_like(state)
    out[:, 0] = x_new
    out[:, 1] = h_new
    out[:, 2] = vx_new
    out[:, 3] = vh_new
    out[:, 4] = stance
    return out, reward, c[:, None].copy()


def power_iteration(m, rho, tol, max_iter):
    """Damped power iteration rho <- (rho M + rho) / 2 until the residual
    max|rho M - rho| drops below ``tol``."""
    for it in range(1, max_iter + 1):
        nxt = rho @ m
        resid = np.max(np.abs(nxt - rho))
        if resid < tol:
            return nxt / nxt.sum(), it, True
        rho = 0.5 * nxt + 0.5 * rho
        rho = rho / rho.sum()
    return rho, max_iter, False


def _draw(cdf_rows, u):
    n = cdf_rows.shape[1]
    k = np.sum(cdf_rows <= u[:, None], axis=1)
    return np.minimum(k, n - 1)


def discounted_rollouts(p_cdf, pi_cdf, phi, gamma, s0, a0, uniforms):
    """Discounted feature sums of ``len(uniforms)`` truncated rollouts.

    ``uniforms[i, t]`` holds the (action, next-state) draws of rollout i at
    step t.  Rollout i starts in ``s0[i]`` with action ``a0[i]``; a negative
    ``a0`` means the first action is drawn from the policy too.
    """
    n, horizon, _ = uniforms.shape
    s = s0.copy()
    total = np.zeros((n, phi.shape[2]))
    disc = 1.0
    for t in range(horizon):
        a = _draw(pi_cdf[s], uniforms[:, t, 0])
        if t == 0:
            a = np.where(a0 >= 0, a0, a)
        total += disc * phi[s, a]
        s = _draw(p_cdf[s, a], uniforms[:, t, 1])
        disc *= gamma
    return total


def chain_batch_means(p_cdf, pi_cdf, phi, s0, uniforms, batch):
    """Run one long chain and return the mean feature of each block of
    ``batch`` consecutive steps."""
    steps = uniforms.shape[0]
    n_batches = steps // batch
    out = np.zeros((n_batches, phi.shape[2]))
    s = s0
    for t in range(n_batches * batch):
        a = min(int(np.sum(pi_cdf[s] <= uniforms[t, 0])), pi_cdf.shape[1] - 1)
        out[t // batch] += phi[s, a]
        s = min(int(np.sum(p_cdf[s, a] <= uniforms[t, 1])), p_cdf.shape[2] - 1)
    return out / batch
