"""Compiled inner loops. Arrays follow the CSR layout of ``model.AgentModel``."""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def row_max(q, lo, hi):
    best = q[lo]
    for j in range(lo + 1, hi):
        if q[j] > best:
            best = q[j]
    return best


@njit(cache=True, nogil=True)
def row_argmax(q, lo, hi):
    a = lo
    best = q[lo]
    for j in range(lo + 1, hi):
        if q[j] > best:
            best = q[j]
            a = j
    return a


@njit(cache=True, nogil=True)
def next_index(cum_row, u):
    n = cum_row.shape[0]
    k = 0
    while k < n - 1 and cum_row[k] <= u:
        k += 1
    return k


@njit(cache=True, nogil=True)
def sample_path(cumulative, start, uniforms):
    out = np.empty(uniforms.shape[0] + 1, dtype=np.int64)
    out[0] = start
    cur = start
    for t in range(uniforms.shape[0]):
        cur = next_index(cumulative[cur], uniforms[t])
        out[t + 1] = cur
    return out


@njit(cache=True, nogil=True)
def train_chunk(
    ptr, reward, post, next_state, q, visits, ref,
    s, d, t0, total,
    demand_cum, price_idx, renew, u_explore, u_pick, u_demand,
    epsilon, c0, c1, power, alpha_const,
    stride, trace_iter, trace_f, trace_mean, k,
):
    """Run ``len(u_explore)`` RVI Q-learning steps; returns the carried loop state.

    ``price_idx`` has one more entry than the step count: entry t + 1 is the
    price seen after step t.
    """
    ref_lo = ptr[ref]
    ref_hi = ptr[ref + 1]
    n = u_explore.shape[0]
    for t in range(n):
        lo = ptr[s]
        hi = ptr[s + 1]
        if u_explore[t] < epsilon:
            m = hi - lo
            j = int(u_pick[t] * m)
            if j >= m:
                j = m - 1
            a = lo + j
        else:
            a = row_argmax(q, lo, hi)
        g = reward[a]
        d2 = next_index(demand_cum[d], u_demand[t])
        s2 = next_state[post[a], renew[t], d2, price_idx[t + 1]]
        target = g + row_max(q, ptr[s2], ptr[s2 + 1]) - row_max(q, ref_lo, ref_hi)
        if alpha_const > 0.0:
            alpha = alpha_const
        else:
            alpha = c0 / (c1 + visits[a]) ** power
        q[a] += alpha * (target - q[a])
        visits[a] += 1
        total += g
        it = t0 + t + 1
        if stride > 0 and it % stride == 0:
            trace_iter[k] = it
            trace_f[k] = row_max(q, ref_lo, ref_hi)
            trace_mean[k] = total / it
            k += 1
        s = s2
        d = d2
    return s, d, total, k


@njit(cache=True, nogil=True)
def rollout_chunk(
    ptr, reward, post, next_state, policy, s, d, total,
    demand_cum, price_idx, renew, u_demand,
):
    """Follow a fixed policy (global action index per state) without learning."""
    for t in range(u_demand.shape[0]):
        a = policy[s]
        total += reward[a]
        d2 = next_index(demand_cum[d], u_demand[t])
        s = next_state[post[a], renew[t], d2, price_idx[t + 1]]
        d = d2
    return s, d, total
