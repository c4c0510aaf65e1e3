"""Independent brute-force oracles shared by the unit and acceptance tests.

Each one evaluates the defining formula (or an exhaustive enumeration of the
underlying process) directly, with no code shared with the implementations
they check.
"""
import numpy as np


def hma_bernoulli_enumeration(p, alpha_prev):
    """Exhaustive expectation over every Bernoulli attend/skip path.

    Starting from position m (with prior mass alpha_prev[m]) the scan draws
    z ~ Bernoulli(p[j]) at j = m, m+1, ...; the first z=1 attends. Enumerates
    all 2^(T-m) full assignments, crediting each one's first success; paths
    with no success drop their mass.
    """
    p = np.asarray(p, dtype=np.float64)
    T = p.size
    out = np.zeros(T)
    for m in range(T):
        prior = alpha_prev[m]
        if prior == 0.0:
            continue
        n = T - m
        for bits in range(2 ** n):
            prob = 1.0
            first = None
            for idx in range(n):
                z = (bits >> idx) & 1
                pj = p[m + idx]
                prob *= pj if z else (1.0 - pj)
                if z and first is None:
                    first = m + idx
            if first is not None:
                out[first] += prior * prob
    return out


def mocha_double_sum(alpha, U, w):
    """Literal double-sum of the chunkwise induced distribution: trigger k,
    soft window over (k-w+1..k], clipped at the sequence edges."""
    L, T = alpha.shape
    beta = np.zeros_like(alpha)
    for i in range(L):
        eu = np.exp(U[i])
        for j in range(T):
            total = 0.0
            for k in range(j, min(j + w, T)):
                lo = max(0, k - w + 1)
                total += alpha[i, k] * eu[j] / eu[lo:k + 1].sum()
            beta[i, j] = total
    return beta


def smocha_product_loop(P):
    out = np.zeros_like(P)
    for i in range(P.shape[0]):
        for j in range(P.shape[1]):
            prod = 1.0
            for l in range(j):
                prod *= 1.0 - P[i, l]
            out[i, j] = P[i, j] * prod
    return out


def dacs_stepwise_scan(P):
    """Row-by-row accumulation mirroring the unbounded inference scan."""
    out = np.zeros_like(P)
    for i in range(P.shape[0]):
        acc = 0.0
        for j in range(P.shape[1]):
            out[i, j] = P[i, j]
            acc += P[i, j]
            if acc > 1.0:
                break
    return out


def brute_force_edit_distance(ref, hyp):
    """Plain recursion, exponential but independent of the DP implementation."""
    if not ref:
        return len(hyp)
    if not hyp:
        return len(ref)
    sub = brute_force_edit_distance(ref[1:], hyp[1:]) + (ref[0] != hyp[0])
    dele = brute_force_edit_distance(ref[1:], hyp) + 1
    ins = brute_force_edit_distance(ref, hyp[1:]) + 1
    return min(sub, dele, ins)
