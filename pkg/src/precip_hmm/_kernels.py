"""Compiled inner loops for transition assembly and the forward pass."""

import math

import numpy as np
from numba import njit

# emission law used by each of the five states
_EMIT = np.array([0, 0, 0, 1, 2])


@njit(cache=True)
def assemble_transitions(probs):
    """``(10, T, S)`` variable probabilities -> ``(T, S, 5, 5)`` matrices.

    Variable order: pD1 pD2 pD3 pDW1 pW1 pW2 pW12 pW21 pWD1 pWD2.
    """
    T, S = probs.shape[1], probs.shape[2]
    P = np.zeros((T, S, 5, 5))
    for t in range(T):
        for s in range(S):
            pdw1 = probs[3, t, s]
            for i in range(3):
                pd = probs[i, t, s]
                P[t, s, i, i] = pd
                P[t, s, i, 3] = (1.0 - pd) * pdw1
                P[t, s, i, 4] = (1.0 - pd) * (1.0 - pdw1)
            pwd1 = probs[8, t, s]
            pwd2 = probs[9, t, s]
            for row in range(2):
                stay = probs[4 + row, t, s]
                cross = probs[6 + row, t, s]
                r = (1.0 - stay) * cross
                a = (1.0 - stay) * (1.0 - cross)
                u1 = a * pwd1
                b = a * (1.0 - pwd1)
                u2 = b * pwd2
                rest = b * (1.0 - pwd2)
                k = 3 + row
                P[t, s, k, 0] = u1
                P[t, s, k, 1] = u2
                P[t, s, k, 2] = rest
                P[t, s, k, k] = stay
                P[t, s, k, 7 - k] = r
    return P


@njit(cache=True)
def forward_year_logliks(P, logem, init, day_count):
    """Per-year log-likelihood by the scaled forward recursion.

    ``logem`` is ``(3, T, S)`` emission log-probabilities per emission law,
    zero on missing days. Each step is shifted by its largest log term and
    renormalized, so the result is the log-sum-exp over state paths.
    """
    T = P.shape[0]
    out = np.empty(T)
    alpha = np.empty(5)
    new = np.empty(5)
    w = np.empty(3)
    for t in range(T):
        n = day_count[t]
        ll = 0.0
        for s in range(n):
            m = max(logem[0, t, s], max(logem[1, t, s], logem[2, t, s]))
            if m == -np.inf:
                ll = -np.inf
                break
            for e in range(3):
                w[e] = math.exp(logem[e, t, s] - m)
            if s == 0:
                for j in range(5):
                    new[j] = init[j] * w[_EMIT[j]]
            else:
                for j in range(5):
                    acc = 0.0
                    for i in range(5):
                        acc += alpha[i] * P[t, s, i, j]
                    new[j] = acc * w[_EMIT[j]]
            c = 0.0
            for j in range(5):
                c += new[j]
            if c <= 0.0:
                ll = -np.inf
                break
            if not (m == 0.0 and w[0] == 1.0 and w[1] == 1.0 and w[2] == 1.0):
                # a missing day predicts with total mass one and adds nothing
                ll += math.log(c) + m
            for j in range(5):
                alpha[j] = new[j] / c
        out[t] = ll
    return out
