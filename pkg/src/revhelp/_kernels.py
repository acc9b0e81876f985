"""Compiled inner loops for the Gibbs sweeps.

All count tensors are mutated in place. Levels are 0-based; each review's
incoming transition is counted from its predecessor's level (level 0 for a
user's first review).
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def transition_prior(trans, src, dst, gamma, E):
    same = 1.0 if src == dst else 0.0
    row = 0
    for b in range(E):
        row += trans[src, b]
    return (trans[src, dst] + same + gamma) / (row + same + E * gamma)


@njit(cache=True)
def facet_sweep(tokens, offsets, levels, facets, counts, totals, theta, delta, uniforms):
    D = levels.shape[0]
    Z = theta.shape[1]
    W = counts.shape[2]
    wd = W * delta
    p = np.empty(Z)
    for d in range(D):
        e = levels[d]
        for j in range(offsets[d], offsets[d + 1]):
            w = tokens[j]
            k = facets[j]
            counts[e, k, w] -= 1
            totals[e, k] -= 1
            acc = 0.0
            for z in range(Z):
                acc += theta[e, z] * (counts[e, z, w] + delta) / (totals[e, z] + wd)
                p[z] = acc
            u = uniforms[j] * acc
            k = Z - 1
            for z in range(Z):
                if u < p[z]:
                    k = z
                    break
            facets[j] = k
            counts[e, k, w] += 1
            totals[e, k] += 1


@njit(cache=True)
def level_score(tokens, facets, start, stop, counts, totals, log_theta, delta, c):
    W = counts.shape[2]
    s = 0.0
    for j in range(start, stop):
        z = facets[j]
        s += log_theta[c, z] + math.log((counts[c, z, tokens[j]] + delta) / (totals[c, z] + W * delta))
    return s


@njit(cache=True)
def expertise_sweep(tokens, offsets, facets, levels, prev_doc, gamma, counts, totals, trans, log_theta, delta):
    D = levels.shape[0]
    E = trans.shape[0]
    old = levels.copy()
    changed = 0
    for d in range(D):
        p = prev_doc[d]
        e_old = levels[d]
        src_old = old[p] if p >= 0 else 0
        trans[src_old, e_old] -= 1
        start, stop = offsets[d], offsets[d + 1]
        for j in range(start, stop):
            counts[e_old, facets[j], tokens[j]] -= 1
            totals[e_old, facets[j]] -= 1

        src = levels[p] if p >= 0 else 0
        best = src
        if src + 1 < E:
            stay = math.log(transition_prior(trans, src, src, gamma[d], E)) + level_score(
                tokens, facets, start, stop, counts, totals, log_theta, delta, src
            )
            up = math.log(transition_prior(trans, src, src + 1, gamma[d], E)) + level_score(
                tokens, facets, start, stop, counts, totals, log_theta, delta, src + 1
            )
            if up > stay:
                best = src + 1

        trans[src, best] += 1
        for j in range(start, stop):
            counts[best, facets[j], tokens[j]] += 1
            totals[best, facets[j]] += 1
        if best != e_old:
            changed += 1
        levels[d] = best
    return changed


@njit(cache=True)
def loglik_terms(tokens, offsets, facets, levels, prev_doc, gamma, counts, totals, trans, log_theta, delta):
    D = levels.shape[0]
    E = trans.shape[0]
    W = counts.shape[2]
    tok = 0.0
    tr = 0.0
    for d in range(D):
        e = levels[d]
        for j in range(offsets[d], offsets[d + 1]):
            z = facets[j]
            tok += log_theta[e, z] + math.log((counts[e, z, tokens[j]] + delta) / (totals[e, z] + W * delta))
        p = prev_doc[d]
        src = levels[p] if p >= 0 else 0
        trans[src, e] -= 1
        tr += math.log(transition_prior(trans, src, e, gamma[d], E))
        trans[src, e] += 1
    return tok, tr


@njit(cache=True)
def xi_rows(tokens, offsets, levels, phi):
    D = levels.shape[0]
    E, Z = phi.shape[0], phi.shape[1]
    out = np.zeros((D, E * Z))
    s = np.empty(Z)
    for d in range(D):
        e = levels[d]
        if offsets[d + 1] == offsets[d]:
            continue
        total = 0.0
        for z in range(Z):
            acc = 0.0
            for j in range(offsets[d], offsets[d + 1]):
                acc += phi[e, z, tokens[j]]
            s[z] = acc
            total += acc
        for z in range(Z):
            out[d, e * Z + z] = s[z] / total
    return out
