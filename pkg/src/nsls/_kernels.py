"""Compiled inner loop of one SVRG epoch with the samplemat estimator.

The iterate is kept implicitly as ``x = gamma*v + delta0*anchor + delta1*w``
and the running sum of iterates lazily per coordinate, so a step costs only
the coordinates the estimate touches.  The kernel consumes a buffer of
uniforms in the same order as :func:`nsls.sampling.samplemat`; when the
buffer runs low it returns and the caller refills it, carrying unused
uniforms over, so results do not depend on the buffer size.

``fstate = [gamma, delta0, delta1, G, sum_delta0, sum_delta1]`` where ``G``
is the sum of ``gamma`` since the last renormalization.
``istate = [step, touches, renorms, status, bad_step]``; status 1 means a
non-finite value appeared.
"""

from __future__ import annotations

import numpy as np
from numba import njit

F_GAMMA, F_D0, F_D1, F_G, F_SD0, F_SD1 = range(6)
I_STEP, I_TOUCH, I_RENORM, I_STATUS, I_BAD = range(5)


@njit(cache=True, inline="always")
def _alias(u, prob, alias, offset, size):
    x = u * size
    k = int(x)
    if k >= size:
        k = size - 1
    if x - k < prob[offset + k]:
        return k
    return alias[offset + k]


@njit(cache=True)
def epoch_chunk(row_prob, row_alias, row_pinv, indptr, indices, values, l1_prob, l1_alias,
                l1norm, c, exact, head_ptr, head_idx, head_val, tail_ptr, tail_idx, tail_val,
                tail_prob, tail_alias, tail_l2sq, max_draws,
                anchor, w, v, acc, stamp, fstate, istate, scratch,
                eta, lam_s, sgn, renorm_thr, m, u):
    """Run steps until ``m`` are done or the uniform buffer may run out.

    Returns the number of uniforms consumed.
    """
    n_rows = row_prob.shape[0]
    d = v.shape[0]
    pos = 0
    nu = u.shape[0]
    gamma = fstate[F_GAMMA]
    d0 = fstate[F_D0]
    d1 = fstate[F_D1]
    G = fstate[F_G]
    sd0 = fstate[F_SD0]
    sd1 = fstate[F_SD1]
    step = istate[I_STEP]
    touches = istate[I_TOUCH]
    r = 1.0 - eta * lam_s
    while step < m and pos + max_draws <= nu:
        i = _alias(u[pos], row_prob, row_alias, 0, n_rows)
        pos += 1
        dm1 = d0 - 1.0
        dot = 0.0
        lo = indptr[i]
        nnz = indptr[i + 1] - lo
        if exact[i]:
            for t in range(lo, lo + nnz):
                j = indices[t]
                dot += values[t] * (gamma * v[j] + dm1 * anchor[j] + d1 * w[j])
            touches += 1 + 2 * nnz
        else:
            ci = c[i]
            for t in range(ci):
                scratch[t] = _alias(u[pos], l1_prob, l1_alias, lo, nnz)
                pos += 1
            for h in range(head_ptr[i], head_ptr[i + 1]):
                j = head_idx[h]
                dot += head_val[h] * (gamma * v[j] + dm1 * anchor[j] + d1 * w[j])
            tlo = tail_ptr[i]
            ntail = tail_ptr[i + 1] - tlo
            tsum = 0.0
            for t in range(ci):
                k = _alias(u[pos], tail_prob, tail_alias, tlo, ntail)
                pos += 1
                j = tail_idx[tlo + k]
                tsum += (gamma * v[j] + dm1 * anchor[j] + d1 * w[j]) * tail_l2sq[i] / tail_val[tlo + k]
            dot += tsum / ci
            touches += 1 + 4 * ci
        if not np.isfinite(dot):
            istate[I_STATUS] = 1
            istate[I_BAD] = step
            break
        g_new = r * gamma
        d0 = r * d0 + eta * lam_s
        d1 = r * d1 - eta
        coef = -eta * sgn * row_pinv[i] * dot / g_new
        if exact[i]:
            for t in range(lo, lo + nnz):
                j = indices[t]
                acc[j] += v[j] * (G - stamp[j])
                stamp[j] = G
                v[j] += coef * values[t]
        else:
            ci = c[i]
            mag = l1norm[i] / ci
            for t in range(ci):
                k = lo + scratch[t]
                j = indices[k]
                acc[j] += v[j] * (G - stamp[j])
                stamp[j] = G
                if values[k] > 0:
                    v[j] += coef * mag
                else:
                    v[j] -= coef * mag
        gamma = g_new
        G += gamma
        sd0 += d0
        sd1 += d1
        step += 1
        if abs(gamma) < renorm_thr:
            for j in range(d):
                acc[j] += v[j] * (G - stamp[j])
                v[j] *= gamma
                stamp[j] = 0.0
            G = 0.0
            gamma = 1.0
            istate[I_RENORM] += 1
    fstate[F_GAMMA] = gamma
    fstate[F_D0] = d0
    fstate[F_D1] = d1
    fstate[F_G] = G
    fstate[F_SD0] = sd0
    fstate[F_SD1] = sd1
    istate[I_STEP] = step
    istate[I_TOUCH] = touches
    return pos
