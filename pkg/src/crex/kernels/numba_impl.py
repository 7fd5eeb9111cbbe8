"""Numba @njit implementations of the hot kernels.

Same signatures and array conventions as ``numpy_impl`` (see that module's
docstring); scalar loops instead of vectorized ufuncs. fastmath stays off so
results are deterministic and reductions keep a fixed association order.
"""

import math

import numpy as np
from numba import njit

_JIT = dict(cache=True, fastmath=False, nogil=True)


@njit(**_JIT)
def forward_trace(
    emb, gat_w, gat_a, bil_w, bil_b, lin_w,
    ids, indptr, nbr, sa, oa, sc, oc,
    emask, gmask, inv_keep, slope,
):
    T = ids.shape[0]
    E = emb.shape[1]
    G = gat_w.shape[1]
    L = bil_w.shape[0]
    D = E + G

    h = np.empty((T, E))
    for t in range(T):
        row = ids[t]
        for e in range(E):
            h[t, e] = (emb[row, e] * emask[t, e]) * inv_keep

    z = np.empty((T, G))
    for t in range(T):
        for g in range(G):
            acc = 0.0
            for e in range(E):
                acc += h[t, e] * gat_w[e, g]
            z[t, g] = acc

    # Per-node attention keys: a_src . z_i and a_dst . z_j.
    zas = np.empty(T)
    zad = np.empty(T)
    for t in range(T):
        s0 = 0.0
        s1 = 0.0
        for g in range(G):
            s0 += z[t, g] * gat_a[g]
            s1 += z[t, g] * gat_a[G + g]
        zas[t] = s0
        zad[t] = s1

    nnz = nbr.shape[0]
    u = np.empty(nnz)
    logits = np.empty(nnz)
    alpha = np.empty(nnz)
    gat = np.zeros((T, G))
    for i in range(T):
        lo = indptr[i]
        hi = indptr[i + 1]
        for k in range(lo, hi):
            uu = zas[i] + zad[nbr[k]]
            u[k] = uu
            logits[k] = uu if uu > 0.0 else slope * uu
        mx = logits[lo]
        for k in range(lo + 1, hi):
            if logits[k] > mx:
                mx = logits[k]
        den = 0.0
        for k in range(lo, hi):
            ex = math.exp(logits[k] - mx)
            alpha[k] = ex
            den += ex
        for k in range(lo, hi):
            alpha[k] = alpha[k] / den
        for k in range(lo, hi):
            j = nbr[k]
            a = alpha[k]
            for g in range(G):
                gat[i, g] += a * z[j, g]

    gat_dropped = np.empty((T, G))
    for t in range(T):
        for g in range(G):
            gat_dropped[t, g] = (gat[t, g] * gmask[t, g]) * inv_keep

    e_s = np.empty(D)
    e_o = np.empty(D)
    for e in range(E):
        e_s[e] = h[sa, e]
        e_o[e] = h[oa, e]
    for g in range(G):
        e_s[E + g] = gat_dropped[sc, g]
        e_o[E + g] = gat_dropped[oc, g]

    scores = np.empty(L)
    for r in range(L):
        acc = 0.0
        for i in range(D):
            rowacc = 0.0
            for j in range(D):
                rowacc += bil_w[r, i, j] * e_o[j]
            acc += e_s[i] * rowacc
        for i in range(D):
            acc += lin_w[r, i] * e_s[i]
        for i in range(D):
            acc += lin_w[r, D + i] * e_o[i]
        scores[r] = acc + bil_b[r]

    mx = scores[0]
    for r in range(1, L):
        if scores[r] > mx:
            mx = scores[r]
    probs = np.empty(L)
    den = 0.0
    for r in range(L):
        p = math.exp(scores[r] - mx)
        probs[r] = p
        den += p
    for r in range(L):
        probs[r] = probs[r] / den

    return h, z, u, logits, alpha, gat, gat_dropped, e_s, e_o, scores, probs


@njit(**_JIT)
def scores_eval(
    emb, gat_w, gat_a, bil_w, bil_b, lin_w,
    ids, indptr, nbr, sa, oa, sc, oc, slope,
):
    T = ids.shape[0]
    E = emb.shape[1]
    G = gat_w.shape[1]
    L = bil_w.shape[0]
    D = E + G

    z = np.empty((T, G))
    for t in range(T):
        row = ids[t]
        for g in range(G):
            acc = 0.0
            for e in range(E):
                acc += emb[row, e] * gat_w[e, g]
            z[t, g] = acc

    zas = np.empty(T)
    zad = np.empty(T)
    for t in range(T):
        s0 = 0.0
        s1 = 0.0
        for g in range(G):
            s0 += z[t, g] * gat_a[g]
            s1 += z[t, g] * gat_a[G + g]
        zas[t] = s0
        zad[t] = s1

    # Only the two context nodes' GAT outputs are consumed downstream.
    gat_sc = np.zeros(G)
    gat_oc = np.zeros(G)
    for which in range(2):
        i = sc if which == 0 else oc
        out = gat_sc if which == 0 else gat_oc
        lo = indptr[i]
        hi = indptr[i + 1]
        mx = -1.0e308
        for k in range(lo, hi):
            uu = zas[i] + zad[nbr[k]]
            l = uu if uu > 0.0 else slope * uu
            if l > mx:
                mx = l
        den = 0.0
        for k in range(lo, hi):
            uu = zas[i] + zad[nbr[k]]
            l = uu if uu > 0.0 else slope * uu
            den += math.exp(l - mx)
        for k in range(lo, hi):
            j = nbr[k]
            uu = zas[i] + zad[j]
            l = uu if uu > 0.0 else slope * uu
            a = math.exp(l - mx) / den
            for g in range(G):
                out[g] += a * z[j, g]

    e_s = np.empty(D)
    e_o = np.empty(D)
    for e in range(E):
        e_s[e] = emb[ids[sa], e]
        e_o[e] = emb[ids[oa], e]
    for g in range(G):
        e_s[E + g] = gat_sc[g]
        e_o[E + g] = gat_oc[g]

    scores = np.empty(L)
    for r in range(L):
        acc = 0.0
        for i in range(D):
            rowacc = 0.0
            for j in range(D):
                rowacc += bil_w[r, i, j] * e_o[j]
            acc += e_s[i] * rowacc
        for i in range(D):
            acc += lin_w[r, i] * e_s[i]
        for i in range(D):
            acc += lin_w[r, D + i] * e_o[i]
        scores[r] = acc + bil_b[r]
    return scores


@njit(**_JIT)
def backward_into(
    gat_w, gat_a, bil_w, lin_w,
    indptr, nbr, sa, oa, sc, oc, slot_of_pos,
    h, z, u, alpha, e_s, e_o, probs,
    emask, gmask, inv_keep, slope, gold,
    dxrow, dgw, dga, dbw, dbb, dlw,
):
    T, E = h.shape
    G = z.shape[1]
    L = bil_w.shape[0]
    D = E + G

    loss = -math.log(probs[gold])
    dsc = probs.copy()
    dsc[gold] -= 1.0

    for r in range(L):
        dr = dsc[r]
        dbb[r] = dr
        for i in range(D):
            dei = dr * e_s[i]
            for j in range(D):
                dbw[r, i, j] = dei * e_o[j]
        for i in range(D):
            dlw[r, i] = dr * e_s[i]
            dlw[r, D + i] = dr * e_o[i]

    de_s = np.zeros(D)
    de_o = np.zeros(D)
    for r in range(L):
        dr = dsc[r]
        for i in range(D):
            acc_s = 0.0
            acc_o = 0.0
            for j in range(D):
                acc_s += bil_w[r, i, j] * e_o[j]
                acc_o += bil_w[r, j, i] * e_s[j]
            de_s[i] += dr * acc_s
            de_o[i] += dr * acc_o
        for i in range(D):
            de_s[i] += dr * lin_w[r, i]
            de_o[i] += dr * lin_w[r, D + i]

    dh = np.zeros((T, E))
    for e in range(E):
        dh[sa, e] += de_s[e]
        dh[oa, e] += de_o[e]

    dz = np.zeros((T, G))
    for g in range(2 * G):
        dga[g] = 0.0
    dgrow = np.empty(G)
    for which in range(2):
        node = sc if which == 0 else oc
        for g in range(G):
            dtop = de_s[E + g] if which == 0 else de_o[E + g]
            dgrow[g] = (dtop * gmask[node, g]) * inv_keep
        lo = indptr[node]
        hi = indptr[node + 1]
        tot = 0.0
        dal = np.empty(hi - lo)
        for k in range(lo, hi):
            j = nbr[k]
            acc = 0.0
            for g in range(G):
                acc += z[j, g] * dgrow[g]
            dal[k - lo] = acc
            tot += alpha[k] * acc
        dusum = 0.0
        for k in range(lo, hi):
            j = nbr[k]
            dl = alpha[k] * (dal[k - lo] - tot)
            du = dl if u[k] > 0.0 else slope * dl
            dusum += du
            for g in range(G):
                dga[G + g] += du * z[j, g]
                dz[j, g] += du * gat_a[G + g] + alpha[k] * dgrow[g]
        for g in range(G):
            dga[g] += dusum * z[node, g]
            dz[node, g] += dusum * gat_a[g]

    for e in range(E):
        for g in range(G):
            acc = 0.0
            for t in range(T):
                acc += h[t, e] * dz[t, g]
            dgw[e, g] = acc
    for t in range(T):
        for e in range(E):
            acc = 0.0
            for g in range(G):
                acc += dz[t, g] * gat_w[e, g]
            dh[t, e] += acc

    n_uniq = dxrow.shape[0]
    for k in range(n_uniq):
        for e in range(E):
            dxrow[k, e] = 0.0
    for t in range(T):
        slot = slot_of_pos[t]
        for e in range(E):
            dxrow[slot, e] += (dh[t, e] * emask[t, e]) * inv_keep
    return loss


@njit(**_JIT)
def backward_from_trace(
    gat_w, gat_a, bil_w, lin_w,
    indptr, nbr, sa, oa, sc, oc, slot_of_pos, n_uniq,
    h, z, u, alpha, e_s, e_o, probs,
    emask, gmask, inv_keep, slope, gold,
):
    E = h.shape[1]
    G = z.shape[1]
    L = bil_w.shape[0]
    D = E + G
    dxrow = np.zeros((n_uniq, E))
    dgw = np.zeros((E, G))
    dga = np.zeros(2 * G)
    dbw = np.zeros((L, D, D))
    dbb = np.zeros(L)
    dlw = np.zeros((L, 2 * D))
    loss = backward_into(
        gat_w, gat_a, bil_w, lin_w,
        indptr, nbr, sa, oa, sc, oc, slot_of_pos,
        h, z, u, alpha, e_s, e_o, probs,
        emask, gmask, inv_keep, slope, gold,
        dxrow, dgw, dga, dbw, dbb, dlw,
    )
    return loss, dxrow, dgw, dga, dbw, dbb, dlw


@njit(**_JIT)
def fb_fused(
    emb, gat_w, gat_a, bil_w, bil_b, lin_w,
    ids, indptr, nbr, sa, oa, sc, oc, slot_of_pos, n_uniq,
    emask, gmask, inv_keep, slope, gold, dtail,
):
    h, z, u, logits, alpha, gat, gat_dropped, e_s, e_o, scores, probs = forward_trace(
        emb, gat_w, gat_a, bil_w, bil_b, lin_w,
        ids, indptr, nbr, sa, oa, sc, oc,
        emask, gmask, inv_keep, slope,
    )
    E = emb.shape[1]
    G = gat_w.shape[1]
    L = bil_w.shape[0]
    D = E + G
    o1 = E * G
    o2 = o1 + 2 * G
    o3 = o2 + L * D * D
    o4 = o3 + L
    o5 = o4 + L * 2 * D
    dgw = dtail[:o1].reshape(E, G)
    dga = dtail[o1:o2]
    dbw = dtail[o2:o3].reshape(L, D, D)
    dbb = dtail[o3:o4]
    dlw = dtail[o4:o5].reshape(L, 2 * D)
    dxrow = np.zeros((n_uniq, E))
    loss = backward_into(
        gat_w, gat_a, bil_w, lin_w,
        indptr, nbr, sa, oa, sc, oc, slot_of_pos,
        h, z, u, alpha, e_s, e_o, probs,
        emask, gmask, inv_keep, slope, gold,
        dxrow, dgw, dga, dbw, dbb, dlw,
    )
    return loss, dxrow


@njit(**_JIT)
def materialize_rows(emb, uniq_rows, warm, row_step, upto_step, eta_emb, wd):
    E = emb.shape[1]
    apply_decay = (wd != 0.0) and (eta_emb != 0.0)
    for k in range(uniq_rows.shape[0]):
        r = uniq_rows[k]
        if warm[r] == 0:
            if apply_decay:
                gap = upto_step - row_step[r]
                for e in range(E):
                    x = emb[r, e]
                    for _ in range(gap):
                        x = x - eta_emb * (wd * x)
                    emb[r, e] = x
            row_step[r] = upto_step


@njit(**_JIT)
def adamw_update(
    emb, m_emb, v_emb, tail, m_tail, v_tail,
    dxrow, uniq_rows, dtail, eta_tail, eta_emb,
    wd, eps, bc1, bc2, b1, b2, t,
    warm, row_step, touch, cold_decay,
):
    ob1 = 1.0 - b1
    ob2 = 1.0 - b2
    for i in range(tail.shape[0]):
        g = dtail[i]
        m = b1 * m_tail[i] + ob1 * g
        vv = b2 * v_tail[i] + ob2 * (g * g)
        m_tail[i] = m
        v_tail[i] = vv
        upd = (m / bc1) / (math.sqrt(vv / bc2) + eps) + wd * tail[i]
        tail[i] = tail[i] - eta_tail[i] * upd

    B = emb.shape[0]
    E = emb.shape[1]
    K = uniq_rows.shape[0]
    for k in range(K):
        touch[uniq_rows[k]] = k
    apply_decay = (wd != 0.0) and (eta_emb != 0.0)
    for r in range(B):
        k = touch[r]
        if warm[r] == 1:
            for e in range(E):
                g = dxrow[k, e] if k >= 0 else 0.0
                m = b1 * m_emb[r, e] + ob1 * g
                vv = b2 * v_emb[r, e] + ob2 * (g * g)
                m_emb[r, e] = m
                v_emb[r, e] = vv
                upd = (m / bc1) / (math.sqrt(vv / bc2) + eps) + wd * emb[r, e]
                emb[r, e] = emb[r, e] - eta_emb * upd
        elif k >= 0:
            gap = (t - 1) - row_step[r]
            if apply_decay and gap > 0:
                scale = cold_decay ** gap
                for e in range(E):
                    emb[r, e] = emb[r, e] * scale
            for e in range(E):
                g = dxrow[k, e]
                m = b1 * m_emb[r, e] + ob1 * g
                vv = b2 * v_emb[r, e] + ob2 * (g * g)
                m_emb[r, e] = m
                v_emb[r, e] = vv
                upd = (m / bc1) / (math.sqrt(vv / bc2) + eps) + wd * emb[r, e]
                emb[r, e] = emb[r, e] - eta_emb * upd
            warm[r] = 1
    for k in range(K):
        touch[uniq_rows[k]] = -1


@njit(**_JIT)
def finalize_cold(emb, warm, row_step, t, eta_emb, wd, cold_decay):
    B = emb.shape[0]
    E = emb.shape[1]
    apply_decay = (wd != 0.0) and (eta_emb != 0.0)
    for r in range(B):
        if warm[r] == 0:
            gap = t - row_step[r]
            if apply_decay and gap > 0:
                scale = cold_decay ** gap
                for e in range(E):
                    emb[r, e] = emb[r, e] * scale
            row_step[r] = t
