"""Pure-numpy (vectorized) implementations of the hot kernels.

Per-instance arrays follow a CSR layout: ``indptr``/``nbr`` hold each node's
sorted neighbor list (self-loops included), ``sa``/``oa`` are the anchor
positions of the subject/object opening markers, and ``sc``/``oc`` are the
marked positions of each span's first original token (the node whose GAT
output feeds the entity representation). ``emask``/``gmask`` are 0/1 dropout
masks for embeddings and GAT outputs; ``inv_keep`` is 1/(1-p), or 1.0 in
inference mode with all-ones masks.
"""

import numpy as np


def tail_views(dtail, E, G, L, D):
    """Slice a flat non-embedding gradient buffer into component views."""
    o1 = E * G
    o2 = o1 + 2 * G
    o3 = o2 + L * D * D
    o4 = o3 + L
    o5 = o4 + L * 2 * D
    return (
        dtail[:o1].reshape(E, G),
        dtail[o1:o2],
        dtail[o2:o3].reshape(L, D, D),
        dtail[o3:o4],
        dtail[o4:o5].reshape(L, 2 * D),
    )


def _pair_scores(bil_w, bil_b, lin_w, e_s, e_o):
    D = e_s.shape[0]
    return (bil_w @ e_o) @ e_s + lin_w[:, :D] @ e_s + lin_w[:, D:] @ e_o + bil_b


def forward_trace(
    emb, gat_w, gat_a, bil_w, bil_b, lin_w,
    ids, indptr, nbr, sa, oa, sc, oc,
    emask, gmask, inv_keep, slope,
):
    T = ids.shape[0]
    G = gat_w.shape[1]
    h = (emb[ids] * emask) * inv_keep
    z = h @ gat_w
    src = np.repeat(np.arange(T), np.diff(indptr))
    u = (z @ gat_a[:G])[src] + (z @ gat_a[G:])[nbr]
    logits = np.where(u > 0.0, u, slope * u)
    mx = np.maximum.reduceat(logits, indptr[:-1])
    ex = np.exp(logits - mx[src])
    den = np.add.reduceat(ex, indptr[:-1])
    alpha = ex / den[src]
    gat = np.add.reduceat(alpha[:, None] * z[nbr], indptr[:-1], axis=0)
    gat_dropped = (gat * gmask) * inv_keep
    e_s = np.concatenate((h[sa], gat_dropped[sc]))
    e_o = np.concatenate((h[oa], gat_dropped[oc]))
    scores = _pair_scores(bil_w, bil_b, lin_w, e_s, e_o)
    p = np.exp(scores - scores.max())
    probs = p / p.sum()
    return h, z, u, logits, alpha, gat, gat_dropped, e_s, e_o, scores, probs


def scores_eval(
    emb, gat_w, gat_a, bil_w, bil_b, lin_w,
    ids, indptr, nbr, sa, oa, sc, oc, slope,
):
    T = ids.shape[0]
    G = gat_w.shape[1]
    h = emb[ids]
    z = h @ gat_w
    src = np.repeat(np.arange(T), np.diff(indptr))
    u = (z @ gat_a[:G])[src] + (z @ gat_a[G:])[nbr]
    logits = np.where(u > 0.0, u, slope * u)
    mx = np.maximum.reduceat(logits, indptr[:-1])
    ex = np.exp(logits - mx[src])
    den = np.add.reduceat(ex, indptr[:-1])
    alpha = ex / den[src]
    gat = np.add.reduceat(alpha[:, None] * z[nbr], indptr[:-1], axis=0)
    e_s = np.concatenate((h[sa], gat[sc]))
    e_o = np.concatenate((h[oa], gat[oc]))
    return _pair_scores(bil_w, bil_b, lin_w, e_s, e_o)


def backward_into(
    gat_w, gat_a, bil_w, lin_w,
    indptr, nbr, sa, oa, sc, oc, slot_of_pos,
    h, z, u, alpha, e_s, e_o, probs,
    emask, gmask, inv_keep, slope, gold,
    dxrow, dgw, dga, dbw, dbb, dlw,
):
    T, E = h.shape
    G = z.shape[1]
    D = E + G
    loss = -np.log(probs[gold])
    dsc = probs.copy()
    dsc[gold] -= 1.0
    dbb[:] = dsc
    dbw[:] = dsc[:, None, None] * (e_s[:, None] * e_o[None, :])[None, :, :]
    dlw[:, :D] = dsc[:, None] * e_s[None, :]
    dlw[:, D:] = dsc[:, None] * e_o[None, :]
    de_s = dsc @ (bil_w @ e_o) + lin_w[:, :D].T @ dsc
    de_o = dsc @ (e_s @ bil_w) + lin_w[:, D:].T @ dsc

    dh = np.zeros((T, E))
    dh[sa] += de_s[:E]
    dh[oa] += de_o[:E]
    dz = np.zeros((T, G))
    dga[:] = 0.0
    for node, dtop in ((sc, de_s[E:]), (oc, de_o[E:])):
        dgrow = (dtop * gmask[node]) * inv_keep
        s0, s1 = int(indptr[node]), int(indptr[node + 1])
        js = nbr[s0:s1]
        al = alpha[s0:s1]
        dal = z[js] @ dgrow
        tot = al @ dal
        dl = al * (dal - tot)
        du = np.where(u[s0:s1] > 0.0, dl, slope * dl)
        dusum = du.sum()
        dga[:G] += dusum * z[node]
        dga[G:] += du @ z[js]
        dz[node] += dusum * gat_a[:G]
        np.add.at(dz, js, du[:, None] * gat_a[None, G:] + al[:, None] * dgrow[None, :])
    dgw[:] = h.T @ dz
    dh += dz @ gat_w.T
    dx = (dh * emask) * inv_keep
    dxrow[:] = 0.0
    np.add.at(dxrow, slot_of_pos, dx)
    return float(loss)


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
    dgw, dga, dbw, dbb, dlw = tail_views(dtail, E, G, L, D)
    dxrow = np.zeros((n_uniq, E))
    loss = backward_into(
        gat_w, gat_a, bil_w, lin_w,
        indptr, nbr, sa, oa, sc, oc, slot_of_pos,
        h, z, u, alpha, e_s, e_o, probs,
        emask, gmask, inv_keep, slope, gold,
        dxrow, dgw, dga, dbw, dbb, dlw,
    )
    return loss, dxrow


def materialize_rows(emb, uniq_rows, warm, row_step, upto_step, eta_emb, wd):
    """Replay the pending weight decay of cold rows about to be read.

    The replay repeats the dense per-step arithmetic exactly (three rounded
    operations per step), so a forward pass running right after sees the
    same parameter values the dense reference would produce.
    """
    cold = uniq_rows[warm[uniq_rows] == 0]
    if cold.size == 0:
        return
    if wd != 0.0 and eta_emb != 0.0:
        for start in np.unique(row_step[cold]):
            rows = cold[row_step[cold] == start]
            block = emb[rows]
            for _ in range(int(upto_step - start)):
                block = block - eta_emb * (wd * block)
            emb[rows] = block
    row_step[cold] = upto_step


def adamw_update(
    emb, m_emb, v_emb, tail, m_tail, v_tail,
    dxrow, uniq_rows, dtail, eta_tail, eta_emb,
    wd, eps, bc1, bc2, b1, b2, t,
    warm, row_step, touch, cold_decay,
):
    """One decoupled-weight-decay Adam step at step count ``t``.

    Non-embedding parameters update densely. Embedding rows update densely
    once they have ever received a gradient ("warm"); rows that are still
    cold carry exactly zero moments, so their pending updates reduce to pure
    weight decay: ``materialize_rows`` replays them exactly when a row is
    about to be used, and ``finalize_cold`` settles never-used rows in
    closed form (``cold_decay ** gap``) when the parameters escape.
    """
    del touch  # scratch used only by the numba kernel; kept for signature parity
    m_tail[:] = b1 * m_tail + (1.0 - b1) * dtail
    v_tail[:] = b2 * v_tail + (1.0 - b2) * (dtail * dtail)
    upd = (m_tail / bc1) / (np.sqrt(v_tail / bc2) + eps) + wd * tail
    tail -= eta_tail * upd

    warm_rows = np.flatnonzero(warm)
    touched_warm = warm[uniq_rows] == 1
    g = np.zeros((warm_rows.size, emb.shape[1]))
    pos = np.searchsorted(warm_rows, uniq_rows[touched_warm])
    g[pos] = dxrow[touched_warm]
    mw = b1 * m_emb[warm_rows] + (1.0 - b1) * g
    vw = b2 * v_emb[warm_rows] + (1.0 - b2) * (g * g)
    m_emb[warm_rows] = mw
    v_emb[warm_rows] = vw
    updw = (mw / bc1) / (np.sqrt(vw / bc2) + eps) + wd * emb[warm_rows]
    emb[warm_rows] = emb[warm_rows] - eta_emb * updw

    cold_rows = uniq_rows[~touched_warm]
    if cold_rows.size:
        if wd != 0.0 and eta_emb != 0.0:
            gap = (t - 1) - row_step[cold_rows]
            emb[cold_rows] *= (cold_decay ** gap.astype(np.float64))[:, None]
        gc = dxrow[~touched_warm]
        mc = b1 * m_emb[cold_rows] + (1.0 - b1) * gc
        vc = b2 * v_emb[cold_rows] + (1.0 - b2) * (gc * gc)
        m_emb[cold_rows] = mc
        v_emb[cold_rows] = vc
        updc = (mc / bc1) / (np.sqrt(vc / bc2) + eps) + wd * emb[cold_rows]
        emb[cold_rows] = emb[cold_rows] - eta_emb * updc
        warm[cold_rows] = 1


def finalize_cold(emb, warm, row_step, t, eta_emb, wd, cold_decay):
    """Materialize the pending weight decay of never-touched embedding rows."""
    cold = np.flatnonzero(warm == 0)
    if cold.size == 0:
        return
    if wd != 0.0 and eta_emb != 0.0:
        gap = t - row_step[cold]
        live = gap > 0
        rows = cold[live]
        if rows.size:
            emb[rows] *= (cold_decay ** gap[live].astype(np.float64))[:, None]
    row_step[cold] = t
