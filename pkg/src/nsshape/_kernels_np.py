"""Vectorized numpy implementations of the hot kernels.

Signature-compatible with ``_kernels_nb``; used when numba is unavailable or
when NSSHAPE_KERNELS=numpy is set.
"""

import numpy as np


def locate_many(pts, v0, e1, e2, lamscale, x0, y0, inv_cx, inv_cy,
                ngx, ngy, cell_ptr, cell_items, tol_bary, snap_dist):
    n = pts.shape[0]
    elems = np.full(n, -1, dtype=np.int64)
    lams = np.zeros((n, 3), dtype=np.float64)
    if n == 0:
        return elems, lams

    cx = np.floor((pts[:, 0] - x0) * inv_cx).astype(np.int64)
    cy = np.floor((pts[:, 1] - y0) * inv_cy).astype(np.int64)
    ok = (cx >= 0) & (cx < ngx) & (cy >= 0) & (cy < ngy)
    cells = np.where(ok, cy * ngx + cx, -1)

    # Process query points grouped by grid cell so each group shares one
    # candidate list.
    order = np.argsort(cells, kind="stable")
    sorted_cells = cells[order]
    starts = np.flatnonzero(np.r_[True, sorted_cells[1:] != sorted_cells[:-1]])
    starts = np.r_[starts, len(sorted_cells)]
    for g in range(len(starts) - 1):
        c = sorted_cells[starts[g]]
        if c < 0:
            continue
        idx = order[starts[g]:starts[g + 1]]
        cand = cell_items[cell_ptr[c]:cell_ptr[c + 1]]
        if len(cand) == 0:
            continue
        p = pts[idx]                               # (k,2)
        d = p[:, None, :] - v0[cand][None, :, :]    # (k,m,2)
        a = e1[cand, 0]
        b = e2[cand, 0]
        cc = e1[cand, 1]
        dd = e2[cand, 1]
        det = a * dd - b * cc
        l1 = (d[:, :, 0] * dd - d[:, :, 1] * b) / det
        l2 = (d[:, :, 1] * a - d[:, :, 0] * cc) / det
        l0 = 1.0 - l1 - l2
        lmin = np.minimum(l0, np.minimum(l1, l2))
        inside = lmin >= -tol_bary                 # (k,m)
        any_inside = inside.any(axis=1)
        first = np.argmax(inside, axis=1)          # lowest candidate index hit

        pen = np.maximum(np.maximum(np.where(l0 < 0, -l0 * lamscale[cand, 0], 0.0),
                                    np.where(l1 < 0, -l1 * lamscale[cand, 1], 0.0)),
                         np.where(l2 < 0, -l2 * lamscale[cand, 2], 0.0))
        best = np.argmin(pen, axis=1)
        snap_ok = pen[np.arange(len(idx)), best] <= snap_dist

        pick = np.where(any_inside, first, best)
        good = any_inside | snap_ok
        rows = np.arange(len(idx))
        elems[idx[good]] = cand[pick[good]]
        lams[idx[good], 0] = l0[rows[good], pick[good]]
        lams[idx[good], 1] = l1[rows[good], pick[good]]
        lams[idx[good], 2] = l2[rows[good], pick[good]]
    return elems, lams


def _p2_basis(lams):
    l0 = lams[:, 0]
    l1 = lams[:, 1]
    l2 = lams[:, 2]
    return np.stack([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                     4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0], axis=1)


def p2_eval_vec(coef, tri_nodes, elems, lams):
    n = elems.shape[0]
    out = np.zeros((n, 2), dtype=np.float64)
    hit = elems >= 0
    if not hit.any():
        return out
    N = _p2_basis(lams[hit])                       # (k,6)
    nodes = tri_nodes[elems[hit]]                  # (k,6)
    vals = coef[nodes]                             # (k,6,2)
    out[hit] = np.einsum("ki,kic->kc", N, vals)
    return out


def asm_stiffness(gradN, wdet):
    return np.einsum("tq,tqid,tqjd->tij", wdet, gradN, gradN)


def asm_mass(Nq, wdet):
    return np.einsum("tq,qi,qj->tij", wdet, Nq, Nq)


def asm_divergence(gradN, Np1, wdet):
    return -np.einsum("tq,qp,tqjc->tpjc", wdet, Np1, gradN)


def asm_convection(aq, gradN, Nq, wdet):
    adg = np.einsum("tqc,tqjc->tqj", aq, gradN)
    return np.einsum("tq,qi,tqj->tij", wdet, Nq, adg)


def asm_linearized(Ga, Nq, wdet):
    return np.einsum("tq,qi,qj,tqcd->tijcd", wdet, Nq, Nq, Ga)


def rhs_scatter_vec(local, tri_nodes, n_nodes):
    rhs = np.zeros(2 * n_nodes, dtype=np.float64)
    flat = (2 * tri_nodes[:, :, None] + np.arange(2)[None, None, :]).ravel()
    np.add.at(rhs, flat, local.ravel())
    return rhs


def hausdorff_dir(pts, seg_a, seg_b, chunk=2048):
    ab = seg_b - seg_a                             # (s,2)
    L2 = np.einsum("sc,sc->s", ab, ab)
    L2safe = np.where(L2 > 0, L2, 1.0)
    worst = 0.0
    for lo in range(0, len(pts), chunk):
        p = pts[lo:lo + chunk]
        ap = p[:, None, :] - seg_a[None, :, :]      # (k,s,2)
        u = np.einsum("ksc,sc->ks", ap, ab) / L2safe
        u = np.clip(np.where(L2 > 0, u, 0.0), 0.0, 1.0)
        q = ap - u[:, :, None] * ab[None, :, :]
        d2 = np.einsum("ksc,ksc->ks", q, q)
        m = d2.min(axis=1).max() if len(p) else 0.0
        worst = max(worst, m)
    return float(np.sqrt(worst))
