"""Numba loop implementations of the hot kernels.

Each function here has a vectorized twin in ``_kernels_np`` with an identical
signature and contract.  Loop order is fixed so results are deterministic
run to run; no fastmath, no parallelism.
"""

import numpy as np

from ._accel import njit


@njit(cache=True)
def locate_many(pts, v0, e1, e2, lamscale, x0, y0, inv_cx, inv_cy,
                ngx, ngy, cell_ptr, cell_items, tol_bary, snap_dist):
    """Locate points in a triangulation via a uniform bucket grid.

    Returns (elems, lams): element index per point (-1 when outside) and
    barycentric coordinates.  Candidate triangles are scanned in ascending
    element order; the first triangle containing the point (all barycentrics
    >= -tol_bary) wins, which gives the lowest-index tie-break on shared
    edges.  Points missing every candidate are snapped to the least-violated
    candidate when their exact penetration distance is <= snap_dist.
    """
    n = pts.shape[0]
    elems = np.full(n, -1, dtype=np.int64)
    lams = np.zeros((n, 3), dtype=np.float64)
    for p in range(n):
        px = pts[p, 0]
        py = pts[p, 1]
        cx = int(np.floor((px - x0) * inv_cx))
        cy = int(np.floor((py - y0) * inv_cy))
        if cx < 0 or cx >= ngx or cy < 0 or cy >= ngy:
            continue
        c = cy * ngx + cx
        best_pen = np.inf
        best_t = -1
        bl0 = 0.0
        bl1 = 0.0
        bl2 = 0.0
        found = False
        for k in range(cell_ptr[c], cell_ptr[c + 1]):
            t = cell_items[k]
            dx = px - v0[t, 0]
            dy = py - v0[t, 1]
            a = e1[t, 0]
            b = e2[t, 0]
            cc = e1[t, 1]
            d = e2[t, 1]
            det = a * d - b * cc
            l1 = (dx * d - dy * b) / det
            l2 = (dy * a - dx * cc) / det
            l0 = 1.0 - l1 - l2
            lmin = min(l0, min(l1, l2))
            if lmin >= -tol_bary:
                elems[p] = t
                lams[p, 0] = l0
                lams[p, 1] = l1
                lams[p, 2] = l2
                found = True
                break
            pen = 0.0
            if l0 < 0.0:
                pen = max(pen, -l0 * lamscale[t, 0])
            if l1 < 0.0:
                pen = max(pen, -l1 * lamscale[t, 1])
            if l2 < 0.0:
                pen = max(pen, -l2 * lamscale[t, 2])
            if pen < best_pen:
                best_pen = pen
                best_t = t
                bl0 = l0
                bl1 = l1
                bl2 = l2
        if (not found) and best_t >= 0 and best_pen <= snap_dist:
            elems[p] = best_t
            lams[p, 0] = bl0
            lams[p, 1] = bl1
            lams[p, 2] = bl2
    return elems, lams


@njit(cache=True)
def p2_eval_vec(coef, tri_nodes, elems, lams):
    """Evaluate a P2 vector field at located points; outside points give 0."""
    n = elems.shape[0]
    out = np.zeros((n, 2), dtype=np.float64)
    for p in range(n):
        t = elems[p]
        if t < 0:
            continue
        l0 = lams[p, 0]
        l1 = lams[p, 1]
        l2 = lams[p, 2]
        n0 = l0 * (2.0 * l0 - 1.0)
        n1 = l1 * (2.0 * l1 - 1.0)
        n2 = l2 * (2.0 * l2 - 1.0)
        n3 = 4.0 * l0 * l1
        n4 = 4.0 * l1 * l2
        n5 = 4.0 * l2 * l0
        for c in range(2):
            out[p, c] = (n0 * coef[tri_nodes[t, 0], c]
                         + n1 * coef[tri_nodes[t, 1], c]
                         + n2 * coef[tri_nodes[t, 2], c]
                         + n3 * coef[tri_nodes[t, 3], c]
                         + n4 * coef[tri_nodes[t, 4], c]
                         + n5 * coef[tri_nodes[t, 5], c])
    return out


@njit(cache=True)
def asm_stiffness(gradN, wdet):
    """Per-element scalar stiffness blocks: sum_q w |T| gradN_i . gradN_j."""
    nt = gradN.shape[0]
    nq = gradN.shape[1]
    out = np.zeros((nt, 6, 6), dtype=np.float64)
    for t in range(nt):
        for q in range(nq):
            w = wdet[t, q]
            for i in range(6):
                gix = gradN[t, q, i, 0]
                giy = gradN[t, q, i, 1]
                for j in range(6):
                    out[t, i, j] += w * (gix * gradN[t, q, j, 0]
                                         + giy * gradN[t, q, j, 1])
    return out


@njit(cache=True)
def asm_mass(Nq, wdet):
    """Per-element scalar mass blocks: sum_q w |T| N_i N_j."""
    nt = wdet.shape[0]
    nq = wdet.shape[1]
    out = np.zeros((nt, 6, 6), dtype=np.float64)
    for t in range(nt):
        for q in range(nq):
            w = wdet[t, q]
            for i in range(6):
                wi = w * Nq[q, i]
                for j in range(6):
                    out[t, i, j] += wi * Nq[q, j]
    return out


@njit(cache=True)
def asm_divergence(gradN, Np1, wdet):
    """Per-element divergence blocks: -sum_q w |T| psi_pi dN_j/dx_c."""
    nt = gradN.shape[0]
    nq = gradN.shape[1]
    out = np.zeros((nt, 3, 6, 2), dtype=np.float64)
    for t in range(nt):
        for q in range(nq):
            w = wdet[t, q]
            for pi in range(3):
                wp = w * Np1[q, pi]
                for j in range(6):
                    out[t, pi, j, 0] -= wp * gradN[t, q, j, 0]
                    out[t, pi, j, 1] -= wp * gradN[t, q, j, 1]
    return out


@njit(cache=True)
def asm_convection(aq, gradN, Nq, wdet):
    """Per-element convection blocks: sum_q w |T| N_i (a . grad N_j)."""
    nt = gradN.shape[0]
    nq = gradN.shape[1]
    out = np.zeros((nt, 6, 6), dtype=np.float64)
    for t in range(nt):
        for q in range(nq):
            w = wdet[t, q]
            ax = aq[t, q, 0]
            ay = aq[t, q, 1]
            for j in range(6):
                adg = ax * gradN[t, q, j, 0] + ay * gradN[t, q, j, 1]
                wadg = w * adg
                for i in range(6):
                    out[t, i, j] += wadg * Nq[q, i]
    return out


@njit(cache=True)
def asm_linearized(Ga, Nq, wdet):
    """Per-element linearized-convection blocks N_i N_j da_c/dx_d."""
    nt = wdet.shape[0]
    nq = wdet.shape[1]
    out = np.zeros((nt, 6, 6, 2, 2), dtype=np.float64)
    for t in range(nt):
        for q in range(nq):
            w = wdet[t, q]
            g00 = Ga[t, q, 0, 0]
            g01 = Ga[t, q, 0, 1]
            g10 = Ga[t, q, 1, 0]
            g11 = Ga[t, q, 1, 1]
            for i in range(6):
                wi = w * Nq[q, i]
                for j in range(6):
                    wij = wi * Nq[q, j]
                    out[t, i, j, 0, 0] += wij * g00
                    out[t, i, j, 0, 1] += wij * g01
                    out[t, i, j, 1, 0] += wij * g10
                    out[t, i, j, 1, 1] += wij * g11
    return out


@njit(cache=True)
def rhs_scatter_vec(local, tri_nodes, n_nodes):
    """Scatter per-element (6,2) vectors into a node-major global rhs."""
    nt = local.shape[0]
    rhs = np.zeros(2 * n_nodes, dtype=np.float64)
    for t in range(nt):
        for i in range(6):
            node = tri_nodes[t, i]
            rhs[2 * node] += local[t, i, 0]
            rhs[2 * node + 1] += local[t, i, 1]
    return rhs


@njit(cache=True)
def hausdorff_dir(pts, seg_a, seg_b):
    """Directed Hausdorff distance: max over pts of min segment distance."""
    n = pts.shape[0]
    ns = seg_a.shape[0]
    worst = 0.0
    for p in range(n):
        px = pts[p, 0]
        py = pts[p, 1]
        best = np.inf
        for s in range(ns):
            ax = seg_a[s, 0]
            ay = seg_a[s, 1]
            bx = seg_b[s, 0]
            by = seg_b[s, 1]
            dx = bx - ax
            dy = by - ay
            L2 = dx * dx + dy * dy
            if L2 > 0.0:
                u = ((px - ax) * dx + (py - ay) * dy) / L2
                if u < 0.0:
                    u = 0.0
                elif u > 1.0:
                    u = 1.0
            else:
                u = 0.0
            qx = ax + u * dx - px
            qy = ay + u * dy - py
            d2 = qx * qx + qy * qy
            if d2 < best:
                best = d2
        if best > worst:
            worst = best
    return np.sqrt(worst)
