"""Exact solvers for the discrete transportation problem with real-valued masses.

Two routes, both numba-compiled since plan construction sits in the training
hot path (low-rank / hierarchical couplings solve two of these per batch):

* ``solve_transport_simplex`` -- transportation network simplex (matrix-minimum
  greedy start, MODI pivots, cyclic block pricing).  Fast; the default.
* ``solve_transport`` -- successive shortest augmenting paths with Johnson
  potentials.  Slower but immune to simplex cycling; used as the fallback
  when the simplex hits its iteration guard, and as an independent oracle
  in tests.

Both return a vertex plan with at most n + m - 1 support entries.
"""

from __future__ import annotations

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_STALLED = 1


@njit(cache=True)
def _uf_find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@njit(cache=True)
def solve_transport_simplex(a, b, C):
    """Transportation network simplex for min <C, P> s.t. P 1 = a, P^T 1 = b.

    Assumes sum(a) == sum(b) (caller checks).  Initial basis from the
    matrix-minimum greedy rule (completed to a spanning tree); entering arcs
    by cyclic block pricing.  Returns (plan, status); STATUS_STALLED means
    the pivot guard tripped and the caller should fall back to
    ``solve_transport``.
    """
    n = a.shape[0]
    m = b.shape[0]
    nb = n + m - 1

    brow = np.empty(nb, np.int64)
    bcol = np.empty(nb, np.int64)
    bflow = np.empty(nb)

    # matrix-minimum greedy allocation; skipping exhausted lines keeps the
    # allocated cells cycle-free (a forest over the n + m line nodes)
    rem_a = a.copy()
    rem_b = b.copy()
    order = np.argsort(C.ravel())
    parent = np.empty(n + m, np.int64)
    for t in range(n + m):
        parent[t] = t
    k = 0
    for o in range(order.shape[0]):
        idx = order[o]
        i = idx // m
        j = idx - i * m
        if rem_a[i] <= 0.0 or rem_b[j] <= 0.0:
            continue
        f = rem_a[i] if rem_a[i] < rem_b[j] else rem_b[j]
        brow[k] = i
        bcol[k] = j
        bflow[k] = f
        k += 1
        rem_a[i] -= f
        rem_b[j] -= f
        parent[_uf_find(parent, i)] = _uf_find(parent, n + j)

    # complete the forest to a spanning tree with zero-flow cells
    rep_row = np.full(n + m, -1, np.int64)
    rep_col = np.full(n + m, -1, np.int64)
    for v in range(n + m):
        c = _uf_find(parent, v)
        if v < n:
            if rep_row[c] < 0:
                rep_row[c] = v
        else:
            if rep_col[c] < 0:
                rep_col[c] = v - n
    main = _uf_find(parent, 0)
    for sweep in range(2):
        for v in range(n + m):
            c = _uf_find(parent, v)
            if c == main:
                continue
            if rep_row[c] >= 0 and rep_col[main] >= 0:
                brow[k] = rep_row[c]
                bcol[k] = rep_col[main]
            elif rep_col[c] >= 0 and rep_row[main] >= 0:
                brow[k] = rep_row[main]
                bcol[k] = rep_col[c]
            else:
                continue  # resolved on the second sweep once main has both
            bflow[k] = 0.0
            k += 1
            parent[c] = main
            if rep_row[main] < 0:
                rep_row[main] = rep_row[c]
            if rep_col[main] < 0:
                rep_col[main] = rep_col[c]
            main = _uf_find(parent, main)
    if k != nb:
        return np.zeros((n, m)), STATUS_STALLED

    cmax = 0.0
    for ii in range(n):
        for jj in range(m):
            if C[ii, jj] > cmax:
                cmax = C[ii, jj]
    tol = 1e-11 * (1.0 + cmax)

    # rooted spanning tree over the n + m line nodes (rows 0..n-1, cols
    # n..n+m-1), maintained incrementally across pivots: parent pointer,
    # flow on the arc to the parent, dual value, depth, and a child list
    nm_nodes = n + m
    tparent = np.full(nm_nodes, -1, np.int64)
    tflow = np.zeros(nm_nodes)
    pi = np.empty(nm_nodes)
    depth = np.zeros(nm_nodes, np.int64)
    first_child = np.full(nm_nodes, -1, np.int64)
    next_sib = np.full(nm_nodes, -1, np.int64)
    prev_sib = np.full(nm_nodes, -1, np.int64)

    # one-time CSR adjacency of the initial basis to root the tree at node 0
    deg = np.zeros(nm_nodes, np.int64)
    for k in range(nb):
        deg[brow[k]] += 1
        deg[n + bcol[k]] += 1
    off = np.empty(nm_nodes + 1, np.int64)
    off[0] = 0
    fill = np.empty(nm_nodes, np.int64)
    for t in range(nm_nodes):
        off[t + 1] = off[t] + deg[t]
        fill[t] = off[t]
    adj = np.empty(2 * nb, np.int64)
    for k in range(nb):
        adj[fill[brow[k]]] = k
        fill[brow[k]] += 1
        adj[fill[n + bcol[k]]] = k
        fill[n + bcol[k]] += 1

    queue = np.empty(nm_nodes, np.int64)
    node_seen = np.zeros(nm_nodes, np.bool_)
    node_seen[0] = True
    pi[0] = 0.0
    queue[0] = 0
    qh = 0
    qt = 1
    while qh < qt:
        node = queue[qh]
        qh += 1
        for p in range(off[node], off[node + 1]):
            k = adj[p]
            other = n + bcol[k] if node < n else brow[k]
            if node_seen[other]:
                continue
            node_seen[other] = True
            pi[other] = C[brow[k], bcol[k]] - pi[node]
            tparent[other] = node
            tflow[other] = bflow[k]
            depth[other] = depth[node] + 1
            next_sib[other] = first_child[node]
            if first_child[node] >= 0:
                prev_sib[first_child[node]] = other
            first_child[node] = other
            queue[qt] = other
            qt += 1
    if qt < nm_nodes:
        return np.zeros((n, m)), STATUS_STALLED

    path1 = np.empty(nm_nodes, np.int64)
    path2 = np.empty(nm_nodes, np.int64)
    saved_flow = np.empty(nm_nodes)
    stack = np.empty(nm_nodes, np.int64)

    nm_arcs = n * m
    block = 64
    if block > nm_arcs:
        block = nm_arcs
    price_ptr = 0

    max_pivots = 60 * nm_nodes + 200
    for _ in range(max_pivots):
        # cyclic block pricing: scan fixed-size blocks of arcs from where the
        # last search left off, entering the most negative arc of the first
        # block that has one; a full empty sweep proves optimality
        best = -tol
        ei = -1
        ej = -1
        scanned = 0
        while scanned < nm_arcs:
            for t in range(block):
                idx = price_ptr + t
                if idx >= nm_arcs:
                    idx -= nm_arcs
                ii = idx // m
                jj = idx - ii * m
                rc = C[ii, jj] - pi[ii] - pi[n + jj]
                if rc < best:
                    best = rc
                    ei = ii
                    ej = jj
            scanned += block
            price_ptr += block
            if price_ptr >= nm_arcs:
                price_ptr -= nm_arcs
            if ei >= 0:
                break
        if ei < 0:
            return _tree_to_plan(n, m, tparent, tflow), STATUS_OK

        # cycle = entering arc (ei, ej) plus the tree path between its
        # endpoints; lift both ends to their lowest common ancestor
        v1 = ei
        v2 = n + ej
        c1 = 0
        c2 = 0
        while depth[v1] > depth[v2]:
            path1[c1] = v1
            c1 += 1
            v1 = tparent[v1]
        while depth[v2] > depth[v1]:
            path2[c2] = v2
            c2 += 1
            v2 = tparent[v2]
        while v1 != v2:
            path1[c1] = v1
            c1 += 1
            v1 = tparent[v1]
            path2[c2] = v2
            c2 += 1
            v2 = tparent[v2]

        # signs alternate around the cycle starting with + on the entering
        # arc, so arcs at even offsets along either lifted path carry -theta
        theta = np.inf
        leave = -1
        leave_side = 0
        for t in range(0, c1, 2):
            if tflow[path1[t]] < theta:
                theta = tflow[path1[t]]
                leave = t
                leave_side = 1
        for t in range(0, c2, 2):
            if tflow[path2[t]] < theta:
                theta = tflow[path2[t]]
                leave = t
                leave_side = 2
        if leave < 0:
            return _tree_to_plan(n, m, tparent, tflow), STATUS_STALLED

        for t in range(c1):
            if t % 2 == 0:
                tflow[path1[t]] -= theta
            else:
                tflow[path1[t]] += theta
        for t in range(c2):
            if t % 2 == 0:
                tflow[path2[t]] -= theta
            else:
                tflow[path2[t]] += theta

        # the leaving arc cuts off the subtree holding one entering endpoint;
        # re-root that subtree at the endpoint and hang it off the other end
        if leave_side == 1:
            q = path1[leave]
            e_in = ei
            e_out = n + ej
            rlen = leave
            rpath = path1
        else:
            q = path2[leave]
            e_in = n + ej
            e_out = ei
            rlen = leave
            rpath = path2
        # detach q from its parent
        if prev_sib[q] < 0:
            first_child[tparent[q]] = next_sib[q]
        else:
            next_sib[prev_sib[q]] = next_sib[q]
        if next_sib[q] >= 0:
            prev_sib[next_sib[q]] = prev_sib[q]
        # reverse parent pointers along e_in -> q (rpath[0..rlen])
        for t in range(rlen + 1):
            saved_flow[t] = tflow[rpath[t]]
        for t in range(rlen - 1, -1, -1):
            child = rpath[t]
            par = rpath[t + 1]
            # detach child from par, then attach par under child
            if prev_sib[child] < 0:
                first_child[par] = next_sib[child]
            else:
                next_sib[prev_sib[child]] = next_sib[child]
            if next_sib[child] >= 0:
                prev_sib[next_sib[child]] = prev_sib[child]
            tparent[par] = child
            tflow[par] = saved_flow[t]
            next_sib[par] = first_child[child]
            prev_sib[par] = -1
            if first_child[child] >= 0:
                prev_sib[first_child[child]] = par
            first_child[child] = par
        tparent[e_in] = e_out
        tflow[e_in] = theta
        next_sib[e_in] = first_child[e_out]
        prev_sib[e_in] = -1
        if first_child[e_out] >= 0:
            prev_sib[first_child[e_out]] = e_in
        first_child[e_out] = e_in

        # shift duals over the re-attached subtree (+delta on rows, -delta on
        # cols keeps its internal arcs tight and zeroes the entering arc),
        # refreshing depths along the way
        delta = best if e_in < n else -best
        stack[0] = e_in
        sp = 1
        while sp > 0:
            sp -= 1
            w = stack[sp]
            depth[w] = depth[tparent[w]] + 1
            if w < n:
                pi[w] += delta
            else:
                pi[w] -= delta
            c = first_child[w]
            while c >= 0:
                stack[sp] = c
                sp += 1
                c = next_sib[c]

    return _tree_to_plan(n, m, tparent, tflow), STATUS_STALLED


@njit(cache=True)
def _tree_to_plan(n, m, tparent, tflow):
    plan = np.zeros((n, m))
    for v in range(n + m):
        p = tparent[v]
        if p < 0:
            continue
        f = tflow[v]
        if f <= 0.0:
            continue
        if v < n:
            plan[v, p - n] += f
        else:
            plan[p, v - n] += f
    return plan


@njit(cache=True)
def bflow_to_plan(n, m, brow, bcol, bflow):
    plan = np.zeros((n, m))
    for k in range(brow.shape[0]):
        f = bflow[k]
        if f > 0.0:
            plan[brow[k], bcol[k]] += f
    return plan


@njit(cache=True)
def _heap_push(keys, vals, size, key, val):
    i = size
    keys[i] = key
    vals[i] = val
    while i > 0:
        p = (i - 1) // 2
        if keys[p] <= keys[i]:
            break
        keys[p], keys[i] = keys[i], keys[p]
        vals[p], vals[i] = vals[i], vals[p]
        i = p
    return size + 1


@njit(cache=True)
def _heap_pop(keys, vals, size):
    key = keys[0]
    val = vals[0]
    size -= 1
    keys[0] = keys[size]
    vals[0] = vals[size]
    i = 0
    while True:
        l = 2 * i + 1
        r = l + 1
        s = i
        if l < size and keys[l] < keys[s]:
            s = l
        if r < size and keys[r] < keys[s]:
            s = r
        if s == i:
            break
        keys[s], keys[i] = keys[i], keys[s]
        vals[s], vals[i] = vals[i], vals[s]
        i = s
    return key, val, size


@njit(cache=True)
def solve_transport(a, b, C):
    """Optimal plan for min <C, P> s.t. P 1 = a, P^T 1 = b, P >= 0.

    Assumes sum(a) == sum(b) (caller checks).  Returns (plan, status).
    """
    n = a.shape[0]
    m = b.shape[0]
    nm = n + m
    flow = np.zeros((n, m))
    pot = np.zeros(nm)
    rem_a = a.copy()
    rem_b = b.copy()
    total = 0.0
    for i in range(n):
        total += a[i]
    atom_tol = 1e-14 * max(1.0, total)

    dist = np.empty(nm)
    visited = np.empty(nm, np.bool_)
    parent = np.empty(nm, np.int64)
    cap = 2 * (n * m + nm) + 16
    hkeys = np.empty(cap)
    hvals = np.empty(cap, np.int64)

    max_augment = 4 * nm + 64
    for _ in range(max_augment):
        remaining = 0.0
        for i in range(n):
            remaining += rem_a[i]
        if remaining <= atom_tol * nm:
            return flow, STATUS_OK

        for v in range(nm):
            dist[v] = np.inf
            visited[v] = False
            parent[v] = -1
        hsize = 0
        for i in range(n):
            if rem_a[i] > atom_tol:
                dist[i] = 0.0
                hsize = _heap_push(hkeys, hvals, hsize, 0.0, i)

        target = -1
        target_dist = np.inf
        while hsize > 0:
            d, u, hsize = _heap_pop(hkeys, hvals, hsize)
            if visited[u]:
                continue
            visited[u] = True
            if u >= n and rem_b[u - n] > atom_tol:
                target = u
                target_dist = d
                break
            if u < n:
                # forward arcs to every demand
                for j in range(m):
                    v = n + j
                    if visited[v]:
                        continue
                    w = C[u, j] + pot[u] - pot[v]
                    if w < 0.0:
                        w = 0.0
                    nd = d + w
                    if nd < dist[v]:
                        dist[v] = nd
                        parent[v] = u
                        hsize = _heap_push(hkeys, hvals, hsize, nd, v)
            else:
                # residual arcs back to supplies that ship to this demand
                j = u - n
                for i in range(n):
                    if visited[i] or flow[i, j] <= atom_tol:
                        continue
                    w = -C[i, j] + pot[u] - pot[i]
                    if w < 0.0:
                        w = 0.0
                    nd = d + w
                    if nd < dist[i]:
                        dist[i] = nd
                        parent[i] = u
                        hsize = _heap_push(hkeys, hvals, hsize, nd, i)

        if target < 0:
            return flow, STATUS_STALLED

        for v in range(nm):
            dv = dist[v]
            if dv > target_dist:
                dv = target_dist
            pot[v] += dv

        # trace path, find bottleneck
        bottleneck = rem_b[target - n]
        v = target
        while parent[v] >= 0:
            u = parent[v]
            if v < n:  # backward arc (demand u -> supply v): capacity = shipped flow
                f = flow[v, u - n]
                if f < bottleneck:
                    bottleneck = f
            v = u
        if rem_a[v] < bottleneck:
            bottleneck = rem_a[v]
        if bottleneck <= 0.0:
            return flow, STATUS_STALLED

        rem_a[v] -= bottleneck
        rem_b[target - n] -= bottleneck
        v = target
        while parent[v] >= 0:
            u = parent[v]
            if v >= n:
                flow[u, v - n] += bottleneck
            else:
                flow[v, u - n] -= bottleneck
            v = u

    return flow, STATUS_STALLED
