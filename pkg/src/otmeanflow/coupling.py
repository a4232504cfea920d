"""Mini-batch coupling strategies for pairing source and target samples.

Six ways to build a plan over a source batch and a target batch:

* independent -- product coupling (the classic conditional-FM pairing)
* exact       -- discrete optimal transport (assignment for uniform
                 equal-size batches, network simplex otherwise)
* sinkhorn    -- entropically regularized OT, log-domain iterations
* lot_lr      -- linear OT through a pivot measure, low-rank composition
* lot_hr      -- linear OT through a pivot measure, per-block re-solve
* sliced      -- 1D monotone plans along random projections, aggregated by
                 minimum / expectation / temperature-weighted average

All plans expose exact marginals and support drawing one training pair per
source point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._transport import STATUS_OK, solve_transport, solve_transport_simplex

COUPLING_KINDS = ("independent", "exact", "sinkhorn", "lot_lr", "lot_hr", "sliced")
PIVOT_METHODS = ("kmeans", "subsample")
SLICED_AGGREGATIONS = ("min", "expect", "temp")

MARGINAL_TOL = 1e-6


def cost_matrix(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, (n, m) for (n, d) and (m, d)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ValueError(f"incompatible point arrays {x.shape} and {y.shape}")
    diff = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


@dataclass
class TransportPlan:
    """A coupling between n source and m target points.

    Either a dense (n, m) matrix or, for uniform equal-size batches, a
    permutation vector (source i pairs with target permutation[i]).
    """

    row_marginal: np.ndarray
    col_marginal: np.ndarray
    matrix: np.ndarray | None = None
    permutation: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.row_marginal, dtype=float)
        q = np.asarray(self.col_marginal, dtype=float)
        if p.ndim != 1 or q.ndim != 1:
            raise ValueError("marginals must be vectors")
        if (self.matrix is None) == (self.permutation is None):
            raise ValueError("exactly one of matrix/permutation must be given")
        if self.permutation is not None:
            perm = np.asarray(self.permutation)
            n = p.shape[0]
            if n != q.shape[0]:
                raise ValueError("permutation plan requires equal batch sizes")
            if perm.shape != (n,) or sorted(perm.tolist()) != list(range(n)):
                raise ValueError("permutation is not a permutation of range(n)")
            if np.abs(p - 1.0 / n).max() > MARGINAL_TOL or np.abs(q - 1.0 / n).max() > MARGINAL_TOL:
                raise ValueError("permutation plan requires uniform weights")
            self.permutation = perm.astype(np.int64)
        else:
            mat = np.asarray(self.matrix, dtype=float)
            if mat.shape != (p.shape[0], q.shape[0]):
                raise ValueError(f"plan shape {mat.shape} does not match marginals")
            if mat.min() < -MARGINAL_TOL:
                raise ValueError("plan has negative mass")
            if np.abs(mat.sum(axis=1) - p).sum() > MARGINAL_TOL:
                raise ValueError("row marginal mismatch")
            if np.abs(mat.sum(axis=0) - q).sum() > MARGINAL_TOL:
                raise ValueError("column marginal mismatch")
            self.matrix = mat
        self.row_marginal = p
        self.col_marginal = q

    @property
    def n(self) -> int:
        return self.row_marginal.shape[0]

    @property
    def m(self) -> int:
        return self.col_marginal.shape[0]

    def to_dense(self) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix
        n = self.n
        dense = np.zeros((n, n))
        dense[np.arange(n), self.permutation] = 1.0 / n
        return dense

    def cost(self, C: np.ndarray) -> float:
        """Transport cost <C, plan>."""
        if self.permutation is not None:
            return float(C[np.arange(self.n), self.permutation].sum() / self.n)
        return float((self.matrix * C).sum())

    def marginal_residual(self) -> float:
        """Worst L1 deviation of the realized marginals from the stated ones."""
        dense = self.to_dense()
        return max(
            float(np.abs(dense.sum(axis=1) - self.row_marginal).sum()),
            float(np.abs(dense.sum(axis=0) - self.col_marginal).sum()),
        )

    def save_triplets(self, path) -> None:
        """Dump nonzero entries as 'i,j,mass' rows for debugging/plots."""
        with open(path, "w") as fh:
            fh.write("i,j,mass\n")
            if self.permutation is not None:
                for i, j in enumerate(self.permutation):
                    fh.write(f"{i},{j},{1.0 / self.n!r}\n")
            else:
                for i, j in zip(*np.nonzero(self.matrix)):
                    fh.write(f"{i},{j},{self.matrix[i, j]!r}\n")


@dataclass
class PivotMeasure:
    """Reference measure the linear-OT plans factor through."""

    atoms: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        masses = np.asarray(self.masses, dtype=float)
        if atoms.ndim != 2 or masses.shape != (atoms.shape[0],):
            raise ValueError("atoms must be (r, d) with one mass per atom")
        if masses.min() <= 0.0:
            raise ValueError("pivot masses must be positive")
        if abs(masses.sum() - 1.0) > 1e-9:
            raise ValueError("pivot masses must sum to 1")
        self.atoms = atoms
        self.masses = masses

    @property
    def rank(self) -> int:
        return self.atoms.shape[0]


@dataclass
class CouplingSpec:
    """Which coupling to use and its knobs.

    epsilon <= 0 means "auto": 0.05 x mean(C), chosen per batch.  rank <= 0
    means ceil(sqrt(batch size)).
    """

    kind: str = "exact"
    epsilon: float = 0.0
    sinkhorn_max_iters: int = 1000
    sinkhorn_tol: float = 1e-6
    rank: int = 0
    pivot_method: str = "kmeans"
    num_projections: int = 64
    aggregation: str = "min"
    temperature: float = 1.0

    def __post_init__(self):
        if self.kind not in COUPLING_KINDS:
            raise ValueError(f"unknown coupling kind {self.kind!r}")
        if self.pivot_method not in PIVOT_METHODS:
            raise ValueError(f"unknown pivot method {self.pivot_method!r}")
        if self.aggregation not in SLICED_AGGREGATIONS:
            raise ValueError(f"unknown sliced aggregation {self.aggregation!r}")
        if self.sinkhorn_max_iters < 1 or self.num_projections < 1:
            raise ValueError("iteration/projection counts must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


def _check_weights(C, p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != (C.shape[0],) or q.shape != (C.shape[1],):
        raise ValueError("weight shapes do not match cost matrix")
    if p.min() < 0 or q.min() < 0:
        raise ValueError("weights must be nonnegative")
    if abs(p.sum() - q.sum()) > 1e-9:
        raise ValueError(f"weight sums differ: {p.sum()} vs {q.sum()}")
    return p, q


def solve_exact(C: np.ndarray, p: np.ndarray, q: np.ndarray) -> TransportPlan:
    """Optimal transport plan for the given cost and marginals.

    Uniform equal-size problems go through the assignment solver and come
    back as a permutation; everything else through the network simplex (with
    a successive-shortest-path fallback), giving a vertex plan with at most
    n + m - 1 support entries.
    """
    C = np.asarray(C, dtype=float)
    p, q = _check_weights(C, p, q)
    n, m = C.shape
    if n == m and np.abs(p - 1.0 / n).max() < 1e-12 and np.abs(q - 1.0 / n).max() < 1e-12:
        rows, cols = linear_sum_assignment(C)
        perm = np.empty(n, np.int64)
        perm[rows] = cols
        return TransportPlan(p, q, permutation=perm)
    total = p.sum()
    plan, status = solve_transport_simplex(p / total, q / total, C)
    if status != STATUS_OK:
        plan, status = solve_transport(p / total, q / total, C)
    if status != STATUS_OK:
        raise RuntimeError("transportation solvers failed to converge")
    plan = np.maximum(plan * total, 0.0)
    return TransportPlan(p, q, matrix=plan)


@dataclass
class SinkhornResult:
    plan: TransportPlan
    iterations: int
    residual: float
    converged: bool


def _round_to_marginals(plan, p, q):
    """Project an almost-feasible plan onto the exact marginals.

    Rows and columns are first damped to never exceed their targets, then the
    remaining mass deficit is spread as a rank-one correction.
    """
    row = plan.sum(axis=1)
    plan = plan * np.minimum(1.0, p / np.maximum(row, 1e-300))[:, None]
    col = plan.sum(axis=0)
    plan = plan * np.minimum(1.0, q / np.maximum(col, 1e-300))[None, :]
    err_p = p - plan.sum(axis=1)
    err_q = q - plan.sum(axis=0)
    deficit = err_p.sum()
    if deficit > 0:
        plan = plan + np.outer(err_p, err_q) / deficit
    return plan


def solve_sinkhorn(C, p, q, epsilon, max_iters=1000, tol=1e-6) -> SinkhornResult:
    """Entropic OT via log-domain Sinkhorn iterations.

    Returns the plan diag(a) exp(-C/eps) diag(b) once the L1 marginal
    residual drops below tol, or after max_iters (reported on the result; the
    returned plan is rounded onto the exact marginals in that case).
    """
    C = np.asarray(C, dtype=float)
    p, q = _check_weights(C, p, q)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    logp = np.log(p)
    logq = np.log(q)
    with np.errstate(over="ignore"):
        K = -C / epsilon  # fixed log-kernel; potentials stay in log domain

    def lse_rows(v):  # logsumexp of K + v over columns, per row
        M = K + v[None, :]
        mx = M.max(axis=1)
        return mx + np.log(np.exp(M - mx[:, None]).sum(axis=1))

    def lse_cols(u):
        M = K + u[:, None]
        mx = M.max(axis=0)
        return mx + np.log(np.exp(M - mx[None, :]).sum(axis=0))

    g = np.zeros(C.shape[1])
    f = np.zeros(C.shape[0])
    residual = np.inf
    plan = None
    it = 0
    for it in range(1, max_iters + 1):
        f = epsilon * (logp - lse_rows(g / epsilon))
        g = epsilon * (logq - lse_cols(f / epsilon))
        if not (np.isfinite(f).all() and np.isfinite(g).all()):
            raise ValueError("sinkhorn iteration produced non-finite values; raise epsilon")
        if it % 5 == 0 or it == max_iters:
            plan = np.exp(K + (f[:, None] + g[None, :]) / epsilon)
            residual = max(
                np.abs(plan.sum(axis=1) - p).sum(),
                np.abs(plan.sum(axis=0) - q).sum(),
            )
            if residual < tol:
                break
    if plan is None:
        plan = np.exp(K + (f[:, None] + g[None, :]) / epsilon)
        residual = max(
            np.abs(plan.sum(axis=1) - p).sum(),
            np.abs(plan.sum(axis=0) - q).sum(),
        )
    if residual >= tol:
        plan = _round_to_marginals(plan, p, q)
    return SinkhornResult(
        plan=TransportPlan(p, q, matrix=plan),
        iterations=it,
        residual=float(residual),
        converged=residual < tol,
    )


def build_pivot(source, target, rank, method="kmeans", rng=None) -> PivotMeasure:
    """Pivot measure on the union of both batches.

    kmeans: Lloyd iterations, atoms = cluster centers, masses = cluster
    fractions.  subsample: atoms drawn without replacement, uniform masses.
    """
    union = np.concatenate([np.asarray(source, float), np.asarray(target, float)], axis=0)
    if rank < 1 or rank > union.shape[0]:
        raise ValueError(f"rank {rank} out of range for {union.shape[0]} points")
    if rng is None:
        rng = np.random.default_rng()
    if method == "subsample":
        idx = rng.choice(union.shape[0], size=rank, replace=False)
        return PivotMeasure(union[idx], np.full(rank, 1.0 / rank))
    if method != "kmeans":
        raise ValueError(f"unknown pivot method {method!r}")
    centers = union[rng.choice(union.shape[0], size=rank, replace=False)].copy()
    for _ in range(5):
        d2 = cost_matrix(union, centers)
        assign = d2.argmin(axis=1)
        counts = np.bincount(assign, minlength=rank)
        sums = np.column_stack(
            [np.bincount(assign, weights=union[:, j], minlength=rank)
             for j in range(union.shape[1])]
        )
        alive = counts > 0
        centers[alive] = sums[alive] / counts[alive, None]
        if not alive.all():
            # reseed dead clusters at the point farthest from every center
            centers[~alive] = union[d2.min(axis=1).argmax()]
    assign = cost_matrix(union, centers).argmin(axis=1)
    counts = np.bincount(assign, minlength=rank).astype(float)
    keep = counts > 0
    return PivotMeasure(centers[keep], counts[keep] / counts.sum())


def _pivot_plans(source, target, pivot):
    n = source.shape[0]
    m = target.shape[0]
    g1 = solve_exact(cost_matrix(pivot.atoms, source), pivot.masses, np.full(n, 1.0 / n))
    g2 = solve_exact(cost_matrix(pivot.atoms, target), pivot.masses, np.full(m, 1.0 / m))
    return g1.to_dense(), g2.to_dense()


def solve_lot_lr(source, target, pivot: PivotMeasure) -> TransportPlan:
    """Low-rank linear-OT plan: (g1)^T diag(1/sigma) g2 through the pivot."""
    n = source.shape[0]
    m = target.shape[0]
    g1, g2 = _pivot_plans(source, target, pivot)
    plan = g1.T @ (g2 / pivot.masses[:, None])
    return TransportPlan(np.full(n, 1.0 / n), np.full(m, 1.0 / m), matrix=plan)


def solve_lot_hr(source, target, pivot: PivotMeasure) -> TransportPlan:
    """Hierarchical linear-OT plan: per pivot atom, re-solve OT between the
    two conditional distributions and scale the block by the atom mass.

    Blocks whose supports overlap contribute additively, which keeps the
    global marginals exact.
    """
    n = source.shape[0]
    m = target.shape[0]
    g1, g2 = _pivot_plans(source, target, pivot)
    C = cost_matrix(np.asarray(source, float), np.asarray(target, float))
    plan = np.zeros((n, m))
    for i in range(pivot.rank):
        supp1 = np.nonzero(g1[i] > 0.0)[0]
        supp2 = np.nonzero(g2[i] > 0.0)[0]
        if supp1.size == 0 or supp2.size == 0:
            raise ValueError(f"pivot atom {i} has an empty conditional support")
        w1 = g1[i, supp1]
        w2 = g2[i, supp2]
        mass = w1.sum()
        block = solve_exact(C[np.ix_(supp1, supp2)], w1 / mass, w2 / w2.sum())
        plan[np.ix_(supp1, supp2)] += mass * block.to_dense()
    return TransportPlan(np.full(n, 1.0 / n), np.full(m, 1.0 / m), matrix=plan)


def solve_sliced(source, target, num_projections, aggregation="min", temperature=1.0, rng=None) -> TransportPlan:
    """Coupling from monotone 1D matchings of random projections.

    Each unit direction yields the sort-order permutation plan; aggregation
    picks the cheapest one (min), averages them (expect), or weights them by
    softmax(-temperature * cost) (temp).  Sorting ties break toward the
    lowest index.
    """
    source = np.asarray(source, float)
    target = np.asarray(target, float)
    n = source.shape[0]
    if target.shape[0] != n:
        raise ValueError("sliced coupling requires equal batch sizes")
    if rng is None:
        rng = np.random.default_rng()
    d = source.shape[1]
    thetas = rng.standard_normal((num_projections, d))
    thetas /= np.linalg.norm(thetas, axis=1, keepdims=True)
    C = cost_matrix(source, target)
    uniform = np.full(n, 1.0 / n)

    perms = np.empty((num_projections, n), np.int64)
    costs = np.empty(num_projections)
    rows = np.arange(n)
    for k in range(num_projections):
        src_order = np.argsort(source @ thetas[k], kind="stable")
        tgt_order = np.argsort(target @ thetas[k], kind="stable")
        perm = np.empty(n, np.int64)
        perm[src_order] = tgt_order
        perms[k] = perm
        costs[k] = C[rows, perm].sum() / n

    if aggregation == "min":
        return TransportPlan(uniform, uniform, permutation=perms[costs.argmin()])
    if aggregation == "expect":
        weights = np.full(num_projections, 1.0 / num_projections)
    elif aggregation == "temp":
        logits = -temperature * costs
        logits -= logits.max()
        weights = np.exp(logits)
        weights /= weights.sum()
    else:
        raise ValueError(f"unknown aggregation {aggregation!r}")
    plan = np.zeros((n, n))
    for k in range(num_projections):
        np.add.at(plan, (rows, perms[k]), weights[k] / n)
    return TransportPlan(uniform, uniform, matrix=plan)


def independent_plan(n: int, m: int) -> TransportPlan:
    """The product coupling: every pair weighted p_i * q_j."""
    p = np.full(n, 1.0 / n)
    q = np.full(m, 1.0 / m)
    return TransportPlan(p, q, matrix=np.outer(p, q))


def couple(source, target, spec: CouplingSpec, rng) -> TransportPlan:
    """Build the transport plan for one mini-batch pair per the coupling settings."""
    source = np.asarray(source, float)
    target = np.asarray(target, float)
    n = source.shape[0]
    m = target.shape[0]
    uniform_p = np.full(n, 1.0 / n)
    uniform_q = np.full(m, 1.0 / m)
    if spec.kind == "independent":
        return independent_plan(n, m)
    if spec.kind == "exact":
        return solve_exact(cost_matrix(source, target), uniform_p, uniform_q)
    if spec.kind == "sinkhorn":
        C = cost_matrix(source, target)
        eps = spec.epsilon if spec.epsilon > 0 else 0.05 * C.mean()
        return solve_sinkhorn(C, uniform_p, uniform_q, eps, spec.sinkhorn_max_iters, spec.sinkhorn_tol).plan
    if spec.kind in ("lot_lr", "lot_hr"):
        rank = spec.rank if spec.rank > 0 else int(np.ceil(np.sqrt(n)))
        pivot = build_pivot(source, target, rank, spec.pivot_method, rng)
        solver = solve_lot_lr if spec.kind == "lot_lr" else solve_lot_hr
        return solver(source, target, pivot)
    if spec.kind == "sliced":
        return solve_sliced(source, target, spec.num_projections, spec.aggregation, spec.temperature, rng)
    raise ValueError(f"unknown coupling kind {spec.kind!r}")


def sample_pairs(plan: TransportPlan, k: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Draw one training pair per source point.

    Permutation plans return the deterministic matching; dense plans draw
    target j from the conditional plan[i, :] / row mass for each row i, which
    keeps the empirical source batch intact.  k must equal the source size.
    """
    if k != plan.n:
        raise ValueError(f"requested {k} pairs from a plan over {plan.n} source points")
    src = np.arange(plan.n)
    if plan.permutation is not None:
        return src, plan.permutation.copy()
    row_mass = plan.matrix.sum(axis=1)
    if row_mass.min() <= 0.0:
        raise ValueError("plan has a zero-mass source row")
    cond = np.cumsum(plan.matrix, axis=1)
    cond /= cond[:, -1:]
    u = rng.random(plan.n)
    tgt = (cond < u[:, None]).sum(axis=1)
    return src, tgt.astype(np.int64)
