"""Mixed-binary QP by best-first branch and bound over ADMM relaxations."""

import heapq
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .qp import QuadraticProgram, Solution, solve_qp


@dataclass
class MixedIntegerProgram:
    base: QuadraticProgram
    binary_indices: np.ndarray

    def __post_init__(self):
        self.binary_indices = np.asarray(sorted(set(int(i) for i in np.atleast_1d(self.binary_indices))))
        if self.binary_indices.size:
            if self.binary_indices.min() < 0 or self.binary_indices.max() >= self.base.n:
                raise ValueError("binary index out of range")


def _with_branch_rows(base: QuadraticProgram, binaries) -> QuadraticProgram:
    """Append one identity row per binary so nodes can pin bounds cheaply."""
    nb = binaries.size
    rows = sp.csc_matrix((np.ones(nb), (np.arange(nb), binaries)), shape=(nb, base.n))
    return QuadraticProgram(
        Q=base.Q,
        c=base.c,
        A=sp.vstack([base.A, rows], format="csc"),
        l=np.concatenate([base.l, np.zeros(nb)]),
        u=np.concatenate([base.u, np.ones(nb)]),
    )


def solve_miqp(
    mip: MixedIntegerProgram,
    rel_gap: float = 1e-4,
    node_limit: int = 10000,
    qp_tol: float = 1e-6,
    qp_max_iter: int = 50000,
    int_tol: float = 1e-5,
    initial_assignment=None,
    on_incumbent=None,
) -> Solution:
    """Best-first search, branching on the most fractional binary.

    Node relaxations are ADMM solves; a node is pruned once its bound cannot
    beat the incumbent by more than the relative gap.  ``initial_assignment``
    optionally seeds the incumbent from a caller-supplied 0/1 vector;
    ``on_incumbent`` is called with each improved incumbent objective.
    """
    t0 = time.perf_counter()
    binaries = mip.binary_indices
    nb = binaries.size
    if nb == 0:
        return solve_qp(mip.base, tol=qp_tol, max_iter=qp_max_iter)

    work = _with_branch_rows(mip.base, binaries)
    branch_row0 = mip.base.m

    def solve_node(lo, hi):
        work.l[branch_row0:] = lo
        work.u[branch_row0:] = hi
        return solve_qp(work, tol=qp_tol, max_iter=qp_max_iter)

    def accept_tol(inc_obj):
        return inc_obj - rel_gap * abs(inc_obj)

    incumbent = None  # (objective, x, y)
    node_count = 0
    total_iters = 0

    lo0 = np.zeros(nb)
    hi0 = np.ones(nb)
    root = solve_node(lo0, hi0)
    node_count += 1
    total_iters += root.iterations
    if root.status == "infeasible":
        return Solution(root.x, np.nan, "infeasible", total_iters, time.perf_counter() - t0, node_count=node_count)

    def try_incumbent(sol):
        nonlocal incumbent
        if sol.status == "infeasible":
            return
        if incumbent is None or sol.objective < incumbent[0]:
            incumbent = (sol.objective, sol.x.copy(), sol.y.copy() if sol.y is not None else None)
            if on_incumbent is not None:
                on_incumbent(incumbent[0])

    def fractionality(sol):
        xb = sol.x[binaries]
        return np.abs(xb - np.round(xb))

    def assignment_probe(bits):
        nonlocal node_count, total_iters
        bits = np.clip(np.round(np.asarray(bits, dtype=float)), 0.0, 1.0)
        sol = solve_node(bits, bits)
        node_count += 1
        total_iters += sol.iterations
        if sol.status == "optimal":
            try_incumbent(sol)

    if fractionality(root).max() <= int_tol:
        try_incumbent(root)
        obj, x, y = incumbent
        return Solution(x, obj, "optimal", total_iters, time.perf_counter() - t0, y, node_count, 0.0)

    # heuristic incumbents: caller-supplied pattern, then rounded root relaxation
    if initial_assignment is not None:
        assignment_probe(initial_assignment)
    assignment_probe(root.x[binaries])

    counter = 0
    heap = [(root.objective, counter, root, lo0, hi0)]
    best_outstanding = root.objective
    status = "optimal"
    while heap:
        bound, _, sol, lo, hi = heapq.heappop(heap)
        best_outstanding = bound
        if incumbent is not None and bound >= accept_tol(incumbent[0]):
            # best-first order: every remaining node is at least as bad
            break
        if node_count >= node_limit:
            status = "max_iter"
            break
        frac = fractionality(sol)
        free = (hi - lo) > 0.5
        # most fractional first; argmax takes the lowest index on ties
        j = int(np.argmax(np.where(free, frac, -np.inf)))
        for bit in (0.0, 1.0):
            lo_c, hi_c = lo.copy(), hi.copy()
            lo_c[j] = hi_c[j] = bit
            child = solve_node(lo_c, hi_c)
            node_count += 1
            total_iters += child.iterations
            if child.status == "infeasible":
                continue
            if incumbent is not None and child.objective >= accept_tol(incumbent[0]):
                continue
            if fractionality(child).max() <= int_tol:
                try_incumbent(child)
            else:
                counter += 1
                heapq.heappush(heap, (child.objective, counter, child, lo_c, hi_c))
        if not heap:
            best_outstanding = incumbent[0] if incumbent is not None else np.inf

    if incumbent is None:
        # exhausted tree with no feasible assignment vs. search cut short
        final = "infeasible" if not heap and status == "optimal" else "max_iter"
        return Solution(root.x, np.nan, final, total_iters, time.perf_counter() - t0, node_count=node_count)
    obj, x, y = incumbent
    if not heap and status == "optimal":
        gap = 0.0
    else:
        gap = max(0.0, (obj - best_outstanding) / max(1e-10, abs(obj)))
    return Solution(x, obj, status, total_iters, time.perf_counter() - t0, y, node_count, gap)
