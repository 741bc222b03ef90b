"""Penalized projected-gradient solver for the nonconvex dispatch problem.

SoC bounds and the no-simultaneous-flow condition are folded into the
objective as squared penalties; the SoC path comes from single-shooting
forward simulation of the nonlinear plant curves.  Gradients are central
finite differences, so the objective callable must accept batched (..., K)
schedules.
"""

from dataclasses import dataclass

import numpy as np

from .battery import BatteryParams, DispatchSchedule, soc_series


class SolverError(RuntimeError):
    """Raised when no start produces a finite objective."""


@dataclass
class NlpProblem:
    objective: object  # callable (p_c, p_d) -> value, batched over leading axes
    horizon: int
    params: BatteryParams
    e0: float
    rho_bound: float = 1e3
    rho_comp: float = 1e3

    def __post_init__(self):
        if self.rho_bound <= 0.0 or self.rho_comp <= 0.0:
            raise ValueError("penalty weights must be positive")

    def penalized(self, p_c, p_d):
        """Objective plus SoC-bound and complementarity penalties (batched)."""
        e = soc_series(p_c, p_d, self.e0, self.params)
        over = np.maximum(e - self.params.e_max, 0.0)
        under = np.maximum(self.params.e_min - e, 0.0)
        bound_pen = np.sum(over**2 + under**2, axis=-1)
        comp_pen = np.sum((np.asarray(p_c) * np.asarray(p_d)) ** 2, axis=-1)
        return self.objective(p_c, p_d) + self.rho_bound * bound_pen + self.rho_comp * comp_pen

    def violations(self, p_c, p_d):
        e = soc_series(p_c, p_d, self.e0, self.params)
        over = np.maximum(e - self.params.e_max, 0.0)
        under = np.maximum(self.params.e_min - e, 0.0)
        return float(np.sum(over**2 + under**2)), float(np.sum((p_c * p_d) ** 2))


@dataclass
class NlpResult:
    schedule: DispatchSchedule
    objective: float  # raw use-case objective at the returned schedule
    penalized: float
    bound_violation: float
    comp_violation: float
    starts: int
    iterations: int


def _split(x, K):
    return x[..., :K], x[..., K:]


def _penalized_flat(nlp, X):
    pc, pd = _split(X, nlp.horizon)
    return nlp.penalized(pc, pd)


def _fd_gradient(nlp, x, step):
    """Central differences with perturbed points clipped into the box."""
    n = x.size
    X = np.repeat(x[None, :], 2 * n, axis=0)
    idx = np.arange(n)
    X[idx, idx] += step
    X[n + idx, idx] -= step
    np.clip(X, 0.0, 1.0, out=X)
    vals = _penalized_flat(nlp, X)
    denom = X[idx, idx] - X[n + idx, idx]
    denom = np.where(denom == 0.0, 1.0, denom)
    return (vals[:n] - vals[n:]) / denom


def _projected_descent(nlp, x0, max_iters, fd_step):
    x = np.clip(x0, 0.0, 1.0)
    fx = float(_penalized_flat(nlp, x[None, :])[0])
    t = 1.0
    for _ in range(max_iters):
        g = _fd_gradient(nlp, x, fd_step)
        moved = False
        for _ in range(40):
            xn = np.clip(x - t * g, 0.0, 1.0)
            dx = x - xn
            if not dx.any():
                break
            fn = float(_penalized_flat(nlp, xn[None, :])[0])
            if fn <= fx - 1e-4 * float(g @ dx):
                x, fx = xn, fn
                t = min(t * 2.0, 1e4)
                moved = True
                break
            t *= 0.5
            if t < 1e-14:
                break
        if not moved:
            break
    return x, fx


def solve_nlp_multistart(
    nlp: NlpProblem,
    n_starts: int = 10,
    seed: int = 0,
    max_iters: int = 2000,
    fd_step: float = 1e-6,
) -> NlpResult:
    """Run projected gradient descent from seeded random points plus all-zeros,
    returning the best final iterate by penalized objective."""
    if n_starts < 1:
        raise ValueError("need at least one start")
    K = nlp.horizon
    rng = np.random.default_rng(seed)
    starts = [np.zeros(2 * K)]
    starts += [rng.uniform(0.0, 1.0, size=2 * K) for _ in range(n_starts)]
    best = None
    for x0 in starts:
        x, fx = _projected_descent(nlp, x0, max_iters, fd_step)
        if np.isfinite(fx) and (best is None or fx < best[1]):
            best = (x, fx)
    if best is None:
        raise SolverError("all starts produced non-finite objectives")
    x, fx = best
    pc, pd = _split(x, K)
    bound_v, comp_v = nlp.violations(pc, pd)
    return NlpResult(
        schedule=DispatchSchedule(pc, pd),
        objective=float(nlp.objective(pc, pd)),
        penalized=fx,
        bound_violation=bound_v,
        comp_violation=comp_v,
        starts=len(starts),
        iterations=max_iters,
    )
