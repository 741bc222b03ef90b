"""Builders mapping the dispatch use-cases onto solver problems.

Four routes share one decision-vector convention: per-unit charge/discharge
powers, the SoC path, and (for the network-based routes) one auxiliary block
per surrogate layer and step.  The SoC update adds the charge surrogate
output and subtracts the discharge surrogate output; the discharge net is
trained on the nonnegative drawn-energy curve, so the minus sign is what
makes discharging reduce the stored energy.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .battery import (
    BatteryParams,
    DispatchSchedule,
    Trajectory,
    net_pv_power,
    revenue,
    simulate_plant,
    smoothing_mse,
)
from .icnn import Icnn
from .miqp import MixedIntegerProgram
from .nlp import NlpProblem, NlpResult
from .qp import QuadraticProgram, Solution, solve_qp

PV_SMOOTHING = "pv_smoothing"
REVENUE_MAX = "revenue_max"


@dataclass(frozen=True)
class UseCase:
    """A dispatch scenario: objective kind, driving series, horizon, initial SoC.

    PV smoothing needs K+1 forecast samples (the trailing one anchors the
    final ramp term); revenue needs K prices.
    """

    kind: str
    data: np.ndarray
    horizon: int
    e0: float

    def __post_init__(self):
        object.__setattr__(self, "data", np.asarray(self.data, dtype=float))
        if self.kind not in (PV_SMOOTHING, REVENUE_MAX):
            raise ValueError(f"unknown use-case kind {self.kind!r}")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        need = self.horizon + 1 if self.kind == PV_SMOOTHING else self.horizon
        if self.data.size < need:
            raise ValueError(f"{self.kind} needs at least {need} data samples, got {self.data.size}")

    @property
    def pv(self):
        return self.data[: self.horizon + 1]

    @property
    def lmp(self):
        return self.data[: self.horizon]


def _cum(widths):
    return np.concatenate([[0], np.cumsum(widths)]).astype(int)


class VariableLayout:
    """Flat index map for the solver vector of one formulation."""

    def __init__(self, kind, horizon, charge_widths=None, discharge_widths=None):
        self.kind = kind
        self.horizon = int(horizon)
        K = self.horizon
        self.charge_widths = list(charge_widths) if charge_widths else None
        self.discharge_widths = list(discharge_widths) if discharge_widths else None
        self._pc0 = 0
        self._pd0 = K
        self._e0 = 2 * K
        n = 3 * K + 1
        if kind in ("relaxed", "bigm"):
            self._cumc = _cum(self.charge_widths)
            self._cumd = _cum(self.discharge_widths)
            self.Hc = int(self._cumc[-1])
            self.Hd = int(self._cumd[-1])
            self._zc0 = n
            self._zd0 = self._zc0 + K * self.Hc
            n = self._zd0 + K * self.Hd
            if kind == "bigm":
                self._yc0 = n
                self._yd0 = self._yc0 + K * self.Hc
                self._w0 = self._yd0 + K * self.Hd
                n = self._w0 + K
        self.n_vars = n
        # filled in by the builders
        self.pc_box_rows = None
        self.pd_box_rows = None

    def pc(self, k):
        return self._pc0 + k

    def pd(self, k):
        return self._pd0 + k

    def e(self, k):
        return self._e0 + k

    def z(self, side, k, layer, j):
        base, cum, H = (self._zc0, self._cumc, self.Hc) if side == "c" else (self._zd0, self._cumd, self.Hd)
        return base + k * H + cum[layer] + j

    def y(self, side, k, layer, j):
        base, cum, H = (self._yc0, self._cumc, self.Hc) if side == "c" else (self._yd0, self._cumd, self.Hd)
        return base + k * H + cum[layer] + j

    def w(self, k):
        return self._w0 + k

    @property
    def pc_slice(self):
        return slice(self._pc0, self._pc0 + self.horizon)

    @property
    def pd_slice(self):
        return slice(self._pd0, self._pd0 + self.horizon)

    @property
    def e_slice(self):
        return slice(self._e0, self._e0 + self.horizon + 1)

    def z_matrix(self, x, side):
        """Auxiliary block as a (K, H) array of solved layer outputs."""
        base, H = (self._zc0, self.Hc) if side == "c" else (self._zd0, self.Hd)
        return x[base : base + self.horizon * H].reshape(self.horizon, H)

    def z_layer(self, zmat, side, layer):
        cum = self._cumc if side == "c" else self._cumd
        return zmat[:, cum[layer] : cum[layer + 1]]

    def binary_indices(self):
        if self.kind != "bigm":
            return np.zeros(0, dtype=int)
        K = self.horizon
        return np.arange(self._yc0, self._w0 + K)

    def describe(self, idx):
        """Name for a flat index, e.g. ('p_c', 3) or ('z_c', k, layer, j)."""
        K = self.horizon
        if idx < 0 or idx >= self.n_vars:
            raise IndexError(idx)
        if idx < self._pd0:
            return ("p_c", idx - self._pc0)
        if idx < self._e0:
            return ("p_d", idx - self._pd0)
        if idx <= self._e0 + K:
            return ("e", idx - self._e0)
        for name, base, cum, H in self._blocks():
            if base <= idx < base + K * H:
                off = idx - base
                k, r = divmod(off, H)
                layer = int(np.searchsorted(cum, r, side="right") - 1)
                return (name, k, layer, r - cum[layer])
        return ("w", idx - self._w0)

    def _blocks(self):
        blocks = []
        if self.kind in ("relaxed", "bigm"):
            blocks = [("z_c", self._zc0, self._cumc, self.Hc), ("z_d", self._zd0, self._cumd, self.Hd)]
            if self.kind == "bigm":
                blocks += [("y_c", self._yc0, self._cumc, self.Hc), ("y_d", self._yd0, self._cumd, self.Hd)]
        return blocks

    def index(self, tag):
        name = tag[0]
        if name == "p_c":
            return self.pc(tag[1])
        if name == "p_d":
            return self.pd(tag[1])
        if name == "e":
            return self.e(tag[1])
        if name in ("z_c", "z_d"):
            return self.z(name[-1], *tag[1:])
        if name in ("y_c", "y_d"):
            return self.y(name[-1], *tag[1:])
        if name == "w":
            return self.w(tag[1])
        raise KeyError(name)


class _RowBuilder:
    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []
        self.lo, self.hi = [], []

    def add(self, cols, vals, lo, hi):
        r = len(self.lo)
        self.rows.extend([r] * len(cols))
        self.cols.extend(cols)
        self.vals.extend(vals)
        self.lo.append(lo)
        self.hi.append(hi)
        return r

    def build(self, n):
        m = len(self.lo)
        A = sp.csc_matrix((self.vals, (self.rows, self.cols)), shape=(m, n))
        return A, np.asarray(self.lo, dtype=float), np.asarray(self.hi, dtype=float)


def usecase_objective(usecase: UseCase, params: BatteryParams, p_c, p_d):
    """Minimization-form objective value: ramp sum (kW^2) or negated revenue ($).

    Batched over leading axes of the schedules.
    """
    pc = np.asarray(p_c, dtype=float)
    pd = np.asarray(p_d, dtype=float)
    K = usecase.horizon
    if usecase.kind == PV_SMOOTHING:
        net = np.broadcast_to(usecase.pv, pc.shape[:-1] + (K + 1,)).copy()
        net[..., :K] += params.p_max_kw * (pd - pc)
        return np.sum(np.diff(net, axis=-1) ** 2, axis=-1)
    flow = params.p_max_kw * (pd - pc)
    return -np.sum(usecase.lmp * flow, axis=-1) * params.dt_hours


def usecase_metric(usecase: UseCase, params: BatteryParams, p_c, p_d) -> float:
    """Reporting metric: smoothing MSE in kW^2, or revenue in dollars."""
    if usecase.kind == PV_SMOOTHING:
        net = net_pv_power(usecase.pv, p_c, p_d, params)
        return smoothing_mse(net, usecase.pv)
    return revenue(DispatchSchedule(p_c, p_d), usecase.lmp, params)


def _objective_terms(usecase, params, layout):
    """Quadratic/linear objective coefficients on the layout's vector."""
    K = usecase.horizon
    n = layout.n_vars
    c = np.zeros(n)
    if usecase.kind == REVENUE_MAX:
        scale = params.p_max_kw * params.dt_hours
        for k in range(K):
            c[layout.pc(k)] += usecase.lmp[k] * scale
            c[layout.pd(k)] -= usecase.lmp[k] * scale
        Q = sp.csc_matrix((n, n))
        return Q, c
    # ramp objective |G x + h|^2 with h the PV forecast differences
    pv = usecase.pv
    rows, cols, vals = [], [], []
    h = np.diff(pv)
    P = params.p_max_kw
    for k in range(K):
        rows += [k, k]
        cols += [layout.pc(k), layout.pd(k)]
        vals += [P, -P]
        if k + 1 < K:
            rows += [k, k]
            cols += [layout.pc(k + 1), layout.pd(k + 1)]
            vals += [-P, P]
    G = sp.csc_matrix((vals, (rows, cols)), shape=(K, n))
    Q = 2.0 * (G.T @ G)
    c = 2.0 * (G.T @ h)
    return Q.tocsc(), c


def _common_rows(rows, layout, usecase, params, cutting_plane):
    """Initial SoC, SoC box, power boxes, and optionally the shared-flow cut."""
    K = usecase.horizon
    if not (params.e_min <= usecase.e0 <= params.e_max):
        raise ValueError(f"initial SoC {usecase.e0} outside [{params.e_min}, {params.e_max}]")
    rows.add([layout.e(0)], [1.0], usecase.e0, usecase.e0)
    for k in range(K + 1):
        rows.add([layout.e(k)], [1.0], params.e_min, params.e_max)
    layout.pc_box_rows = np.array([rows.add([layout.pc(k)], [1.0], 0.0, 1.0) for k in range(K)])
    layout.pd_box_rows = np.array([rows.add([layout.pd(k)], [1.0], 0.0, 1.0) for k in range(K)])
    if cutting_plane:
        for k in range(K):
            rows.add([layout.pc(k), layout.pd(k)], [1.0, 1.0], -np.inf, 1.0)


def build_linear(usecase: UseCase, params: BatteryParams, eta_c_const=None, eta_d_const=None):
    """Constant-efficiency convex model with the shared-flow cutting plane."""
    eta_c = params.eta_c_max if eta_c_const is None else float(eta_c_const)
    eta_d = params.eta_d_max if eta_d_const is None else float(eta_d_const)
    if not (0.0 < eta_c <= 1.0 and 0.0 < eta_d <= 1.0):
        raise ValueError("constant efficiencies must lie in (0, 1]")
    K = usecase.horizon
    layout = VariableLayout("linear", K)
    rows = _RowBuilder()
    _common_rows(rows, layout, usecase, params, cutting_plane=True)
    g = params.soc_per_unit_step
    for k in range(K):
        rows.add(
            [layout.e(k + 1), layout.e(k), layout.pc(k), layout.pd(k)],
            [1.0, -1.0, -g * eta_c, g / eta_d],
            0.0,
            0.0,
        )
    A, lo, hi = rows.build(layout.n_vars)
    Q, c = _objective_terms(usecase, params, layout)
    return QuadraticProgram(Q, c, A, lo, hi), layout


def _epigraph_rows(rows, layout, net, side, k, p_idx, extra=None):
    """Add z >= W z_prev + D p + b rows for every layer of one step.

    ``extra`` optionally appends per-neuron coefficient/bound tweaks used by
    the big-M route; returns nothing.
    """
    for i, lyr in enumerate(net.layers):
        h, prev = lyr.w.shape
        for j in range(h):
            cols = [layout.z(side, k, i, j)]
            vals = [1.0]
            if i == 0:
                cols.append(p_idx)
                vals.append(-float(lyr.w[j, 0]))
            else:
                for mcol in range(prev):
                    wv = float(lyr.w[j, mcol])
                    if wv != 0.0:
                        cols.append(layout.z(side, k, i - 1, mcol))
                        vals.append(-wv)
                dv = float(lyr.d[j, 0])
                if dv != 0.0:
                    cols.append(p_idx)
                    vals.append(-dv)
            rows.add(cols, vals, float(lyr.b[j]), np.inf)
            if extra is not None:
                extra(side, k, i, j, cols, vals, float(lyr.b[j]))


def build_relaxed_icnn(usecase: UseCase, params: BatteryParams, f_net: Icnn, g_net: Icnn, lam: float):
    """Epigraph relaxation of the surrogate dynamics, tightened by a linear
    penalty ``lam`` on every auxiliary variable."""
    if lam < 0.0:
        raise ValueError("penalty weight must be nonnegative")
    f_net.validate()
    g_net.validate()
    K = usecase.horizon
    layout = VariableLayout("relaxed", K, f_net.widths, g_net.widths)
    rows = _RowBuilder()
    _common_rows(rows, layout, usecase, params, cutting_plane=True)
    g = params.soc_per_unit_step
    Nc, Nd = len(f_net.widths) - 1, len(g_net.widths) - 1
    for k in range(K):
        rows.add(
            [layout.e(k + 1), layout.e(k), layout.z("c", k, Nc, 0), layout.z("d", k, Nd, 0)],
            [1.0, -1.0, -g, g],
            0.0,
            0.0,
        )
        _epigraph_rows(rows, layout, f_net, "c", k, layout.pc(k))
        _epigraph_rows(rows, layout, g_net, "d", k, layout.pd(k))
        for side, H in (("c", layout.Hc), ("d", layout.Hd)):
            for i, w in enumerate(layout.charge_widths if side == "c" else layout.discharge_widths):
                for j in range(w):
                    rows.add([layout.z(side, k, i, j)], [1.0], 0.0, np.inf)
    A, lo, hi = rows.build(layout.n_vars)
    Q, c = _objective_terms(usecase, params, layout)
    zc0 = layout.z("c", 0, 0, 0)
    c[zc0:] += lam  # every z of both surrogates, all layers and steps
    return QuadraticProgram(Q, c, A, lo, hi), layout


def build_bigm_icnn(usecase: UseCase, params: BatteryParams, f_net: Icnn, g_net: Icnn, big_m: float = 4.0):
    """Exact mixed-binary surrogate dynamics via the four-row big-M encoding
    per neuron plus per-step complementarity selectors."""
    if big_m <= 0.0:
        raise ValueError("big-M constant must be positive")
    f_net.validate()
    g_net.validate()
    K = usecase.horizon
    layout = VariableLayout("bigm", K, f_net.widths, g_net.widths)
    rows = _RowBuilder()
    _common_rows(rows, layout, usecase, params, cutting_plane=False)
    g = params.soc_per_unit_step
    Nc, Nd = len(f_net.widths) - 1, len(g_net.widths) - 1

    def bigm_extra(side, k, i, j, cols, vals, b):
        yi = layout.y(side, k, i, j)
        # F <= M (1 - y)
        rows.add([layout.z(side, k, i, j), yi], [1.0, big_m], -np.inf, big_m)
        # F <= W z_prev + D p + b + M y: reuse the epigraph coefficients
        rows.add(cols + [yi], vals + [-big_m], -np.inf, b)

    for k in range(K):
        rows.add(
            [layout.e(k + 1), layout.e(k), layout.z("c", k, Nc, 0), layout.z("d", k, Nd, 0)],
            [1.0, -1.0, -g, g],
            0.0,
            0.0,
        )
        _epigraph_rows(rows, layout, f_net, "c", k, layout.pc(k), extra=bigm_extra)
        _epigraph_rows(rows, layout, g_net, "d", k, layout.pd(k), extra=bigm_extra)
        for side in ("c", "d"):
            widths = layout.charge_widths if side == "c" else layout.discharge_widths
            for i, w in enumerate(widths):
                for j in range(w):
                    rows.add([layout.z(side, k, i, j)], [1.0], 0.0, np.inf)
                    rows.add([layout.y(side, k, i, j)], [1.0], 0.0, 1.0)
        # complementarity selectors: w = 1 allows charging, w = 0 allows discharging
        rows.add([layout.w(k)], [1.0], 0.0, 1.0)
        rows.add([layout.pc(k), layout.w(k)], [1.0, -1.0], -np.inf, 0.0)
        rows.add([layout.pd(k), layout.w(k)], [1.0, 1.0], -np.inf, 1.0)
    A, lo, hi = rows.build(layout.n_vars)
    Q, c = _objective_terms(usecase, params, layout)
    base = QuadraticProgram(Q, c, A, lo, hi)
    return MixedIntegerProgram(base, layout.binary_indices()), layout


def build_nlp(usecase: UseCase, params: BatteryParams, rho_bound: float = 1e3, rho_comp: float = 1e3) -> NlpProblem:
    """Package the use-case objective over the true plant curves for the
    penalized multi-start solver."""

    def objective(p_c, p_d):
        return usecase_objective(usecase, params, p_c, p_d)

    return NlpProblem(
        objective=objective,
        horizon=usecase.horizon,
        params=params,
        e0=usecase.e0,
        rho_bound=rho_bound,
        rho_comp=rho_comp,
    )


def _layer_deviations(x, layout, f_net, g_net):
    """Per-layer slack z_i - relu(W z_{i-1} + D p + b) using solved inputs."""
    out = []
    for net, side, p_slice in ((f_net, "c", layout.pc_slice), (g_net, "d", layout.pd_slice)):
        p = x[p_slice]
        zmat = layout.z_matrix(x, side)
        prev = p[None, :]
        for i, lyr in enumerate(net.layers):
            a = lyr.w @ prev + lyr.d @ p[None, :] + lyr.b[:, None]
            z_i = layout.z_layer(zmat, side, i).T
            out.append(z_i - np.maximum(0.0, a))
            prev = z_i
    return out


def feasibility_gap(solution: Solution, layout: VariableLayout, f_net: Icnn, g_net: Icnn) -> float:
    """Aggregated slack between auxiliary variables and their forward-pass
    values, summed over both surrogates, all layers and steps."""
    devs = _layer_deviations(solution.x, layout, f_net, g_net)
    return float(sum(d.sum() for d in devs))


def bigm_activation_audit(solution: Solution, layout: VariableLayout, f_net: Icnn, g_net: Icnn, tol: float = 1e-6) -> float:
    """Largest |F - relu(.)| mismatch at a MIQP solution; warns when it
    exceeds ``tol``, which signals a too-small big-M constant."""
    devs = _layer_deviations(solution.x, layout, f_net, g_net)
    worst = max(float(np.abs(d).max()) for d in devs)
    if worst > tol:
        warnings.warn(f"big-M audit: ReLU mismatch {worst:.3e} exceeds {tol:.1e}; M may be too small", RuntimeWarning)
    return worst


@dataclass
class DispatchResult:
    """A solved schedule with its model-predicted and plant-realized outcomes."""

    schedule: DispatchSchedule
    predicted_soc: np.ndarray
    actual: Trajectory
    predicted_metric: float
    actual_metric: float
    feasibility_gap: float = None
    status: str = "optimal"
    degraded: bool = False


def extract_result(
    solution: Solution,
    layout: VariableLayout,
    usecase: UseCase,
    params: BatteryParams,
    f_net: Icnn = None,
    g_net: Icnn = None,
) -> DispatchResult:
    """Read the schedule off the solver vector and evaluate it both ways:
    under the formulation's own model and under the saturating plant."""
    x = solution.x
    pc = np.clip(x[layout.pc_slice], 0.0, 1.0)
    pd = np.clip(x[layout.pd_slice], 0.0, 1.0)
    schedule = DispatchSchedule(pc, pd)
    gap = None
    if layout.kind == "relaxed" and f_net is not None and g_net is not None:
        gap = feasibility_gap(solution, layout, f_net, g_net)
    actual = simulate_plant(schedule, usecase.e0, params)
    return DispatchResult(
        schedule=schedule,
        predicted_soc=x[layout.e_slice].copy(),
        actual=actual,
        predicted_metric=usecase_metric(usecase, params, pc, pd),
        actual_metric=usecase_metric(usecase, params, actual.realized_p_c, actual.realized_p_d),
        feasibility_gap=gap,
        status=solution.status,
    )


def result_from_nlp(res: NlpResult, usecase: UseCase, params: BatteryParams) -> DispatchResult:
    """Assemble a DispatchResult for the nonlinear route, whose predicted
    trajectory is the forward simulation of the true curves."""
    from .battery import soc_series

    sched = res.schedule
    actual = simulate_plant(sched, usecase.e0, params)
    return DispatchResult(
        schedule=sched,
        predicted_soc=soc_series(sched.p_c, sched.p_d, usecase.e0, params),
        actual=actual,
        predicted_metric=usecase_metric(usecase, params, sched.p_c, sched.p_d),
        actual_metric=usecase_metric(usecase, params, actual.realized_p_c, actual.realized_p_d),
        status="optimal",
    )


def two_stage_linear_solve(
    usecase: UseCase,
    params: BatteryParams,
    alpha: float = 1e-3,
    eta_c_const=None,
    eta_d_const=None,
    tol: float = 1e-6,
    max_iter: int = 50000,
) -> DispatchResult:
    """Stage 1 solves the relaxed linear model; stage 2 re-solves with the
    discharge (charge) power pinned to zero wherever the stage-1 net flow
    exceeds +alpha (-alpha), enforcing complementarity at those steps."""
    if alpha < 0.0:
        raise ValueError("alpha must be nonnegative")
    qp1, layout = build_linear(usecase, params, eta_c_const, eta_d_const)
    s1 = solve_qp(qp1, tol=tol, max_iter=max_iter)
    if s1.status == "infeasible":
        raise ValueError("stage-1 linear model infeasible")
    p_net = s1.x[layout.pc_slice] - s1.x[layout.pd_slice]
    qp2, layout2 = build_linear(usecase, params, eta_c_const, eta_d_const)
    qp2.u[layout2.pd_box_rows[p_net >= alpha]] = 0.0
    qp2.u[layout2.pc_box_rows[p_net <= -alpha]] = 0.0
    s2 = solve_qp(qp2, tol=tol, max_iter=max_iter)
    if s2.status == "infeasible":
        out = extract_result(s1, layout, usecase, params)
        out.degraded = True
        return out
    return extract_result(s2, layout2, usecase, params)
