"""Experiment orchestration: configs, method runs, reports, and the penalty sweep."""

import csv
import json
import sys
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .battery import BatteryParams
from .formulations import (
    PV_SMOOTHING,
    REVENUE_MAX,
    UseCase,
    bigm_activation_audit,
    build_bigm_icnn,
    build_linear,
    build_nlp,
    build_relaxed_icnn,
    extract_result,
    result_from_nlp,
    two_stage_linear_solve,
)
from .icnn import TrainHyper, adam_train, generate_training_data, load_icnn
from .miqp import solve_miqp
from .nlp import solve_nlp_multistart
from .qp import solve_qp
from .timeseries import load_timeseries_csv, synth_lmp, synth_pv

METHODS = ("nlp", "linear", "relaxed_icnn", "bigm_icnn")
DEFAULT_LAMBDA = {PV_SMOOTHING: 1.6e-3, REVENUE_MAX: 4.3e-3}


@dataclass
class RunConfig:
    """One scenario: use-case, data source, battery, and method knobs."""

    use_case: str = REVENUE_MAX
    methods: tuple = METHODS
    seed: int = 42
    horizon: int = 192
    e0: float = 0.5
    data_csv: str = None
    pv_peak_kw: float = 50.0
    battery: BatteryParams = field(default_factory=BatteryParams)
    lam: float = None  # None -> per-use-case default
    big_m: float = 4.0
    alpha: float = 1e-3
    qp_tol: float = 1e-6
    qp_max_iter: int = 50000
    mip_rel_gap: float = 1e-4
    mip_node_limit: int = 20000
    n_starts: int = 10
    nlp_iters: int = 2000
    charge_model: str = None
    discharge_model: str = None
    train_points: int = 256
    train_epochs: int = 20000
    icnn_widths: tuple = (8, 8, 1)
    out_dir: str = "."

    def __post_init__(self):
        if self.use_case not in (PV_SMOOTHING, REVENUE_MAX):
            raise ValueError(f"unknown use_case {self.use_case!r}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}")
        self.methods = tuple(self.methods)

    @property
    def lam_value(self):
        return DEFAULT_LAMBDA[self.use_case] if self.lam is None else self.lam


def load_config(path) -> RunConfig:
    """Read a TOML config; keys mirror RunConfig, battery fields nested
    under [battery]."""
    if sys.version_info >= (3, 11):
        import tomllib as toml
    else:
        import tomli as toml
    with open(path, "rb") as fh:
        doc = toml.load(fh)
    return config_from_dict(doc)


def config_from_dict(doc: dict) -> RunConfig:
    doc = dict(doc)
    battery = BatteryParams(**doc.pop("battery", {}))
    if "methods" in doc:
        doc["methods"] = tuple(doc["methods"])
    if doc.get("data_csv") and "synthetic" in doc:
        raise ValueError("config must give exactly one data source (data_csv or synthetic)")
    synth = doc.pop("synthetic", {})
    for key in ("seed", "horizon", "pv_peak_kw"):
        if key in synth:
            doc[key] = synth[key]
    known = {f for f in RunConfig.__dataclass_fields__}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(battery=battery, **doc)


def make_usecase(config: RunConfig) -> UseCase:
    if config.data_csv:
        data = load_timeseries_csv(config.data_csv)
    elif config.use_case == PV_SMOOTHING:
        data = synth_pv(config.seed, config.horizon, config.pv_peak_kw)
    else:
        data = synth_lmp(config.seed, config.horizon, config.battery.dt_hours)
    return UseCase(kind=config.use_case, data=data, horizon=config.horizon, e0=config.e0)


def surrogates(config: RunConfig):
    """Load or train the charge/discharge surrogate pair."""
    if config.charge_model and config.discharge_model:
        return load_icnn(config.charge_model), load_icnn(config.discharge_model)
    nets = []
    for offset, side in ((101, "charge"), (202, "discharge")):
        data = generate_training_data(config.battery, side, config.train_points)
        hyper = TrainHyper(epochs=config.train_epochs, seed=config.seed + offset)
        nets.append(adam_train(data, list(config.icnn_widths), hyper))
    return tuple(nets)


@dataclass
class ReportRow:
    method: str
    solver_time_s: float
    predicted: float
    actual: float
    gap: float = None
    status: str = "optimal"
    iterations: int = None
    node_count: int = None


@dataclass
class ExperimentReport:
    rows: list
    scenario: dict

    def row(self, method: str) -> ReportRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def payload(self) -> dict:
        """Deterministic portion of the report (no wall times)."""
        rows = []
        for r in self.rows:
            d = asdict(r)
            d.pop("solver_time_s")
            rows.append(d)
        return {"scenario": self.scenario, "rows": rows}

    def payload_bytes(self) -> bytes:
        return json.dumps(self.payload(), sort_keys=True).encode()

    def write_json(self, path):
        doc = {
            "payload": self.payload(),
            "timing": {
                "solver_time_s": {r.method: r.solver_time_s for r in self.rows},
                "created_unix": time.time(),
            },
        }
        Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["method", "solver_time_s", "predicted", "actual", "gap", "status"])
            for r in self.rows:
                gap = "" if r.gap is None else repr(float(r.gap))
                writer.writerow([r.method, repr(float(r.solver_time_s)), repr(float(r.predicted)), repr(float(r.actual)), gap, r.status])


def run_method(method: str, config: RunConfig, usecase: UseCase, nets=None):
    """Build and solve one formulation; returns (ReportRow, DispatchResult)."""
    params = config.battery
    if method == "nlp":
        problem = build_nlp(usecase, params)
        t0 = time.perf_counter()
        res = solve_nlp_multistart(problem, n_starts=config.n_starts, seed=config.seed, max_iters=config.nlp_iters)
        dt = time.perf_counter() - t0
        out = result_from_nlp(res, usecase, params)
        row = ReportRow(method, dt, out.predicted_metric, out.actual_metric, status="optimal")
        return row, out
    if method == "linear":
        t0 = time.perf_counter()
        out = two_stage_linear_solve(usecase, params, alpha=config.alpha, tol=config.qp_tol, max_iter=config.qp_max_iter)
        dt = time.perf_counter() - t0
        row = ReportRow(method, dt, out.predicted_metric, out.actual_metric, status=out.status)
        return row, out
    f_net, g_net = nets
    if method == "relaxed_icnn":
        qp, layout = build_relaxed_icnn(usecase, params, f_net, g_net, config.lam_value)
        t0 = time.perf_counter()
        sol = solve_qp(qp, tol=config.qp_tol, max_iter=config.qp_max_iter)
        dt = time.perf_counter() - t0
        out = extract_result(sol, layout, usecase, params, f_net, g_net)
        row = ReportRow(method, dt, out.predicted_metric, out.actual_metric, out.feasibility_gap, sol.status, sol.iterations)
        return row, out
    if method == "bigm_icnn":
        mip, layout = build_bigm_icnn(usecase, params, f_net, g_net, config.big_m)
        hint = _forward_assignment(usecase, params, layout, f_net, g_net)
        t0 = time.perf_counter()
        sol = solve_miqp(
            mip,
            rel_gap=config.mip_rel_gap,
            node_limit=config.mip_node_limit,
            qp_tol=config.qp_tol,
            qp_max_iter=config.qp_max_iter,
            initial_assignment=hint,
        )
        dt = time.perf_counter() - t0
        if sol.status == "infeasible":
            raise RuntimeError("big-M model reported infeasible")
        bigm_activation_audit(sol, layout, f_net, g_net)
        out = extract_result(sol, layout, usecase, params)
        row = ReportRow(method, dt, out.predicted_metric, out.actual_metric, sol.gap, sol.status, sol.iterations, sol.node_count)
        return row, out
    raise ValueError(f"unknown method {method!r}")


def _forward_assignment(usecase, params, layout, f_net, g_net):
    """Binary pattern from the relaxed solution's forward pass, used to seed
    the branch-and-bound incumbent."""
    qp, rl_layout = build_relaxed_icnn(usecase, params, f_net, g_net, DEFAULT_LAMBDA[usecase.kind])
    sol = solve_qp(qp, tol=1e-5, max_iter=20000)
    if sol.status == "infeasible":
        return None
    pc = np.clip(sol.x[rl_layout.pc_slice], 0.0, 1.0)
    pd = np.clip(sol.x[rl_layout.pd_slice], 0.0, 1.0)
    bits = []
    for net, p in ((f_net, pc), (g_net, pd)):
        z = p[None, :]
        pattern = []
        for lyr in net.layers:
            a = lyr.w @ z + lyr.d @ p[None, :] + lyr.b[:, None]
            pattern.append((a <= 0.0).astype(float))  # y = 1 picks the zero branch
            z = np.maximum(0.0, a)
        # layout order: step-major, then layer/neuron
        bits.append(np.concatenate([np.concatenate([pat[:, k] for pat in pattern]) for k in range(p.size)]))
    w = (pc >= pd).astype(float)
    return np.concatenate(bits + [w])


def run_experiment(config: RunConfig, write_files: bool = True) -> ExperimentReport:
    """Solve every configured method on one scenario and tabulate
    predicted/actual metrics, solve times, and the relaxation gap."""
    usecase = make_usecase(config)
    nets = surrogates(config) if any(m in ("relaxed_icnn", "bigm_icnn") for m in config.methods) else None
    rows = []
    for method in config.methods:
        try:
            row, _ = run_method(method, config, usecase, nets)
        except Exception as exc:  # noqa: BLE001 - a failing method must not kill the run
            row = ReportRow(method, 0.0, float("nan"), float("nan"), status=f"error: {exc}")
        rows.append(row)
    report = ExperimentReport(rows=rows, scenario=_scenario_meta(config))
    if write_files:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.write_json(out / "report.json")
        report.write_csv(out / "report.csv")
    return report


def _scenario_meta(config: RunConfig) -> dict:
    return {
        "use_case": config.use_case,
        "seed": config.seed,
        "horizon": config.horizon,
        "dt_hours": config.battery.dt_hours,
        "e0": config.e0,
        "lambda": config.lam_value,
        "big_m": config.big_m,
        "alpha": config.alpha,
    }


@dataclass
class SweepRow:
    lam: float
    solver_time_s: float
    predicted: float
    actual: float
    gap: float
    status: str


@dataclass
class SweepReport:
    rows: list
    scenario: dict

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["lambda", "solver_time_s", "predicted", "actual", "gap", "status"])
            for r in self.rows:
                writer.writerow([repr(float(r.lam)), repr(float(r.solver_time_s)), repr(float(r.predicted)), repr(float(r.actual)), repr(float(r.gap)), r.status])


def lambda_sweep(config: RunConfig, lambda_grid=None, nets=None, write_files: bool = True) -> SweepReport:
    """Solve the relaxed route across a penalty grid, recording predicted and
    actual metrics plus the aggregated relaxation gap for each point."""
    if lambda_grid is None:
        lambda_grid = np.logspace(-6, -1, 15)
    usecase = make_usecase(config)
    if nets is None:
        nets = surrogates(config)
    f_net, g_net = nets
    rows = []
    for lam in lambda_grid:
        qp, layout = build_relaxed_icnn(usecase, config.battery, f_net, g_net, float(lam))
        t0 = time.perf_counter()
        sol = solve_qp(qp, tol=config.qp_tol, max_iter=config.qp_max_iter)
        dt = time.perf_counter() - t0
        out = extract_result(sol, layout, usecase, config.battery, f_net, g_net)
        rows.append(SweepRow(float(lam), dt, out.predicted_metric, out.actual_metric, out.feasibility_gap, sol.status))
    report = SweepReport(rows=rows, scenario=_scenario_meta(config))
    if write_files:
        out_dir = Path(config.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report.write_csv(out_dir / "sweep.csv")
    return report
