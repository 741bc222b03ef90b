"""Battery plant physics: part-load efficiencies, SoC dynamics, dispatch metrics.

Powers on the optimization side are per-unit of the converter rating; kW only
appear in the metrics and in the SoC arithmetic.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BatteryParams:
    """Ratings and efficiency-curve parameters of a grid-tied battery/inverter.

    SoC bounds are fractions of capacity.  ``knee`` sets the per-unit power
    at which the part-load efficiency curve bends toward its plateau.
    """

    p_max_kw: float = 50.0
    capacity_kwh: float = 135.0
    e_min: float = 0.1
    e_max: float = 0.9
    eta_c_max: float = 0.92
    eta_d_max: float = 0.95
    dt_hours: float = 1.0 / 12.0
    knee: float = 0.1

    def __post_init__(self):
        if not (0.0 <= self.e_min < self.e_max <= 1.0):
            raise ValueError(f"SoC bounds must satisfy 0 <= e_min < e_max <= 1, got [{self.e_min}, {self.e_max}]")
        if not (0.0 < self.eta_c_max <= 1.0 and 0.0 < self.eta_d_max <= 1.0):
            raise ValueError("peak efficiencies must lie in (0, 1]")
        for name in ("p_max_kw", "capacity_kwh", "dt_hours", "knee"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")

    @property
    def soc_per_unit_step(self) -> float:
        """SoC change per step per unit of per-unit DC-side power."""
        return self.dt_hours * self.p_max_kw / self.capacity_kwh


@dataclass
class DispatchSchedule:
    """Planned charge/discharge powers in per-unit of the rating, length K each."""

    p_c: np.ndarray
    p_d: np.ndarray

    def __post_init__(self):
        self.p_c = np.atleast_1d(np.asarray(self.p_c, dtype=float))
        self.p_d = np.atleast_1d(np.asarray(self.p_d, dtype=float))
        if self.p_c.shape != self.p_d.shape:
            raise ValueError("p_c and p_d must have the same length")
        for name, arr in (("p_c", self.p_c), ("p_d", self.p_d)):
            if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
                raise ValueError(f"{name} entries must lie in [0, 1]")

    def __len__(self):
        return self.p_c.size


@dataclass
class Trajectory:
    """Realized plant response: SoC path (length K+1) and delivered powers."""

    e: np.ndarray
    realized_p_c: np.ndarray
    realized_p_d: np.ndarray


def _check_per_unit(p, name="p"):
    arr = np.asarray(p, dtype=float)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(f"{name} must lie in [0, 1], got values in [{arr.min()}, {arr.max()}]")
    return arr


def _as_input(out, p):
    return float(out) if np.ndim(p) == 0 else out


def charge_efficiency(p, params: BatteryParams):
    """Part-load charging efficiency at per-unit power ``p``.

    Saturating-exponential curve: rises sharply below ~3x the knee and is
    near-flat above, with zero conversion at zero power.
    """
    arr = _check_per_unit(p)
    return _as_input(params.eta_c_max * (1.0 - np.exp(-arr / params.knee)), p)


def discharge_efficiency(p, params: BatteryParams):
    """Part-load discharging efficiency at per-unit power ``p``."""
    arr = _check_per_unit(p)
    return _as_input(params.eta_d_max * (1.0 - np.exp(-arr / params.knee)), p)


def charge_transfer(p, params: BatteryParams):
    """DC-side energy inflow rate eta_c(p) * p, per-unit.

    This is the quantity the charge surrogate is trained on.
    """
    arr = np.asarray(p, dtype=float)
    return _as_input(params.eta_c_max * (1.0 - np.exp(-arr / params.knee)) * arr, p)


def discharge_transfer(p, params: BatteryParams):
    """DC-side energy outflow rate p / eta_d(p), per-unit; defined as 0 at p = 0.

    The ratio tends to knee / eta_d_max as p -> 0+, but no energy flows at
    exactly zero power.
    """
    arr = np.asarray(p, dtype=float)
    eta = params.eta_d_max * (1.0 - np.exp(-arr / params.knee))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(arr == 0.0, 0.0, arr / np.where(eta == 0.0, 1.0, eta))
    return _as_input(out, p)


def soc_step(e: float, p_c: float, p_d: float, params: BatteryParams) -> float:
    """One SoC update from per-unit powers; no bound enforcement here."""
    _check_per_unit(p_c, "p_c")
    _check_per_unit(p_d, "p_d")
    inflow = charge_transfer(p_c, params) - discharge_transfer(p_d, params)
    return e + params.soc_per_unit_step * inflow


def soc_series(p_c, p_d, e0: float, params: BatteryParams) -> np.ndarray:
    """SoC path from repeated soc_step without saturation; supports (..., K) batches.

    Returns an array with one more entry than the schedule along the last axis.
    """
    pc = np.asarray(p_c, dtype=float)
    pd = np.asarray(p_d, dtype=float)
    inflow = params.eta_c_max * (1.0 - np.exp(-pc / params.knee)) * pc
    eta_d = params.eta_d_max * (1.0 - np.exp(-pd / params.knee))
    with np.errstate(divide="ignore", invalid="ignore"):
        outflow = np.where(pd == 0.0, 0.0, pd / np.where(eta_d == 0.0, 1.0, eta_d))
    inc = params.soc_per_unit_step * np.cumsum(inflow - outflow, axis=-1)
    head = np.full(inc.shape[:-1] + (1,), float(e0))
    return np.concatenate([head, e0 + inc], axis=-1)


def simulate_plant(schedule: DispatchSchedule, e0: float, params: BatteryParams) -> Trajectory:
    """Apply a schedule to the plant, zeroing powers at SoC bound violations.

    Any step whose SoC update would cross the upper bound has its charging
    power replaced by zero for that step (symmetrically for discharging at
    the lower bound), so realized power is either the scheduled value or
    exactly zero and the SoC path never leaves its bounds.
    """
    if not (params.e_min <= e0 <= params.e_max):
        raise ValueError(f"e0 = {e0} outside SoC bounds [{params.e_min}, {params.e_max}]")
    K = len(schedule)
    e = np.empty(K + 1)
    e[0] = e0
    rp_c = schedule.p_c.copy()
    rp_d = schedule.p_d.copy()
    for k in range(K):
        pc, pd = rp_c[k], rp_d[k]
        e_next = soc_step(e[k], pc, pd, params)
        if e_next > params.e_max:
            pc = 0.0
            e_next = soc_step(e[k], 0.0, pd, params)
        if e_next < params.e_min:
            pd = 0.0
            e_next = soc_step(e[k], pc, 0.0, params)
        if e_next > params.e_max:
            # discharge was zeroed above and charging alone still overshoots
            pc = 0.0
            e_next = e[k]
        rp_c[k], rp_d[k] = pc, pd
        e[k + 1] = e_next
    return Trajectory(e=e, realized_p_c=rp_c, realized_p_d=rp_d)


def net_pv_power(pv_kw, p_c, p_d, params: BatteryParams) -> np.ndarray:
    """Net injected power PV - P_c + P_d in kW.

    The PV series may carry one extra trailing forecast sample; battery power
    is zero beyond the schedule horizon.
    """
    pv = np.asarray(pv_kw, dtype=float)
    pc = np.asarray(p_c, dtype=float)
    pd = np.asarray(p_d, dtype=float)
    K = pc.shape[-1]
    if pv.shape[-1] not in (K, K + 1):
        raise ValueError(f"PV series length {pv.shape[-1]} incompatible with horizon {K}")
    net = pv.astype(float).copy()
    net[..., :K] = net[..., :K] + params.p_max_kw * (pd - pc)
    return net


def ramp_objective(net_power) -> float:
    """Sum of squared consecutive differences of a power sequence, kW^2."""
    net = np.asarray(net_power, dtype=float)
    if net.size < 2:
        raise ValueError("need at least two samples to form a ramp")
    return float(np.sum(np.diff(net) ** 2))


def smoothing_mse(net_power, pv_power) -> float:
    """Mean squared deviation of net power from the mean PV power, kW^2."""
    net = np.asarray(net_power, dtype=float)
    pv = np.asarray(pv_power, dtype=float)
    return float(np.mean((net - pv.mean()) ** 2))


def revenue(schedule: DispatchSchedule, lmp, params: BatteryParams) -> float:
    """Market revenue of a schedule in dollars: sum of LMP * (P_d - P_c) * dt."""
    prices = np.asarray(lmp, dtype=float)
    if prices.size != len(schedule):
        raise ValueError("LMP series length must match the schedule horizon")
    flow_kw = params.p_max_kw * (schedule.p_d - schedule.p_c)
    return float(np.sum(prices * flow_kw) * params.dt_hours)
