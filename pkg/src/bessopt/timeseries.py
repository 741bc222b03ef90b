"""Time-series ingestion and seeded synthetic PV / price generators."""

import csv
import math

import numpy as np


class ParseError(ValueError):
    """CSV content error; the message names the offending line."""


def load_timeseries_csv(path) -> np.ndarray:
    """Read a `timestamp,value` CSV (one header line) and return the values
    in file order."""
    values = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            next(reader)
        except StopIteration:
            raise ParseError(f"{path}: line 1: missing header") from None
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 2:
                raise ParseError(f"{path}: line {lineno}: expected timestamp,value, got {row!r}")
            try:
                v = float(row[1])
            except ValueError:
                raise ParseError(f"{path}: line {lineno}: bad value {row[1]!r}") from None
            if not math.isfinite(v):
                raise ParseError(f"{path}: line {lineno}: non-finite value {row[1]!r}")
            values.append(v)
    return np.asarray(values, dtype=float)


def write_timeseries_csv(path, values):
    """Write integer step timestamps and full-precision values."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", "value"])
        for k, v in enumerate(np.asarray(values, dtype=float)):
            writer.writerow([k, repr(float(v))])


def _bounded_walk(rng, n, start_lo, start_hi, step, lo, hi):
    """Seeded random walk clipped to [lo, hi]; gives correlated noise."""
    out = np.empty(n)
    c = rng.uniform(start_lo, start_hi)
    for k in range(n):
        out[k] = c
        c = min(max(c + step * rng.uniform(-1.0, 1.0), lo), hi)
    return out


def synth_pv(seed: int, steps: int, p_peak_kw: float = 50.0) -> np.ndarray:
    """Clear-sky half-sine over the daylight window times correlated cloud
    attenuation in [0.3, 1.0]; ``steps + 1`` samples, zero at both edges."""
    rng = np.random.default_rng(seed)
    k = np.arange(steps + 1)
    shape = np.sin(np.pi * k / steps)
    shape[0] = 0.0
    shape[-1] = 0.0
    cloud = _bounded_walk(rng, steps + 1, 0.6, 1.0, 0.06, 0.3, 1.0)
    return p_peak_kw * shape * cloud


def synth_lmp(seed: int, steps: int, dt_hours: float = 1.0 / 12.0, start_hour: float = 6.0) -> np.ndarray:
    """Diurnal double-peak price profile in [0.01, 0.12] $/kWh with seeded
    correlated noise; ``steps`` samples starting at ``start_hour``."""
    rng = np.random.default_rng(seed)
    hours = start_hour + np.arange(steps) * dt_hours
    base = 0.02 + 0.05 * np.exp(-(((hours - 8.0) / 1.5) ** 2)) + 0.07 * np.exp(-(((hours - 19.0) / 2.0) ** 2))
    noise = _bounded_walk(rng, steps, -0.004, 0.004, 0.003, -0.012, 0.012)
    return np.clip(base + noise, 0.01, 0.12)
