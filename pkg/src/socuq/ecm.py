"""First-order equivalent-circuit cell model used as simulation ground truth.

One RC pair is enough for the low C-rates a stationary storage system sees.
State of charge integrates the applied current (discharge positive), the RC
branch voltage follows an exact zero-order-hold discretization, and the
terminal voltage is the OCV minus the two resistive drops.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from importlib import resources

import numpy as np

from .errors import RangeError, ValidationError
from .ocv import OcvCurve, ocv_of_soc

SECONDS_PER_HOUR = 3600.0


@dataclass(frozen=True)
class EcmParams:
    """Cell capacity, coulombic efficiency and SOC-indexed R0/R1/C1 tables.

    q_capacity is in amp-hours; resistances in ohms, capacitance in farads.
    Immutable, shareable across simulation workers.
    """

    q_capacity: float
    eta: float
    soc_breakpoints: np.ndarray
    r0_table: np.ndarray
    r1_table: np.ndarray
    c1_table: np.ndarray

    def __post_init__(self):
        if self.q_capacity <= 0:
            raise ValidationError("capacity must be positive")
        if not (0.0 < self.eta <= 1.0):
            raise ValidationError("coulombic efficiency must be in (0, 1]")
        soc = np.asarray(self.soc_breakpoints, dtype=float)
        tables = {}
        for name in ("r0_table", "r1_table", "c1_table"):
            t = np.asarray(getattr(self, name), dtype=float)
            if t.shape != soc.shape:
                raise ValidationError(f"{name} length must match soc breakpoints")
            if np.any(t <= 0):
                raise ValidationError(f"{name} entries must be positive")
            tables[name] = t
        if soc.ndim != 1 or soc.size < 1:
            raise ValidationError("need at least one soc breakpoint")
        if soc.size > 1 and not np.all(np.diff(soc) > 0):
            raise ValidationError("soc breakpoints must be strictly increasing")
        object.__setattr__(self, "soc_breakpoints", soc)
        for name, t in tables.items():
            object.__setattr__(self, name, t)

    def r0(self, soc):
        return np.interp(soc, self.soc_breakpoints, self.r0_table)

    def r1(self, soc):
        return np.interp(soc, self.soc_breakpoints, self.r1_table)

    def c1(self, soc):
        return np.interp(soc, self.soc_breakpoints, self.c1_table)

    def r1c1(self, soc):
        """RC time constant, seconds, interpolated at `soc`."""
        return self.r1(soc) * self.c1(soc)

    def coulomb_per_amp(self, dt: float) -> float:
        """SOC change per amp of discharge over one dt-second step."""
        return self.eta * dt / (SECONDS_PER_HOUR * self.q_capacity)


@dataclass(frozen=True)
class CellState:
    """Ground-truth cell state: SOC, RC branch voltage, elapsed time."""

    soc: float
    v_c1: float = 0.0
    time: float = 0.0


def step_true_soc(state: CellState, params: EcmParams, i: float, dt: float) -> float:
    """Coulomb counting: SOC after one step of current `i` (discharge
    positive). May leave [0, 1]; the caller decides whether that aborts."""
    if dt <= 0:
        raise ValidationError("dt must be positive")
    return state.soc - params.coulomb_per_amp(dt) * i


def step_rc_voltage(state: CellState, params: EcmParams, i: float, dt: float) -> float:
    """RC branch voltage after one step. Exact for current held constant
    over the step, so refining dt on a zero-order-hold profile is a no-op."""
    if dt <= 0:
        raise ValidationError("dt must be positive")
    tau = params.r1c1(state.soc)
    decay = math.exp(-dt / tau)
    return state.v_c1 * decay + params.r1(state.soc) * (1.0 - decay) * i


def terminal_voltage(state: CellState, params: EcmParams, curve: OcvCurve, i: float) -> float:
    """Terminal voltage: OCV(SOC) minus RC branch and series-resistance drops."""
    return ocv_of_soc(curve, state.soc) - state.v_c1 - params.r0(state.soc) * i


def advance_cell(state: CellState, params: EcmParams, i: float, dt: float) -> CellState:
    """One lockstep update of the true cell. R1/C1 are looked up at the SOC
    the step starts from. Raises if SOC leaves [0, 1]."""
    v_c1 = step_rc_voltage(state, params, i, dt)
    soc = step_true_soc(state, params, i, dt)
    if soc < -1e-12 or soc > 1.0 + 1e-12:
        raise RangeError(f"true SOC saturated at {soc:.6f} (t={state.time + dt:.1f} s)")
    return replace(state, soc=min(max(soc, 0.0), 1.0), v_c1=v_c1, time=state.time + dt)


def load_params_csv(path, q_capacity: float = 4.85, eta: float = 1.0) -> EcmParams:
    """Read R0/R1/C1 tables from CSV with header `soc,r0,r1,c1`."""
    soc, r0, r1, c1 = [], [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        want = ["soc", "r0", "r1", "c1"]
        if header is None or [c.strip().lower() for c in header[:4]] != want:
            raise ValidationError(f"{path}: expected header 'soc,r0,r1,c1'")
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                soc.append(float(row[0]))
                r0.append(float(row[1]))
                r1.append(float(row[2]))
                c1.append(float(row[3]))
            except (ValueError, IndexError) as exc:
                raise ValidationError(f"{path}:{lineno}: bad row {row!r}") from exc
    if not soc:
        raise ValidationError(f"{path}: no data rows")
    return EcmParams(q_capacity, eta, np.array(soc), np.array(r0), np.array(r1), np.array(c1))


def save_params_csv(params: EcmParams, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["soc", "r0", "r1", "c1"])
        for s, a, b, c in zip(params.soc_breakpoints, params.r0_table,
                              params.r1_table, params.c1_table):
            writer.writerow([repr(float(s)), repr(float(a)), repr(float(b)), repr(float(c))])


def default_params(q_capacity: float = 4.85, eta: float = 1.0) -> EcmParams:
    """Plausible NMC pulse-fit tables shipped with the package
    (R0 in the tens of milliohms, R1*C1 from ~25 s to ~110 s)."""
    ref = resources.files("socuq.data").joinpath("default_ecm.csv")
    with resources.as_file(ref) as path:
        return load_params_csv(path, q_capacity=q_capacity, eta=eta)
