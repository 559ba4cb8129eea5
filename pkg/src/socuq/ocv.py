"""Open-circuit-voltage curve: interpolation, inversion and linearization.

The cell's equilibrium voltage is a strictly monotone function of state of
charge, so it can be tabulated once and inverted to recover SOC from a
rested voltage measurement. The voltage-inversion error model additionally
needs a single constant slope dSOC/dOCV, obtained by fitting a straight
line to the curve over the operating range (SOC 0.2 to 1.0, the span most
battery management systems restrict themselves to).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import RangeError, ValidationError

log = logging.getLogger(__name__)

# Linear fit window for the constant dSOC/dOCV slope.
FIT_SOC_MIN = 0.2
FIT_SOC_MAX = 1.0


@dataclass(frozen=True)
class OcvCurve:
    """Monotone OCV(SOC) lookup table with a fitted linear inverse.

    soc_grid and ocv_values must both be strictly increasing; the grid has
    to cover at least [0.2, 1.0] so the linearization window is populated.
    Instances are immutable and safe to share between workers.
    """

    soc_grid: np.ndarray
    ocv_values: np.ndarray
    linear_slope_dsoc_docv: float = field(default=0.0)
    linear_intercept: float = field(default=0.0)

    def __post_init__(self):
        soc = np.asarray(self.soc_grid, dtype=float)
        ocv = np.asarray(self.ocv_values, dtype=float)
        if soc.ndim != 1 or soc.shape != ocv.shape or soc.size < 2:
            raise ValidationError("curve needs matching 1-D soc and ocv arrays with >= 2 points")
        if not np.all(np.diff(soc) > 0):
            raise ValidationError("soc breakpoints must be strictly increasing")
        if not np.all(np.diff(ocv) > 0):
            raise ValidationError("ocv values must be strictly increasing (flat or inverted "
                                  "segments make the curve non-invertible)")
        if soc[0] > FIT_SOC_MIN or soc[-1] < FIT_SOC_MAX:
            raise ValidationError(f"soc grid must span at least [{FIT_SOC_MIN}, {FIT_SOC_MAX}], "
                                  f"got [{soc[0]}, {soc[-1]}]")
        object.__setattr__(self, "soc_grid", soc)
        object.__setattr__(self, "ocv_values", ocv)
        if self.linear_slope_dsoc_docv == 0.0:
            slope, intercept = fit_linearization(self)
            object.__setattr__(self, "linear_slope_dsoc_docv", slope)
            object.__setattr__(self, "linear_intercept", intercept)
        elif self.linear_slope_dsoc_docv <= 0:
            raise ValidationError("linear slope dSOC/dOCV must be positive")

    @property
    def soc_min(self) -> float:
        return float(self.soc_grid[0])

    @property
    def soc_max(self) -> float:
        return float(self.soc_grid[-1])

    @property
    def ocv_min(self) -> float:
        return float(self.ocv_values[0])

    @property
    def ocv_max(self) -> float:
        return float(self.ocv_values[-1])


def ocv_of_soc(curve: OcvCurve, soc) -> float | np.ndarray:
    """Interpolate open-circuit voltage at `soc` (piecewise linear, exact at
    breakpoints). Raises RangeError outside the tabulated span."""
    s = np.asarray(soc, dtype=float)
    if np.any(s < curve.soc_min) or np.any(s > curve.soc_max):
        raise RangeError(f"soc outside curve span [{curve.soc_min}, {curve.soc_max}]")
    out = np.interp(s, curve.soc_grid, curve.ocv_values)
    return float(out) if np.isscalar(soc) or s.ndim == 0 else out


def soc_of_ocv(curve: OcvCurve, ocv) -> float | np.ndarray:
    """Invert the curve: SOC at a given equilibrium voltage."""
    v = np.asarray(ocv, dtype=float)
    if np.any(v < curve.ocv_min) or np.any(v > curve.ocv_max):
        raise RangeError(f"ocv outside curve span [{curve.ocv_min}, {curve.ocv_max}] V")
    out = np.interp(v, curve.ocv_values, curve.soc_grid)
    return float(out) if np.isscalar(ocv) or v.ndim == 0 else out


def fit_linearization(curve: OcvCurve) -> tuple[float, float]:
    """Least-squares line SOC = slope * OCV + intercept over the operating
    window SOC in [0.2, 1.0]. Returns (slope, intercept); slope is the
    constant dSOC/dOCV used by the inversion error model."""
    mask = (curve.soc_grid >= FIT_SOC_MIN - 1e-12) & (curve.soc_grid <= FIT_SOC_MAX + 1e-12)
    if int(mask.sum()) < 2:
        raise ValidationError("need at least 2 curve points in [0.2, 1.0] to fit a line")
    x = curve.ocv_values[mask]
    y = curve.soc_grid[mask]
    slope, intercept = np.polyfit(x, y, 1)
    resid = linearization_residual(curve, float(slope), float(intercept))
    log.info("linearized OCV-SOC: dSOC/dOCV=%.6g 1/V, intercept=%.6g, max |residual|=%.3e SOC",
             slope, intercept, resid)
    return float(slope), float(intercept)


def linearization_residual(curve: OcvCurve, slope: float | None = None,
                           intercept: float | None = None) -> float:
    """Worst-case |linear SOC(OCV) - tabulated SOC| over the fit window."""
    if slope is None:
        slope, intercept = curve.linear_slope_dsoc_docv, curve.linear_intercept
    mask = (curve.soc_grid >= FIT_SOC_MIN - 1e-12) & (curve.soc_grid <= FIT_SOC_MAX + 1e-12)
    pred = slope * curve.ocv_values[mask] + intercept
    return float(np.max(np.abs(pred - curve.soc_grid[mask])))


def load_ocv_csv(path) -> OcvCurve:
    """Read a curve from CSV with header `soc,ocv`, ascending SOC rows."""
    soc, ocv = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip().lower() for c in header[:2]] != ["soc", "ocv"]:
            raise ValidationError(f"{path}: expected header 'soc,ocv'")
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                soc.append(float(row[0]))
                ocv.append(float(row[1]))
            except (ValueError, IndexError) as exc:
                raise ValidationError(f"{path}:{lineno}: bad row {row!r}") from exc
    if not soc:
        raise ValidationError(f"{path}: no data rows")
    return OcvCurve(np.array(soc), np.array(ocv))


def save_ocv_csv(curve: OcvCurve, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["soc", "ocv"])
        for s, v in zip(curve.soc_grid, curve.ocv_values):
            writer.writerow([repr(float(s)), repr(float(v))])


def default_curve() -> OcvCurve:
    """The NMC-like 3.0-4.2 V table shipped with the package."""
    ref = resources.files("socuq.data").joinpath("default_ocv.csv")
    with resources.as_file(ref) as path:
        return load_ocv_csv(path)
