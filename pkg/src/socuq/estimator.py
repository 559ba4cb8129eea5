"""Closed-loop SOC estimator with an analytic uncertainty recursion.

While current flows the estimator simply integrates the measured current,
and the squared uncertainty grows by the current-error variance mapped
into SOC units. At rest it blends the integrated estimate with the SOC
recovered by inverting the rested terminal voltage; the blend gain is the
value that minimizes the post-update variance,

    gain = u^2 / (u^2 + V),   V = lambda1 * dSOC/dOCV + lambda2 * R1*C1 / t_rest,

which drives the squared uncertainty to u^2 * V / (u^2 + V) plus the
(tiny) zero-current integration noise. A bias term tracks the accumulated
current-sensor drift so a 95% confidence interval can be centered on the
debiased estimate: soc_hat + bias +/- 2u.

The estimator keeps its own replica of the RC branch voltage, driven by the
measured current, because the inversion needs the branch voltage and a real
battery management system cannot observe it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .ecm import EcmParams
from .errors import NumericalError, RangeError, ValidationError
from .ocv import OcvCurve, soc_of_ocv
from .sensors import (
    ErrorParams,
    RestClock,
    current_error_variance,
    relaxation_variance,
    update_rest_clock,
    voltage_inversion_variance,
)

BIAS_REST_MODES = ("paper-literal", "proportional-decay")

# slack for t_rest >= dt comparisons; profile timestamps are only required
# to be uniform to this tolerance
REST_GATE_TOL = 1e-9


@dataclass(frozen=True)
class EstimatorState:
    """Estimator internals carried between steps.

    u_sq is the squared uncertainty (variance of the estimation error),
    bias the accumulated mean error from current-sensor drift. v_c1_hat is
    the RC branch replica. time is the timestamp of the next sample to be
    processed. clamped/skipped count rail saturations and voltage updates
    rejected because the measurement left the curve's span.
    """

    soc_hat: float
    u_sq: float = 0.0
    bias: float = 0.0
    rest_clock: RestClock = field(default_factory=RestClock)
    v_c1_hat: float = 0.0
    time: float = 0.0
    clamped: int = 0
    skipped: int = 0


@dataclass
class StepRecord:
    """One time step of a simulation trace.

    soc_hat, u, delta, bias and the interval bounds reflect the state after
    the sample was processed; i/v are the measurements seen at the sample.
    i_true and soc_true are filled in by the simulation harness (NaN when
    replaying real measurements). soc_tilde is None outside voltage updates.
    """

    time: float
    i_measured: float
    v_measured: float
    soc_hat: float
    u: float
    delta: float
    bias: float
    ci_lo: float
    ci_hi: float
    soc_tilde: float | None = None
    i_true: float = math.nan
    soc_true: float = math.nan


def soc_tilde(curve: OcvCurve, v_measured: float, v_c1_estimate: float) -> float:
    """Open-loop SOC from a rested voltage measurement: add back the RC
    branch estimate to recover the OCV, then invert the curve. Only
    meaningful at rest, where the series-resistance drop is zero."""
    return soc_of_ocv(curve, v_measured + v_c1_estimate)


def rest_noise_variance(p: ErrorParams, slope: float, r1c1_s: float, t_r: float) -> float:
    """Combined SOC-domain variance of the two voltage-update error sources."""
    return (voltage_inversion_variance(p, slope)
            + relaxation_variance(p, r1c1_s, 1.0, t_r))


def optimal_gain(state: EstimatorState, p: ErrorParams, slope: float, r1c1_s: float) -> float:
    """Variance-minimizing blend gain for a voltage update after
    state.rest_clock.t_r seconds at rest. Always in [0, 1)."""
    t_r = state.rest_clock.t_r
    if not state.rest_clock.resting or t_r <= 0:
        raise ValidationError("optimal_gain needs an elapsed rest time t_r > 0")
    if state.u_sq < 0:
        raise ValidationError("squared uncertainty must be non-negative")
    if state.u_sq == 0.0:
        return 0.0
    v = rest_noise_variance(p, slope, r1c1_s, t_r)
    return state.u_sq / (state.u_sq + v)


def confidence_interval(state: EstimatorState,
                        center_offset: float | None = None) -> tuple[float, float]:
    """95% interval around the debiased estimate: soc_hat + bias +/- 2u.
    center_offset overrides the accumulated bias (used by the alternative
    interval-centering mode)."""
    offset = state.bias if center_offset is None else center_offset
    half = 2.0 * math.sqrt(state.u_sq)
    center = state.soc_hat + offset
    return center - half, center + half


def step(state: EstimatorState, i_measured: float, v_measured: float, dt: float,
         params: EcmParams, curve: OcvCurve, p: ErrorParams, *,
         at_rest: bool | None = None, deadband: float = 0.0,
         bias_rest_mode: str = "paper-literal") -> tuple[EstimatorState, StepRecord]:
    """Process one measurement sample and return (new state, record).

    at_rest tells the estimator the commanded current is zero (simulation
    mode); when None, rest is detected from |i_measured| <= deadband
    (replay mode). The first sample of a rest period only starts the clock;
    voltage updates begin once a full dt has elapsed at rest, where the
    relaxation error model is defined.
    """
    if dt <= 0:
        raise ValidationError("dt must be positive")
    if bias_rest_mode not in BIAS_REST_MODES:
        raise ValidationError(f"bias_rest_mode must be one of {BIAS_REST_MODES}")

    if at_rest is None:
        at_rest = abs(i_measured) <= deadband
    clock = update_rest_clock(state.rest_clock, 0.0 if at_rest else i_measured,
                              state.time, deadband)

    c = params.coulomb_per_amp(dt)
    slope = curve.linear_slope_dsoc_docv
    r1c1 = float(params.r1c1(state.soc_hat))
    skipped = state.skipped

    delta = 0.0
    tilde: float | None = None
    update_due = at_rest and clock.t_r >= dt - REST_GATE_TOL
    if update_due:
        pre = replace(state, rest_clock=clock)
        try:
            tilde = soc_tilde(curve, v_measured, state.v_c1_hat)
            delta = optimal_gain(pre, p, slope, r1c1)
        except RangeError:
            tilde, delta = None, 0.0
            skipped += 1

    if tilde is None:
        soc_hat = state.soc_hat - c * i_measured
    else:
        soc_hat = (1.0 - delta) * state.soc_hat - c * i_measured + delta * tilde

    if at_rest:
        u_sq = (1.0 - delta) ** 2 * state.u_sq + c * c * p.alpha
        if delta > 0.0:
            u_sq += delta * delta * rest_noise_variance(p, slope, r1c1, clock.t_r)
        if clock.t_r >= dt:
            if bias_rest_mode == "paper-literal":
                bias = state.bias * p.lambda2 * r1c1 / clock.t_r
            else:
                bias = (1.0 - delta) * state.bias + c * p.mu_drift
        else:
            bias = state.bias if bias_rest_mode == "paper-literal" \
                else state.bias + c * p.mu_drift
    else:
        u_sq = state.u_sq + c * c * current_error_variance(p, i_measured)
        bias = state.bias + c * p.mu_drift

    # RC branch replica, driven by the measured current at the current estimate
    tau = r1c1
    decay = math.exp(-dt / tau)
    v_c1_hat = state.v_c1_hat * decay + float(params.r1(state.soc_hat)) * (1.0 - decay) * i_measured

    clamped = state.clamped
    if soc_hat < 0.0 or soc_hat > 1.0:
        soc_hat = min(max(soc_hat, 0.0), 1.0)
        clamped += 1

    if not (math.isfinite(soc_hat) and math.isfinite(u_sq) and math.isfinite(bias)):
        raise NumericalError(f"non-finite estimator state at t={state.time:.1f} s")

    new = EstimatorState(soc_hat=soc_hat, u_sq=max(u_sq, 0.0), bias=bias,
                         rest_clock=clock, v_c1_hat=v_c1_hat,
                         time=state.time + dt, clamped=clamped, skipped=skipped)
    lo, hi = confidence_interval(new)
    rec = StepRecord(time=state.time, i_measured=i_measured, v_measured=v_measured,
                     soc_hat=soc_hat, u=math.sqrt(new.u_sq), delta=delta, bias=bias,
                     ci_lo=lo, ci_hi=hi, soc_tilde=tilde)
    return new, rec


def rest_fixed_point_u_sq(p: ErrorParams, slope: float, r1c1_s: float, t_r: float,
                          c_per_amp: float) -> float:
    """Steady-state squared uncertainty of repeated voltage updates at a
    fixed rest-noise variance V: the positive root of u^4 = A u^2 + A V
    with A the zero-current integration noise c^2 * alpha."""
    v = rest_noise_variance(p, slope, r1c1_s, t_r)
    a = c_per_amp * c_per_amp * p.alpha
    return (a + math.sqrt(a * a + 4.0 * a * v)) / 2.0
