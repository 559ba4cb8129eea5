"""Sensor and model error sources: distributions, variances and sampling.

Three error channels feed the estimator's uncertainty recursion:

* current sensing: normal with mean equal to the sensor drift and variance
  alpha + beta * i^2 (a floor plus a term growing with current magnitude);
* voltage inversion: converting a rested voltage into SOC through the
  linearized curve scales small voltage errors by the constant slope,
  giving variance lambda1 * dSOC/dOCV;
* relaxation: right after the current stops, the terminal voltage has not
  settled to OCV, adding variance lambda2 * R1*C1 / t_rest that dies off
  as the rest period t_rest grows.

The second parameter of every distribution here is a variance, which is
what the deterministic uncertainty recursion propagates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class ErrorParams:
    """The five error-model constants.

    mu_drift    current sensor drift, amps (mean of every current error draw)
    alpha       variance floor of the current error, amps^2
    beta        dimensionless growth of current-error variance with i^2
    lambda1     voltage-inversion noise coefficient (scales dSOC/dOCV)
    lambda2     relaxation noise coefficient (scales R1*C1/t_rest)
    """

    mu_drift: float = 0.03
    alpha: float = 1e-7
    beta: float = 1.4e-4
    lambda1: float = 1e-6
    lambda2: float = 6e-7

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValidationError("alpha must be positive")
        if self.beta < 0:
            raise ValidationError("beta must be non-negative")
        if self.lambda1 <= 0 or self.lambda2 <= 0:
            raise ValidationError("lambda1 and lambda2 must be positive")


@dataclass(frozen=True)
class RestClock:
    """Tracks the rest period: the timestamp at which current became zero
    and the elapsed time at rest. t_rest is None while current flows."""

    t_rest: float | None = None
    t_r: float = 0.0

    @property
    def resting(self) -> bool:
        return self.t_rest is not None


def update_rest_clock(clock: RestClock, i: float, t_now: float,
                      deadband: float = 0.0) -> RestClock:
    """Advance the rest clock for the sample at `t_now` carrying current `i`.

    |i| <= deadband starts a rest period (t_r = 0 on the first such sample)
    or extends one (t_r = t_now - t_rest). Any larger current clears it.
    """
    if abs(i) <= deadband:
        if clock.t_rest is None:
            return RestClock(t_rest=t_now, t_r=0.0)
        return RestClock(t_rest=clock.t_rest, t_r=t_now - clock.t_rest)
    return RestClock()


def current_error_variance(p: ErrorParams, i: float) -> float:
    """Variance of the current-sensor error at current `i` (even in i)."""
    return p.alpha + p.beta * i * i


def sample_current_error(p: ErrorParams, i: float, rng: np.random.Generator) -> float:
    """One current-error draw: N(drift, alpha + beta*i^2)."""
    return rng.normal(p.mu_drift, math.sqrt(current_error_variance(p, i)))


def voltage_inversion_variance(p: ErrorParams, slope_dsoc_docv: float) -> float:
    """SOC-domain variance of the voltage-inversion error. Flat curves
    (large dSOC/dOCV) blow this up, which is why chemistries with a flat
    OCV plateau have poor voltage-based SOC observability."""
    if slope_dsoc_docv <= 0:
        raise ValidationError("dSOC/dOCV slope must be positive")
    return p.lambda1 * slope_dsoc_docv


def sample_inversion_error(p: ErrorParams, slope_dsoc_docv: float,
                           rng: np.random.Generator) -> float:
    return rng.normal(0.0, math.sqrt(voltage_inversion_variance(p, slope_dsoc_docv)))


def relaxation_variance(p: ErrorParams, r1: float, c1: float, t_r: float) -> float:
    """SOC-domain variance of the not-yet-relaxed-voltage error after
    t_r seconds at rest. Strictly decreasing in t_r; undefined at t_r = 0,
    so callers must gate on an elapsed rest time."""
    if t_r <= 0:
        raise ValidationError("relaxation variance requires elapsed rest time t_r > 0")
    return p.lambda2 * r1 * c1 / t_r


def sample_relaxation_error(p: ErrorParams, r1: float, c1: float, t_r: float,
                            rng: np.random.Generator) -> float:
    return rng.normal(0.0, math.sqrt(relaxation_variance(p, r1, c1, t_r)))


class NoiseStream:
    """Pre-drawn noise for one simulation run.

    Drawing everything up front from a single seeded generator makes the
    scalar and the vectorized (Monte Carlo) engines consume bit-identical
    noise, which is what makes their outputs exactly comparable. The
    per-step standard deviations only depend on the commanded profile and
    the ground-truth parameter tables, so they are the same for every run.

    eps_i[k]            current-sensor error at sample k
    eps_v[j]            combined inversion+relaxation error for the j-th
                        rest sample that carries a voltage update
    """

    def __init__(self, seed_seq: np.random.SeedSequence,
                 i_std: np.ndarray, mu: float,
                 v_soc_std: np.ndarray, zero_noise: bool = False):
        rng = np.random.default_rng(seed_seq)
        n, m = len(i_std), len(v_soc_std)
        if zero_noise:
            self.eps_i = np.zeros(n)
            self.eps_v = np.zeros(m)
        else:
            self.eps_i = mu + i_std * rng.standard_normal(n)
            self.eps_v = v_soc_std * rng.standard_normal(m)
