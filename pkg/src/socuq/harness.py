"""Simulation harness: run configs, ground-truth/estimator lockstep runs,
Monte Carlo ensembles and rest-length sweeps.

Every run is fully determined by its configuration plus a master seed.
Monte Carlo run k draws its noise from SeedSequence((master_seed, k)), so
ensembles are reproducible and individual runs can be replayed in
isolation. The ensemble engine advances all runs at once on numpy arrays
and is checked against the scalar engine in the test suite.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import ecm, estimator, ocv, profiles
from .errors import NumericalError, ValidationError
from .sensors import ErrorParams, NoiseStream, RestClock, update_rest_clock

CI_CENTER_MODES = ("bias", "constant-mu")
REST_DETECT_MODES = ("commanded", "measured")


@dataclass
class RunConfig:
    """Flat run configuration. Every field has a default, so
    `socuq simulate --experiment rest` works out of the box."""

    experiment: str = "rest"          # rest | freq (ignored when profile_csv set)
    profile_csv: str = ""

    # rest experiment profile
    c_rate: float = 1.0
    discharge_s: float = 2500.0
    rest_s: float = 500.0

    # frequency-regulation experiment profile
    signal_s: float = 2400.0
    step_s: float = 2.0
    max_c_rate: float = 2.0
    zero_crossing_s: float = 4.0
    copies: int = 5
    inter_rest_s: float = 0.0
    profile_seed: int = 7
    mean_reversion: float = 0.85

    dt: float = 1.0

    # cell
    q_ah: float = 4.85
    eta: float = 1.0
    soc0: float | None = None         # None -> 1.0 for rest, 0.5 otherwise
    ocv_csv: str = ""
    ecm_csv: str = ""

    # error model
    mu: float = 0.03
    alpha: float = 1e-7
    beta: float = 1.4e-4
    lambda1: float = 1e-6
    lambda2: float = 6e-7

    # estimator
    u0: float = 0.0
    bias0: float = 0.0
    deadband: float = 0.0
    rest_detect: str = "commanded"
    bias_rest_mode: str = "paper-literal"
    ci_center_mode: str = "bias"

    seed: int = 12345
    monte_carlo_n: int = 1
    out: str = ""

    def __post_init__(self):
        if self.monte_carlo_n < 1:
            raise ValidationError("monte_carlo_n must be >= 1")
        if self.rest_detect not in REST_DETECT_MODES:
            raise ValidationError(f"rest_detect must be one of {REST_DETECT_MODES}")
        if self.ci_center_mode not in CI_CENTER_MODES:
            raise ValidationError(f"ci_center_mode must be one of {CI_CENTER_MODES}")
        if self.bias_rest_mode not in estimator.BIAS_REST_MODES:
            raise ValidationError(f"bias_rest_mode must be one of {estimator.BIAS_REST_MODES}")
        for name in ("profile_csv", "ocv_csv", "ecm_csv"):
            path = getattr(self, name)
            if path and not Path(path).exists():
                raise ValidationError(f"{name} does not exist: {path}")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "RunConfig":
        kwargs = {}
        spec = {f.name: f for f in fields(cls)}
        for key, raw in mapping.items():
            key = key.strip().lower()
            if key not in spec:
                raise ValidationError(f"unknown config key: {key}")
            kwargs[key] = _coerce(key, raw, spec[key].type)
        return cls(**kwargs)

    def config_hash(self) -> str:
        text = "\n".join(f"{f.name}={getattr(self, f.name)!r}" for f in fields(self))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _coerce(key: str, raw, ftype):
    if isinstance(raw, str):
        raw = raw.strip()
    if key == "soc0":
        if raw in (None, "", "auto", "none"):
            return None
        return float(raw)
    if ftype in ("int", int):
        return int(raw)
    if ftype in ("float", float):
        return float(raw)
    return str(raw)


def parse_config_file(path) -> dict:
    """Parse a flat `key = value` config file; '#' starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
            key, value = stripped.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    mapping = parse_config_file(path) if path else {}
    if overrides:
        mapping.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_mapping(mapping)


def build_curve(cfg: RunConfig) -> ocv.OcvCurve:
    return ocv.load_ocv_csv(cfg.ocv_csv) if cfg.ocv_csv else ocv.default_curve()


def build_params(cfg: RunConfig) -> ecm.EcmParams:
    if cfg.ecm_csv:
        return ecm.load_params_csv(cfg.ecm_csv, q_capacity=cfg.q_ah, eta=cfg.eta)
    return ecm.default_params(q_capacity=cfg.q_ah, eta=cfg.eta)


def build_errors(cfg: RunConfig) -> ErrorParams:
    return ErrorParams(mu_drift=cfg.mu, alpha=cfg.alpha, beta=cfg.beta,
                       lambda1=cfg.lambda1, lambda2=cfg.lambda2)


def build_profile(cfg: RunConfig) -> profiles.CurrentProfile:
    if cfg.profile_csv:
        return profiles.load_profile_csv(cfg.profile_csv)
    if cfg.experiment == "rest":
        return profiles.constant_discharge_rest(cfg.c_rate, cfg.discharge_s,
                                                cfg.rest_s, cfg.dt, cfg.q_ah)
    if cfg.experiment == "freq":
        signal = profiles.synth_regd(cfg.signal_s, cfg.step_s, cfg.max_c_rate,
                                     cfg.q_ah, cfg.zero_crossing_s, cfg.profile_seed,
                                     cfg.dt, cfg.mean_reversion)
        return profiles.concatenate_with_rest(signal, cfg.copies, cfg.inter_rest_s)
    raise ValidationError(f"unknown experiment: {cfg.experiment!r}")


def initial_soc(cfg: RunConfig) -> float:
    if cfg.soc0 is not None:
        return cfg.soc0
    return 1.0 if cfg.experiment == "rest" and not cfg.profile_csv else 0.5


# ---------------------------------------------------------------------------
# Ground-truth plan: everything about a run that does not depend on the
# noise realization, precomputed once and shared by all Monte Carlo runs.
# ---------------------------------------------------------------------------

@dataclass
class GroundTruthPlan:
    profile: profiles.CurrentProfile
    dt: float
    at_rest: np.ndarray           # commanded-rest flag per sample
    t_r: np.ndarray               # elapsed rest seconds per sample
    update: np.ndarray            # voltage update applies at this sample
    soc_pre: np.ndarray           # true SOC at the sample (before its update)
    soc_post: np.ndarray          # true SOC after the sample's coulomb step
    v_c1_pre: np.ndarray          # true RC branch voltage at the sample
    v_terminal: np.ndarray        # noise-free terminal voltage at the sample
    i_std: np.ndarray             # current-error std per sample
    v_soc_std: np.ndarray         # SOC-domain voltage-error std per update sample
    update_index: np.ndarray      # position of each sample in the update stream

    @property
    def n(self) -> int:
        return len(self.profile)


def build_plan(profile: profiles.CurrentProfile, params: ecm.EcmParams,
               curve: ocv.OcvCurve, errors: ErrorParams, soc0: float,
               deadband: float = 0.0) -> GroundTruthPlan:
    n = len(profile)
    dt = profile.dt
    i = profile.currents
    at_rest = np.abs(i) <= deadband

    clock = RestClock()
    t_r = np.zeros(n)
    for k in range(n):
        clock = update_rest_clock(clock, 0.0 if at_rest[k] else i[k],
                                  float(profile.timestamps[k]), deadband)
        t_r[k] = clock.t_r if clock.resting else 0.0
    update = at_rest & (t_r >= dt - 1e-12)

    soc_pre = np.empty(n)
    soc_post = np.empty(n)
    v_c1_pre = np.empty(n)
    state = ecm.CellState(soc=soc0, v_c1=0.0, time=float(profile.timestamps[0]))
    for k in range(n):
        soc_pre[k] = state.soc
        v_c1_pre[k] = state.v_c1
        try:
            state = ecm.advance_cell(state, params, float(i[k]), dt)
        except Exception as exc:
            raise NumericalError(f"ground truth failed at step {k}: {exc}") from exc
        soc_post[k] = state.soc

    v_terminal = (ocv.ocv_of_soc(curve, soc_pre) - v_c1_pre
                  - np.asarray(params.r0(soc_pre)) * i)

    i_std = np.sqrt(errors.alpha + errors.beta * i * i)
    upd = np.flatnonzero(update)
    slope = curve.linear_slope_dsoc_docv
    r1c1_true = np.asarray(params.r1c1(soc_pre[upd])) if upd.size else np.empty(0)
    v_soc_std = np.sqrt(errors.lambda1 * slope
                        + errors.lambda2 * r1c1_true / t_r[upd]) if upd.size else np.empty(0)
    update_index = np.full(n, -1, dtype=int)
    update_index[upd] = np.arange(upd.size)

    return GroundTruthPlan(profile, dt, at_rest, t_r, update, soc_pre, soc_post,
                           v_c1_pre, v_terminal, i_std, v_soc_std, update_index)


# ---------------------------------------------------------------------------
# Scalar engine
# ---------------------------------------------------------------------------

@dataclass
class SimTrace:
    """Ordered step records plus run metadata."""

    records: list
    meta: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        vals = [getattr(r, name) for r in self.records]
        return np.array([math.nan if v is None else v for v in vals])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for key in sorted(self.meta):
                fh.write(f"# {key}={self.meta[key]}\n")
            writer = csv.writer(fh)
            writer.writerow(["t", "i_true", "i_meas", "v_meas", "soc_true", "soc_hat",
                             "soc_tilde", "u", "delta", "bias", "ci_lo", "ci_hi"])
            for r in self.records:
                writer.writerow([
                    repr(float(r.time)), repr(float(r.i_true)), repr(float(r.i_measured)),
                    repr(float(r.v_measured)), repr(float(r.soc_true)), repr(float(r.soc_hat)),
                    "" if r.soc_tilde is None else repr(float(r.soc_tilde)),
                    repr(float(r.u)), repr(float(r.delta)), repr(float(r.bias)),
                    repr(float(r.ci_lo)), repr(float(r.ci_hi)),
                ])


def simulate_run(plan: GroundTruthPlan, params: ecm.EcmParams, curve: ocv.OcvCurve,
                 errors: ErrorParams, seed_seq, *, u0: float = 0.0, bias0: float = 0.0,
                 bias_rest_mode: str = "paper-literal", ci_center_mode: str = "bias",
                 rest_detect: str = "commanded", deadband: float = 0.0,
                 zero_noise: bool = False) -> SimTrace:
    """One ground-truth + estimator lockstep pass over the planned profile."""
    noise = NoiseStream(np.random.SeedSequence(seed_seq), plan.i_std,
                        errors.mu_drift, plan.v_soc_std, zero_noise=zero_noise)
    est = estimator.EstimatorState(soc_hat=plan.soc_pre[0], u_sq=u0 * u0, bias=bias0,
                                   time=float(plan.profile.timestamps[0]))
    i_true = plan.profile.currents
    records = []
    for k in range(plan.n):
        i_meas = float(i_true[k] + noise.eps_i[k])
        j = plan.update_index[k]
        if j >= 0:
            soc_noisy = plan.soc_pre[k] + noise.eps_v[j]
            v_meas = float(ocv.ocv_of_soc(curve, soc_noisy) - plan.v_c1_pre[k])
        else:
            v_meas = float(plan.v_terminal[k])
        at_rest = bool(plan.at_rest[k]) if rest_detect == "commanded" else None
        est, rec = estimator.step(est, i_meas, v_meas, plan.dt, params, curve, errors,
                                  at_rest=at_rest, deadband=deadband,
                                  bias_rest_mode=bias_rest_mode)
        rec.i_true = float(i_true[k])
        rec.soc_true = float(plan.soc_post[k])
        if ci_center_mode == "constant-mu":
            rec.ci_lo, rec.ci_hi = estimator.confidence_interval(
                est, center_offset=errors.mu_drift)
        records.append(rec)
    return SimTrace(records)


def run_single(cfg: RunConfig) -> SimTrace:
    """Simulate one seeded run for the configured experiment."""
    curve, params, errors = build_curve(cfg), build_params(cfg), build_errors(cfg)
    profile = build_profile(cfg)
    plan = build_plan(profile, params, curve, errors, initial_soc(cfg), cfg.deadband)
    trace = simulate_run(plan, params, curve, errors, (cfg.seed, 0),
                         u0=cfg.u0, bias0=cfg.bias0, bias_rest_mode=cfg.bias_rest_mode,
                         ci_center_mode=cfg.ci_center_mode, rest_detect=cfg.rest_detect,
                         deadband=cfg.deadband)
    trace.meta = {"config_hash": cfg.config_hash(), "seed": cfg.seed,
                  "label": profile.meta.get("label", "profile")}
    return trace


# ---------------------------------------------------------------------------
# Vectorized ensemble engine (commanded-rest mode)
# ---------------------------------------------------------------------------

@dataclass
class EnsembleResult:
    n_runs: int
    coverage: np.ndarray          # per-timestep fraction of runs inside the CI
    final_error: np.ndarray      # per-run SOC - soc_hat at the final step
    final_u: np.ndarray
    final_bias: np.ndarray
    final_soc_hat: np.ndarray


def simulate_ensemble(plan: GroundTruthPlan, params: ecm.EcmParams, curve: ocv.OcvCurve,
                      errors: ErrorParams, seeds: list, *, u0: float = 0.0,
                      bias0: float = 0.0, bias_rest_mode: str = "paper-literal",
                      ci_center_mode: str = "bias",
                      chunk_size: int = 2500) -> EnsembleResult:
    """Advance many independently seeded runs in lockstep on numpy arrays.

    Produces the same per-run results as simulate_run for each seed (the
    two engines consume identical pre-drawn noise streams).
    """
    n_total = len(seeds)
    t_steps = plan.n
    cover = np.zeros(t_steps)
    finals = {"error": [], "u": [], "bias": [], "soc_hat": []}

    i_true = plan.profile.currents
    dt = plan.dt
    slope = curve.linear_slope_dsoc_docv
    bp, r0t, r1t, c1t = (params.soc_breakpoints, params.r0_table,
                         params.r1_table, params.c1_table)
    alpha, beta, mu = errors.alpha, errors.beta, errors.mu_drift
    lam1, lam2 = errors.lambda1, errors.lambda2

    for start in range(0, n_total, chunk_size):
        chunk = seeds[start:start + chunk_size]
        n = len(chunk)
        streams = [NoiseStream(np.random.SeedSequence(s), plan.i_std, mu, plan.v_soc_std)
                   for s in chunk]
        eps_i = np.stack([s.eps_i for s in streams])
        eps_v = (np.stack([s.eps_v for s in streams])
                 if plan.v_soc_std.size else np.zeros((n, 0)))

        soc_hat = np.full(n, plan.soc_pre[0])
        u_sq = np.full(n, u0 * u0)
        bias = np.full(n, bias0)
        v_c1_hat = np.zeros(n)

        for k in range(t_steps):
            c = params.coulomb_per_amp(dt)
            i_meas = i_true[k] + eps_i[:, k]
            r1_hat = np.interp(soc_hat, bp, r1t)
            r1c1_hat = r1_hat * np.interp(soc_hat, bp, c1t)

            if not plan.at_rest[k]:
                soc_hat = soc_hat - c * i_meas
                u_sq = u_sq + c * c * (alpha + beta * i_meas * i_meas)
                bias = bias + c * mu
            else:
                j = plan.update_index[k]
                if j >= 0:
                    t_r = plan.t_r[k]
                    v_noise = lam1 * slope + lam2 * r1c1_hat / t_r
                    delta = np.where(u_sq > 0.0, u_sq / (u_sq + v_noise), 0.0)
                    soc_noisy = plan.soc_pre[k] + eps_v[:, j]
                    v_meas = np.interp(soc_noisy, curve.soc_grid, curve.ocv_values) \
                        - plan.v_c1_pre[k]
                    tracked = v_meas + v_c1_hat
                    valid = (tracked >= curve.ocv_min) & (tracked <= curve.ocv_max)
                    delta = np.where(valid, delta, 0.0)
                    tilde = np.interp(tracked, curve.ocv_values, curve.soc_grid)
                    soc_hat = (1.0 - delta) * soc_hat - c * i_meas + delta * tilde
                    u_sq = ((1.0 - delta) ** 2 * u_sq + delta * delta * v_noise
                            + c * c * alpha)
                    if bias_rest_mode == "paper-literal":
                        bias = bias * lam2 * r1c1_hat / t_r
                    else:
                        bias = (1.0 - delta) * bias + c * mu
                else:
                    soc_hat = soc_hat - c * i_meas
                    u_sq = u_sq + c * c * alpha
                    if bias_rest_mode != "paper-literal":
                        bias = bias + c * mu

            v_c1_hat = (v_c1_hat * np.exp(-dt / r1c1_hat)
                        + r1_hat * (1.0 - np.exp(-dt / r1c1_hat)) * i_meas)
            np.clip(soc_hat, 0.0, 1.0, out=soc_hat)

            center = soc_hat + (bias if ci_center_mode == "bias" else mu)
            half = 2.0 * np.sqrt(u_sq)
            cover[k] += np.count_nonzero(np.abs(plan.soc_post[k] - center) <= half)

        if not np.all(np.isfinite(soc_hat)) or not np.all(np.isfinite(u_sq)):
            raise NumericalError("non-finite ensemble state at final step")
        finals["error"].append(plan.soc_post[-1] - soc_hat)
        finals["u"].append(np.sqrt(u_sq))
        finals["bias"].append(bias.copy())
        finals["soc_hat"].append(soc_hat.copy())

    return EnsembleResult(
        n_runs=n_total, coverage=cover / n_total,
        final_error=np.concatenate(finals["error"]),
        final_u=np.concatenate(finals["u"]),
        final_bias=np.concatenate(finals["bias"]),
        final_soc_hat=np.concatenate(finals["soc_hat"]),
    )


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class CoverageReport:
    n_runs: int
    final_coverage: float
    mean_coverage: float
    min_coverage: float
    empirical_error_mean: float
    empirical_error_std: float
    analytic_u_final: float
    analytic_bias_final: float
    coverage_by_step: np.ndarray

    def summary(self) -> dict:
        return {
            "n_runs": self.n_runs,
            "final_coverage": self.final_coverage,
            "mean_coverage": self.mean_coverage,
            "min_coverage": self.min_coverage,
            "empirical_error_mean": self.empirical_error_mean,
            "empirical_error_std": self.empirical_error_std,
            "analytic_u_final": self.analytic_u_final,
            "analytic_bias_final": self.analytic_bias_final,
        }

    def to_csv(self, path, meta: dict | None = None) -> None:
        _write_summary_csv(path, self.summary(), meta)


@dataclass
class RestSweepReport:
    rest_values: list
    start_of_final_signal_u: list
    final_signal_u_max: list

    def to_csv(self, path, meta: dict | None = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for key in sorted(meta or {}):
                fh.write(f"# {key}={meta[key]}\n")
            writer = csv.writer(fh)
            writer.writerow(["rest_s", "start_of_final_signal_u", "final_signal_u_max"])
            for r, u, m in zip(self.rest_values, self.start_of_final_signal_u,
                               self.final_signal_u_max):
                writer.writerow([repr(float(r)), repr(float(u)), repr(float(m))])


def _write_summary_csv(path, summary: dict, meta: dict | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for key in sorted(meta or {}):
            fh.write(f"# {key}={meta[key]}\n")
        writer = csv.writer(fh)
        writer.writerow(["key", "value"])
        for key, value in summary.items():
            writer.writerow([key, repr(value) if isinstance(value, float) else value])


def run_monte_carlo(cfg: RunConfig) -> CoverageReport:
    """N independent runs; empirical CI coverage and error statistics
    against the deterministic (noise-free) reference recursion."""
    curve, params, errors = build_curve(cfg), build_params(cfg), build_errors(cfg)
    profile = build_profile(cfg)
    if cfg.rest_detect != "commanded":
        raise ValidationError("Monte Carlo ensembles require commanded rest detection")
    plan = build_plan(profile, params, curve, errors, initial_soc(cfg), cfg.deadband)

    seeds = [(cfg.seed, k) for k in range(cfg.monte_carlo_n)]
    result = simulate_ensemble(plan, params, curve, errors, seeds, u0=cfg.u0,
                               bias0=cfg.bias0, bias_rest_mode=cfg.bias_rest_mode,
                               ci_center_mode=cfg.ci_center_mode)

    reference = simulate_run(plan, params, curve, errors, (cfg.seed, 0), u0=cfg.u0,
                             bias0=cfg.bias0, bias_rest_mode=cfg.bias_rest_mode,
                             ci_center_mode=cfg.ci_center_mode, zero_noise=True)
    ref_final = reference.records[-1]

    debiased = result.final_error - ref_final.bias
    return CoverageReport(
        n_runs=result.n_runs,
        final_coverage=float(result.coverage[-1]),
        mean_coverage=float(result.coverage.mean()),
        min_coverage=float(result.coverage.min()),
        empirical_error_mean=float(result.final_error.mean()),
        empirical_error_std=float(debiased.std(ddof=1)) if result.n_runs > 1 else 0.0,
        analytic_u_final=float(ref_final.u),
        analytic_bias_final=float(ref_final.bias),
        coverage_by_step=result.coverage,
    )


def run_rest_sweep(cfg: RunConfig, rest_values: list) -> RestSweepReport:
    """Repeat the concatenated-signal experiment for each inter-signal rest
    length; report the uncertainty at the start of the final signal."""
    if not rest_values:
        raise ValidationError("rest sweep needs at least one rest length")
    starts, maxima = [], []
    for rest in rest_values:
        sweep_cfg = replace(cfg, experiment="freq", inter_rest_s=float(rest))
        trace = run_single(sweep_cfg)
        n_signal = int(round(sweep_cfg.signal_s / sweep_cfg.dt))
        n_rest = int(round(rest / sweep_cfg.dt))
        final_start = (sweep_cfg.copies - 1) * (n_signal + n_rest)
        u = trace.column("u")
        starts.append(float(u[final_start]))
        maxima.append(float(u[final_start:final_start + n_signal].max()))
    return RestSweepReport(list(rest_values), starts, maxima)
