"""Current profile generation and CSV ingestion.

Discharge current is positive everywhere in this package. Profiles are
uniformly sampled; generators produce the two experiment shapes (constant
discharge followed by rest, and concatenated regulation-style signals) and
arbitrary profiles can be replayed from CSV.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class CurrentProfile:
    """Uniformly sampled current profile (amps, discharge positive)."""

    timestamps: np.ndarray
    currents: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float)
        i = np.asarray(self.currents, dtype=float)
        if t.ndim != 1 or t.shape != i.shape or t.size < 1:
            raise ValidationError("profile needs matching 1-D timestamp and current arrays")
        if t.size > 1:
            steps = np.diff(t)
            if np.any(steps <= 0):
                raise ValidationError("timestamps must be strictly increasing")
            if np.max(np.abs(steps - steps[0])) > 1e-9:
                raise ValidationError("sampling interval must be uniform")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "currents", i)

    @property
    def dt(self) -> float:
        if self.timestamps.size < 2:
            return float(self.meta.get("dt", 1.0))
        return float(self.timestamps[1] - self.timestamps[0])

    def __len__(self) -> int:
        return int(self.timestamps.size)

    def check_c_rate(self, q_ah: float, max_c_rate: float) -> None:
        limit = max_c_rate * q_ah
        peak = float(np.max(np.abs(self.currents)))
        if peak > limit + 1e-9:
            raise ValidationError(f"profile peaks at {peak:.3f} A, above the "
                                  f"{max_c_rate:g}C limit of {limit:.3f} A")


def _count(duration_s: float, dt: float, what: str) -> int:
    n = duration_s / dt
    if abs(n - round(n)) > 1e-9:
        raise ValidationError(f"{what} ({duration_s} s) must be a multiple of dt ({dt} s)")
    return int(round(n))


def constant_discharge_rest(c_rate: float, discharge_s: float, rest_s: float,
                            dt: float, q: float) -> CurrentProfile:
    """Constant discharge at `c_rate` for discharge_s seconds, then rest_s
    seconds of zero current. Sampled every dt seconds."""
    if dt <= 0:
        raise ValidationError("dt must be positive")
    if discharge_s <= 0 or rest_s < 0:
        raise ValidationError("discharge duration must be positive, rest non-negative")
    n_dis = _count(discharge_s, dt, "discharge duration")
    n_rest = _count(rest_s, dt, "rest duration")
    i = np.concatenate([np.full(n_dis, c_rate * q), np.zeros(n_rest)])
    t = np.arange(n_dis + n_rest) * dt
    meta = {"label": "constant_discharge_rest", "c_rate": c_rate,
            "discharge_s": discharge_s, "rest_s": rest_s, "dt": dt, "q": q}
    return CurrentProfile(t, i, meta)


def synth_regd(duration_s: float = 2400.0, step_s: float = 2.0,
               max_c_rate: float = 2.0, q: float = 4.85,
               zero_crossing_s: float = 4.0, seed: int = 7,
               dt: float = 1.0, mean_reversion: float = 0.85) -> CurrentProfile:
    """Synthetic frequency-regulation signal.

    A mean-reverting random walk held constant over step_s-second blocks,
    centered and rescaled so the peak magnitude is exactly max_c_rate * q,
    with one contiguous zero-current window of zero_crossing_s seconds
    inserted near mid-signal. Deterministic for a given seed. Real
    regulation dispatch data is approximately energy neutral, hence the
    mean-zero construction.
    """
    if dt <= 0 or step_s <= 0:
        raise ValidationError("dt and step_s must be positive")
    if zero_crossing_s >= duration_s:
        raise ValidationError("zero-crossing window must be shorter than the signal")
    n_steps = _count(duration_s, step_s, "signal duration")
    hold = _count(step_s, dt, "signal step")
    n_zero = _count(zero_crossing_s, dt, "zero-crossing window")

    rng = np.random.default_rng(seed)
    rho = mean_reversion
    shocks = rng.standard_normal(n_steps)
    x = np.empty(n_steps)
    x[0] = shocks[0]
    for j in range(1, n_steps):
        x[j] = rho * x[j - 1] + np.sqrt(1.0 - rho * rho) * shocks[j]
    x -= x.mean()

    i = np.repeat(x, hold)
    peak = np.max(np.abs(i))
    if max_c_rate == 0.0 or peak == 0.0:
        i = np.zeros_like(i)
    else:
        i *= max_c_rate * q / peak
    if n_zero > 0:
        start = (len(i) - n_zero) // 2
        i[start:start + n_zero] = 0.0

    t = np.arange(len(i)) * dt
    meta = {"label": "synth_regd", "duration_s": duration_s, "step_s": step_s,
            "max_c_rate": max_c_rate, "q": q, "zero_crossing_s": zero_crossing_s,
            "seed": seed, "dt": dt, "mean_reversion": mean_reversion}
    return CurrentProfile(t, i, meta)


def concatenate_with_rest(signal: CurrentProfile, copies: int, rest_s: float) -> CurrentProfile:
    """Repeat `signal` `copies` times with rest_s seconds of zero current in
    between, re-basing timestamps contiguously."""
    if copies < 1:
        raise ValidationError("need at least one copy")
    dt = signal.dt
    n_rest = _count(rest_s, dt, "inter-signal rest")
    parts = []
    for k in range(copies):
        parts.append(signal.currents)
        if k < copies - 1 and n_rest:
            parts.append(np.zeros(n_rest))
    i = np.concatenate(parts) if len(parts) > 1 else parts[0].copy()
    t = np.arange(len(i)) * dt
    meta = dict(signal.meta)
    meta.update({"label": f"{signal.meta.get('label', 'signal')}_x{copies}",
                 "copies": copies, "inter_rest_s": rest_s})
    return CurrentProfile(t, i, meta)


def load_profile_csv(path) -> CurrentProfile:
    """Read a profile from CSV with header `t,i` (seconds, amps)."""
    t, i = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip().lower() for c in header[:2]] != ["t", "i"]:
            raise ValidationError(f"{path}: expected header 't,i'")
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                t.append(float(row[0]))
                i.append(float(row[1]))
            except (ValueError, IndexError) as exc:
                raise ValidationError(f"{path}:{lineno}: bad row {row!r}") from exc
    if not t:
        raise ValidationError(f"{path}: profile has no samples")
    return CurrentProfile(np.array(t), np.array(i), {"label": "csv", "path": str(path)})


def save_profile_csv(profile: CurrentProfile, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "i"])
        for tk, ik in zip(profile.timestamps, profile.currents):
            writer.writerow([repr(float(tk)), repr(float(ik))])
