"""Stochastic seasonal influenza model (susceptible-latent-infectious-removed).

Each requested US state runs as an independent well-mixed population with
daily time steps. New latent infections are binomial draws with probability
1 - exp(-beta(t) * I / N), where

    beta(t) = (R0 / D_inf) * (1 + alpha * cos(2*pi*(doy - 15)/365)),

doy the calendar day of year, D_inf = 2.5 days, and alpha the seasonal
amplitude (0 / 0.15 / 0.30 for none / moderate / strong). Progression
L -> I and I -> R are binomial with daily probabilities 1/1.5 and 1/2.5;
using the rates directly as probabilities keeps the discrete-time
mean-field final size on the classic z = 1 - exp(-R0 z) curve.

Hospital prevalence is 1% of the infectious compartment, summed over
states. The stochastic mode draws one independent RNG stream per ensemble
member (SeedSequence spawn keyed by member index), so results are exactly
reproducible and insensitive to execution order. The mean-field mode
replaces draws with expectations and pins R = N - S - L - I so the
conservation identity holds despite float arithmetic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from datetime import date, timedelta
from functools import lru_cache

import numpy as np

from .._assets import asset_text
from ..domain import Handbook, ParamSettings, Scalar, SimulationOutput
from ..errors import EmptyEnsemble, OutOfRangeParam, ValidationFailed

LATENT_DAYS = 1.5
INFECTIOUS_DAYS = 2.5
HOSPITAL_FRACTION = 0.01
INITIAL_INFECTIOUS = 10
SEASONAL_AMPLITUDE = {"none": 0.0, "moderate": 0.15, "strong": 0.30}
SEASONAL_PEAK_DOY = 15

# Compartment indices in the trajectory array.
S, L, I, R = 0, 1, 2, 3

GROWTH_PHASE_BOUNDS_WEEKS = (1.5, 3.0)  # explosive < 1.5 <= rapid < 3.0 <= gradual


@lru_cache(maxsize=1)
def handbook() -> Handbook:
    return Handbook.from_dict(json.loads(asset_text("handbooks/epidemiology.json")))


def transmission_rate(r0: float, alpha: float, day_of_year: int) -> float:
    seasonal = 1.0 + alpha * math.cos(2.0 * math.pi * (day_of_year - SEASONAL_PEAK_DOY) / 365.0)
    return (r0 / INFECTIOUS_DAYS) * seasonal


def _day_of_year_sequence(start: date, days: int) -> np.ndarray:
    return np.array([(start + timedelta(days=t)).timetuple().tm_yday for t in range(days)])


def simulate_compartments(
    values: dict,
    seed: int,
    ensemble_size: int,
    mode: str = "stochastic",
) -> np.ndarray:
    """Run the SLIR process; returns array (member, state, day, compartment).

    Day axis has horizon_days + 1 entries including the initial condition.
    Stochastic mode returns int64 counts; mean_field returns float64
    expectations with ensemble_size forced to 1.
    """
    if mode not in ("stochastic", "mean_field"):
        raise OutOfRangeParam(f"unknown simulation mode {mode!r}")
    r0 = float(values["R0"])
    alpha = SEASONAL_AMPLITUDE[values["seasonality"]]
    immunity = float(values["prior_immunity"])
    start = date.fromisoformat(values["start_date"])
    n_states = len(values["states"])
    horizon = int(values["horizon_days"])
    population = int(values["population"])

    doy = _day_of_year_sequence(start, horizon)
    beta = np.array([transmission_rate(r0, alpha, int(d)) for d in doy])

    if mode == "mean_field":
        ensemble_size = 1
        out = np.zeros((1, n_states, horizon + 1, 4), dtype=np.float64)
        initial_removed = min(immunity * population, float(population - INITIAL_INFECTIOUS))
        s = np.full(n_states, population - INITIAL_INFECTIOUS - initial_removed)
        latent = np.zeros(n_states)
        inf = np.full(n_states, float(INITIAL_INFECTIOUS))
        out[0, :, 0, S] = s
        out[0, :, 0, L] = latent
        out[0, :, 0, I] = inf
        out[0, :, 0, R] = population - s - latent - inf
        for t in range(horizon):
            p_inf = 1.0 - np.exp(-beta[t] * inf / population)
            new_latent = s * p_inf
            new_inf = latent / LATENT_DAYS
            new_rec = inf / INFECTIOUS_DAYS
            s = s - new_latent
            latent = latent + new_latent - new_inf
            inf = inf + new_inf - new_rec
            out[0, :, t + 1, S] = s
            out[0, :, t + 1, L] = latent
            out[0, :, t + 1, I] = inf
            out[0, :, t + 1, R] = population - s - latent - inf
        return out

    p_li = 1.0 / LATENT_DAYS
    p_ir = 1.0 / INFECTIOUS_DAYS
    out = np.zeros((ensemble_size, n_states, horizon + 1, 4), dtype=np.int64)
    initial_removed = min(int(round(immunity * population)), population - INITIAL_INFECTIOUS)
    for member in range(ensemble_size):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(member,)))
        s = np.full(n_states, population - INITIAL_INFECTIOUS - initial_removed, dtype=np.int64)
        latent = np.zeros(n_states, dtype=np.int64)
        inf = np.full(n_states, INITIAL_INFECTIOUS, dtype=np.int64)
        rec = np.full(n_states, initial_removed, dtype=np.int64)
        out[member, :, 0] = np.stack([s, latent, inf, rec], axis=1)
        for t in range(horizon):
            p_inf = 1.0 - np.exp(-beta[t] * inf / population)
            new_latent = rng.binomial(s, p_inf)
            new_inf = rng.binomial(latent, p_li)
            new_rec = rng.binomial(inf, p_ir)
            s = s - new_latent
            latent = latent + new_latent - new_inf
            inf = inf + new_inf - new_rec
            rec = rec + new_rec
            out[member, :, t + 1] = np.stack([s, latent, inf, rec], axis=1)
    return out


def hospital_trajectories(compartments: np.ndarray) -> np.ndarray:
    """Per-member hospital prevalence: 1% of infectious, summed over states."""
    return HOSPITAL_FRACTION * compartments[:, :, :, I].sum(axis=1)


@dataclass(frozen=True)
class OutbreakSummary:
    """Ensemble-level description of one simulated season."""

    peak_hospital_prevalence_median: float
    peak_week: float
    growth_phase: str
    trajectory_quantiles: dict

    def to_dict(self) -> dict:
        return {
            "peak_hospital_prevalence_median": self.peak_hospital_prevalence_median,
            "peak_week": self.peak_week,
            "growth_phase": self.growth_phase,
            "trajectory_quantiles": {
                key: list(self.trajectory_quantiles[key]) for key in ("q25", "q50", "q75")
            },
        }


def _doubling_time_weeks(traj: np.ndarray) -> float:
    """Early doubling time of one trajectory, in weeks; inf when not growing.

    Fits log prevalence from day 0 through the day the trajectory first
    reaches half its peak, which brackets the exponential phase without
    touching the saturation bend.
    """
    peak_idx = int(np.argmax(traj))
    peak = traj[peak_idx]
    if peak <= 0:
        return math.inf
    half = peak / 2.0
    end = next(t for t in range(peak_idx + 1) if traj[t] >= half)
    end = max(end, 2)
    window = traj[: end + 1]
    days = np.arange(len(window))
    positive = window > 0
    if positive.sum() < 3:
        return math.inf
    slope = np.polyfit(days[positive], np.log(window[positive]), 1)[0]
    if slope <= 0:
        return math.inf
    return math.log(2.0) / slope / 7.0


def summarize_trajectories(traj: np.ndarray) -> OutbreakSummary:
    if traj.ndim != 2 or traj.shape[0] == 0:
        raise EmptyEnsemble("need at least one trajectory to summarize")
    peaks = traj.max(axis=1)
    peak_days = traj.argmax(axis=1)
    doubling = [_doubling_time_weeks(traj[k]) for k in range(traj.shape[0])]
    med_doubling = float(np.median(doubling))
    if med_doubling < GROWTH_PHASE_BOUNDS_WEEKS[0]:
        phase = "explosive"
    elif med_doubling < GROWTH_PHASE_BOUNDS_WEEKS[1]:
        phase = "rapid"
    else:
        phase = "gradual"
    q25, q50, q75 = np.quantile(traj, [0.25, 0.50, 0.75], axis=0)
    return OutbreakSummary(
        peak_hospital_prevalence_median=float(np.median(peaks)),
        peak_week=round(float(np.median(peak_days)) / 7.0, 1),
        growth_phase=phase,
        trajectory_quantiles={"q25": q25.tolist(), "q50": q50.tolist(), "q75": q75.tolist()},
    )


def summarize_ensemble(output: SimulationOutput) -> OutbreakSummary:
    """Recompute the outbreak summary from an output's stored trajectories."""
    members = sorted(key for key in output.series if key.startswith("trajectory/m"))
    if not members:
        raise EmptyEnsemble("output carries no trajectory series")
    traj = np.array([output.series[key] for key in members], dtype=float)
    return summarize_trajectories(traj)


def run(
    settings: ParamSettings,
    seed: int,
    ensemble_size: int = 100,
    mode: str = "stochastic",
    validate: bool = True,
) -> SimulationOutput:
    """Simulate one parameter assignment and package ensemble results.

    ``validate=False`` skips handbook range checks (used by tests probing
    degenerate corners like R0 = 0); defaults are still applied.
    """
    if ensemble_size < 1:
        raise OutOfRangeParam("ensemble_size must be >= 1")
    if validate:
        try:
            values = handbook().validate_values(dict(settings.values))
        except ValidationFailed as exc:
            raise OutOfRangeParam(str(exc)) from exc
    else:
        values = dict(settings.values)
        for spec in handbook().params:
            if spec.name not in values and spec.default is not None:
                values[spec.name] = spec.default
    compartments = simulate_compartments(values, seed, ensemble_size, mode)
    traj = hospital_trajectories(compartments)
    summary = summarize_trajectories(traj)
    series = {
        "hospital_prevalence_q25": summary.trajectory_quantiles["q25"],
        "hospital_prevalence_q50": summary.trajectory_quantiles["q50"],
        "hospital_prevalence_q75": summary.trajectory_quantiles["q75"],
    }
    for member in range(traj.shape[0]):
        series[f"trajectory/m{member:03d}"] = traj[member].tolist()
    return SimulationOutput(
        params=settings,
        scalars={
            "peak_hospital_prevalence_median": Scalar(
                summary.peak_hospital_prevalence_median, "patients"
            ),
            "peak_week": Scalar(summary.peak_week, "weeks"),
        },
        labels={"growth_phase": summary.growth_phase},
        series=series,
        seed=seed,
        ensemble_size=traj.shape[0],
    )


def attack_rate(compartments: np.ndarray) -> np.ndarray:
    """Per-member fraction of the initially susceptible eventually infected."""
    s0 = compartments[:, :, 0, S].sum(axis=1).astype(float)
    s_end = compartments[:, :, -1, S].sum(axis=1).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        rate = np.where(s0 > 0, (s0 - s_end) / s0, 0.0)
    return rate
