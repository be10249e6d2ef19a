"""Travel-time x fare scenario sweeps over a trip population.

Shares are expected probabilities averaged over trips of each purpose; a
Monte Carlo sampling mode exists for microsimulation-style output.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .choice import NestedLogitModel, nested_probabilities_array
from .errors import InputError, InvalidConfig, TripError
from .newmode import RH, NewModeParams, RHTrip, VotTable, inject_rh, inject_rh_arrays

log = logging.getLogger(__name__)

PURPOSES = ("HBW", "HBE", "HBS", "HBO", "NHBW", "NHBO")
TT_FACTORS = (1.0, 1.1, 1.2, 1.5)
WAITS_MIN = (0.0, 4.0, 8.0, 18.0)
FARES = (0.75, 1.5, 3.0, 6.0)


@dataclass(frozen=True)
class Trip:
    trip_id: str
    purpose: str
    auto_time_min: float
    distance_km: float
    income_group: str
    in_service_area: bool
    utilities: Mapping[str, Optional[float]]
    gc_metro_min: float

    def __post_init__(self):
        if self.purpose not in PURPOSES:
            raise InputError(f"trip {self.trip_id!r}: unknown purpose {self.purpose!r}")
        if not self.auto_time_min > 0 or not self.distance_km > 0:
            raise InputError(f"trip {self.trip_id!r}: auto time and distance must be positive")
        if self.gc_metro_min < 0:
            raise InputError(f"trip {self.trip_id!r}: negative metro generalized cost")


@dataclass(frozen=True)
class Scenario:
    tt_factor: float = 1.0
    wait_min: float = 0.0
    fare_per_km: float = 1.5
    label: str = ""
    with_rh: bool = True

    def __post_init__(self):
        if self.tt_factor < 1 or self.wait_min < 0 or self.fare_per_km < 0:
            raise InvalidConfig(f"invalid scenario {self}")
        if not self.label:
            object.__setattr__(self, "label", "no-RH" if not self.with_rh else
                               f"tt{self.tt_factor:g}_wait{self.wait_min:g}_fare{self.fare_per_km:g}")


BASELINE = Scenario(with_rh=False)


def default_grid() -> list[Scenario]:
    """No-RH baseline followed by four congestion levels x four fares."""
    grid = [BASELINE]
    for tt, wait in zip(TT_FACTORS, WAITS_MIN):
        for fare in FARES:
            grid.append(Scenario(tt, wait, fare))
    return grid


PRESETS = {
    "paper-grid": default_grid,
    "fig2-base": lambda: [BASELINE, Scenario(1.0, 0.0, 3.0, "fig2-base")],
}


def preset(name: str) -> list[Scenario]:
    try:
        return PRESETS[name]()
    except KeyError:
        raise InvalidConfig(f"unknown grid preset {name!r}; known: {sorted(PRESETS)}") from None


@dataclass
class ModalSplit:
    scenario: Scenario
    shares: dict[str, dict[str, float]]
    counts: dict[str, int]

    @property
    def mass_deviation(self) -> dict[str, float]:
        return {p: sum(s.values()) - 1.0 for p, s in self.shares.items()}


def _vot_column(trips, vot_table):
    out = np.empty(len(trips))
    for i, t in enumerate(trips):
        try:
            out[i] = vot_table.lookup(t.income_group, t.purpose)
        except InputError as exc:
            raise TripError(t.trip_id, exc) from exc
    return out


def _locate_failure(trips, model, params, vot_table, scenario, exc):
    for t in trips:
        trip = RHTrip(t.purpose, t.income_group,
                      scenario.tt_factor * t.auto_time_min + scenario.wait_min,
                      t.distance_km, t.gc_metro_min, t.in_service_area)
        try:
            inject_rh(model, dict(t.utilities), trip, params, vot_table)
        except InputError as inner:
            raise TripError(t.trip_id, inner) from inner
    raise exc


def _purpose_probs(trips, model, params, vot_table, scenario):
    modes = list(model.modes)
    unknown = {m for t in trips for m in t.utilities} - set(modes)
    if unknown:
        raise InputError(f"trip utilities for modes not in the model: {sorted(unknown)}")
    n = len(trips)
    U = np.zeros((n, len(modes)))
    A = np.zeros((n, len(modes)), dtype=bool)
    for i, t in enumerate(trips):
        for j, m in enumerate(modes):
            v = t.utilities.get(m)
            if v is not None:
                U[i, j] = v
                A[i, j] = True
    if not scenario.with_rh:
        P = np.zeros((n, len(modes) + 1))
        try:
            P[:, :-1] = nested_probabilities_array(model, modes, U, A)[0]
        except InputError:
            for t in trips:
                if not any(v is not None for v in t.utilities.values()):
                    raise TripError(t.trip_id, "no available mode") from None
            raise
        return modes, P
    auto = np.array([t.auto_time_min for t in trips])
    dist = np.array([t.distance_km for t in trips])
    gcm = np.array([t.gc_metro_min for t in trips])
    area = np.array([t.in_service_area for t in trips], dtype=bool)
    vots = np.ones(n)
    if area.any():
        vots[area] = _vot_column([t for t, a in zip(trips, area) if a], vot_table)
    p = replace(params, fare_per_km=scenario.fare_per_km)
    try:
        P, _ = inject_rh_arrays(model, modes, U, A,
                                scenario.tt_factor * auto + scenario.wait_min,
                                dist, vots, gcm, area, p)
    except InputError as exc:
        _locate_failure(trips, model, p, vot_table, scenario, exc)
    return modes, P


def run_scenario(trips: Sequence[Trip], base_model: NestedLogitModel,
                 params: NewModeParams, vot_table: VotTable, scenario: Scenario,
                 rng: Optional[np.random.Generator] = None) -> ModalSplit:
    """Per-purpose modal split for one scenario.

    Ride-hailing time is ``tt_factor * auto time + wait`` and its money cost
    ``distance * fare``. Trips outside the service area (and every trip in
    a no-RH scenario) keep their base nested-logit probabilities.

    When ``rng`` is given, one mode is drawn per trip and shares are
    sample frequencies instead of mean probabilities.
    """
    if not trips:
        raise InputError("no trips")
    by_purpose: dict[str, list[Trip]] = {}
    for t in trips:
        by_purpose.setdefault(t.purpose, []).append(t)
    shares, counts = {}, {}
    for purpose in [p for p in PURPOSES if p in by_purpose]:
        group = by_purpose[purpose]
        model = base_model.for_purpose(purpose)
        modes, P = _purpose_probs(group, model, params, vot_table, scenario)
        labels = modes + [RH]
        if rng is not None:
            if params.variant != "normalized":
                raise InputError("sampling requires the normalized variant")
            cum = np.cumsum(P, axis=1)
            draws = (rng.random(len(group))[:, None] * cum[:, -1:] > cum).sum(axis=1)
            mean = np.bincount(draws, minlength=len(labels)) / len(group)
        else:
            mean = P.sum(axis=0) / len(group)
        shares[purpose] = dict(zip(labels, mean.tolist()))
        counts[purpose] = len(group)
    return ModalSplit(scenario, shares, counts)


@dataclass
class SweepResult:
    splits: list[ModalSplit] = field(default_factory=list)
    variant: str = "normalized"

    def long_rows(self) -> list[dict]:
        rows = []
        for split in self.splits:
            for purpose, shares in split.shares.items():
                for mode, share in shares.items():
                    rows.append({**_scenario_cols(split.scenario), "purpose": purpose,
                                 "mode": mode, "share": share,
                                 "n_trips": split.counts[purpose]})
        return rows

    def summary_rows(self) -> list[dict]:
        rows = []
        for split in self.splits:
            dev = split.mass_deviation
            for purpose, shares in split.shares.items():
                row = {**_scenario_cols(split.scenario), "purpose": purpose,
                       "rh_share": shares[RH], "n_trips": split.counts[purpose]}
                if self.variant == "as-printed":
                    row["mass_deviation"] = dev[purpose]
                rows.append(row)
        return rows

    def rh_share(self, label: str, purpose: str) -> float:
        for split in self.splits:
            if split.scenario.label == label:
                return split.shares[purpose][RH]
        raise KeyError(label)


def _scenario_cols(s: Scenario) -> dict:
    if not s.with_rh:
        return {"scenario_label": s.label, "tt_factor": "", "wait_min": "", "fare": ""}
    return {"scenario_label": s.label, "tt_factor": s.tt_factor, "wait_min": s.wait_min,
            "fare": s.fare_per_km}


def sweep(trips: Sequence[Trip], base_model: NestedLogitModel, params: NewModeParams,
          vot_table: VotTable, grid: Sequence[Scenario], workers: int = 1,
          seed: Optional[int] = None) -> SweepResult:
    """Run every scenario of ``grid``; results keep grid order.

    ``seed`` switches on sampling mode; each scenario then gets its own
    generator spawned from the seed, so output does not depend on
    ``workers``.
    """
    if not grid:
        raise InvalidConfig("empty scenario grid")
    labels = [s.label for s in grid]
    if len(set(labels)) != len(labels):
        raise InvalidConfig("duplicate scenario labels")
    rngs = [None] * len(grid)
    if seed is not None:
        rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(len(grid))]

    def one(i):
        return run_scenario(trips, base_model, params, vot_table, grid[i], rngs[i])

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            splits = list(pool.map(one, range(len(grid))))
    else:
        splits = [one(i) for i in range(len(grid))]
    return SweepResult(splits, params.variant)


@dataclass
class SyntheticTripConfig:
    """Distributions for the stand-in trip population.

    Distances are log-normal; auto time is distance over a uniformly drawn
    speed plus a fixed terminal time. Base-mode utilities are
    ``asc + beta_gc * generalized cost`` with money converted at the trip's
    income-group value of time.
    """

    purpose_mix: Mapping[str, float] = field(default_factory=lambda: {
        "HBW": 0.2, "HBE": 0.1, "HBS": 0.15, "HBO": 0.25, "NHBW": 0.1, "NHBO": 0.2})
    income_mix: Mapping[str, float] = field(default_factory=lambda: {
        "<1500": 0.3, "1500-5600": 0.55, ">5600": 0.15})
    vot_by_income: Mapping[str, float] = field(default_factory=lambda: {
        "<1500": 7.0, "1500-5600": 12.0, ">5600": 18.0})
    service_area_fraction: float = 0.6
    distance_median_km: float = 6.0
    distance_log_sd: float = 0.8
    distance_bounds_km: tuple[float, float] = (0.5, 60.0)
    auto_speed_kmh: tuple[float, float] = (18.0, 45.0)
    auto_terminal_min: float = 3.0
    beta_gc: float = -0.05
    asc: Mapping[str, float] = field(default_factory=lambda: {
        "walk": 0.6, "bicycle": -0.2, "autoDriver": 0.8, "autoPassenger": -0.5,
        "bus": -0.4, "metro": 0.0, "train": -0.2})
    train_availability: float = 0.5
    driver_availability: float = 0.8

    def validate(self):
        for name in ("purpose_mix", "income_mix"):
            mix = getattr(self, name)
            if any(v < 0 for v in mix.values()) or abs(sum(mix.values()) - 1) > 1e-9:
                raise InvalidConfig(f"{name} must be non-negative and sum to 1")
        bad = set(self.purpose_mix) - set(PURPOSES)
        if bad:
            raise InvalidConfig(f"unknown purposes {sorted(bad)}")
        if set(self.income_mix) - set(self.vot_by_income):
            raise InvalidConfig("vot_by_income must cover every income group")
        if any(v <= 0 for v in self.vot_by_income.values()):
            raise InvalidConfig("values of time must be positive")
        if not 0 <= self.service_area_fraction <= 1:
            raise InvalidConfig("service_area_fraction must lie in [0, 1]")
        lo, hi = self.auto_speed_kmh
        if not 0 < lo <= hi:
            raise InvalidConfig("invalid auto speed range")
        if self.beta_gc >= 0:
            raise InvalidConfig("beta_gc must be negative")

    @classmethod
    def from_dict(cls, d: Mapping) -> "SyntheticTripConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known - {"count"}
        if extra:
            raise InvalidConfig(f"unknown synthetic trip settings {sorted(extra)}")
        kw = {k: v for k, v in d.items() if k in known}
        for k in ("distance_bounds_km", "auto_speed_kmh"):
            if k in kw:
                kw[k] = tuple(kw[k])
        return cls(**kw)


def generate_synthetic_trips(seed: int, count: int,
                             config: Optional[SyntheticTripConfig] = None) -> list[Trip]:
    config = config or SyntheticTripConfig()
    if count <= 0:
        raise InvalidConfig("count must be positive")
    config.validate()
    rng = np.random.default_rng(seed)
    purposes = list(config.purpose_mix)
    incomes = list(config.income_mix)
    purpose = rng.choice(purposes, count, p=list(config.purpose_mix.values()))
    income = rng.choice(incomes, count, p=list(config.income_mix.values()))
    lo, hi = config.distance_bounds_km
    dist = np.clip(config.distance_median_km * np.exp(rng.normal(0, config.distance_log_sd, count)),
                   lo, hi)
    speed = rng.uniform(*config.auto_speed_kmh, count)
    auto_time = 60 * dist / speed + config.auto_terminal_min
    in_area = rng.random(count) < config.service_area_fraction
    train_ok = rng.random(count) < config.train_availability
    driver_ok = rng.random(count) < config.driver_availability
    noise = rng.normal(0, 0.3, (count, 7))

    vot = np.array([config.vot_by_income[g] for g in income]) / 60.0
    times = {
        "walk": 60 * dist / 4.8,
        "bicycle": 60 * dist / 14.0,
        "autoDriver": auto_time,
        "autoPassenger": auto_time,
        "bus": 60 * dist / 16.0 + 8.0,
        "metro": 60 * dist / 30.0 + 9.0,
        "train": 60 * dist / 45.0 + 14.0,
    }
    money = {
        "walk": 0.0, "bicycle": 0.0,
        "autoDriver": 0.3 * dist + 1.0, "autoPassenger": 0.0,
        "bus": np.full(count, 3.3), "metro": np.full(count, 3.3), "train": np.full(count, 3.3),
    }
    avail = {
        "walk": dist < 8.0, "bicycle": dist < 25.0, "autoDriver": driver_ok,
        "autoPassenger": np.ones(count, bool), "bus": np.ones(count, bool),
        "metro": np.ones(count, bool), "train": train_ok,
    }
    gc = {m: times[m] + money[m] / vot for m in times}
    trips = []
    for i in range(count):
        u = {}
        for k, m in enumerate(times):
            if avail[m][i]:
                u[m] = float(config.asc.get(m, 0.0) + config.beta_gc * gc[m][i] + noise[i, k])
            else:
                u[m] = None
        trips.append(Trip(
            trip_id=f"t{i:07d}", purpose=str(purpose[i]), auto_time_min=float(auto_time[i]),
            distance_km=float(dist[i]), income_group=str(income[i]),
            in_service_area=bool(in_area[i]), utilities=u, gc_metro_min=float(gc["metro"][i])))
    return trips
