"""Value of time and incremental-logit injection of ride-hailing.

Ride-hailing enters the transit nest of a calibrated nested logit model as a
pivot off metro: its utility is metro's utility shifted by the metro
generalized-cost coefficient times the generalized-cost difference. Transit's
top-level probability is then pivoted from its base value and the other
top-level alternatives are rescaled proportionally.

Generalized costs are expressed in equivalent minutes; money converts to
minutes at ``VOT / 60`` euro per minute.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional

import numpy as np

from .choice import (NestedLogitModel, mnl_probabilities, nest_logsum,
                     nested_probabilities, nested_probabilities_array,
                     top_level_utilities)
from .errors import (DegenerateBase, InputError, MissingVot, NonpositiveVot,
                     ReferenceModeUnavailable, ZeroCostCoefficient)

RH = "rideHailing"
VARIANTS = ("normalized", "as-printed")


def vot(beta_time: float, beta_cost: float) -> float:
    """Value of time in euro per hour from per-minute and per-euro coefficients."""
    if beta_cost == 0:
        raise ZeroCostCoefficient("cost coefficient is zero")
    return beta_time / beta_cost * 60.0


def time_sensitivity_ratio(beta_time_rh: float, beta_time_metro: float) -> float:
    """Ratio of the ride-hailing to the metro travel-time coefficient."""
    if beta_time_metro == 0:
        raise InputError("metro time coefficient is zero")
    ratio = beta_time_rh / beta_time_metro
    if ratio <= 0:
        raise InputError("time coefficients must share a sign")
    return ratio


@dataclass(frozen=True)
class GeneralizedCost:
    time_part: float
    money_part: float

    @property
    def value(self) -> float:
        return self.time_part + self.money_part


def generalized_cost(time_min: float, money_eur: float, vot_eur_per_hr: float,
                     time_ratio: float = 1.0) -> GeneralizedCost:
    if vot_eur_per_hr <= 0:
        raise NonpositiveVot(f"value of time must be positive, got {vot_eur_per_hr}")
    if time_min < 0 or money_eur < 0:
        raise InputError("time and money must be non-negative")
    return GeneralizedCost(time_ratio * time_min, money_eur / (vot_eur_per_hr / 60.0))


@dataclass(frozen=True)
class NewModeParams:
    """Inputs of the ride-hailing pivot.

    ``nc`` and ``beta_gc_metro`` default to the base model's transit-nest
    nesting coefficient and its ``beta_gc_metro`` coefficient.
    """

    delta_ratio: float
    fare_per_km: float
    beta_gc_metro: Optional[float] = None
    nc: Optional[float] = None
    variant: str = "normalized"

    def __post_init__(self):
        if self.delta_ratio <= 0:
            raise InputError("delta_ratio must be positive")
        if self.fare_per_km < 0:
            raise InputError("fare_per_km must be non-negative")
        if self.beta_gc_metro is not None and self.beta_gc_metro >= 0:
            raise InputError("beta_gc_metro must be negative")
        if self.nc is not None and not 0 < self.nc <= 1:
            raise InputError("nc must lie in (0, 1]")
        if self.variant not in VARIANTS:
            raise InputError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    def resolve(self, model: NestedLogitModel) -> tuple["NewModeParams", NestedLogitModel]:
        """Fill defaults from ``model`` and return the model with the same nc."""
        transit = model.nest(model.transit_nest)
        nc = transit.nc if self.nc is None else self.nc
        beta = self.beta_gc_metro
        if beta is None:
            if "beta_gc_metro" not in model.coefficients:
                raise InputError("beta_gc_metro given neither in params nor in model")
            beta = model.coefficients["beta_gc_metro"]
        params = replace(self, nc=nc, beta_gc_metro=beta)
        if nc != transit.nc:
            model = replace(model, nests=tuple(
                replace(n, nc=nc) if n.name == transit.name else n for n in model.nests))
        return params, model


def generalized_cost_rh(time_rh: float, distance_rh: float, params: NewModeParams,
                        vot_rh: float) -> GeneralizedCost:
    """Ride-hailing generalized cost in metro-equivalent minutes."""
    if distance_rh < 0:
        raise InputError("distance must be non-negative")
    return generalized_cost(time_rh, distance_rh * params.fare_per_km, vot_rh,
                            params.delta_ratio)


@dataclass
class VotTable:
    """Value of time (euro/hour) by (income group, purpose).

    ``group_map`` and ``purpose_map`` translate the groups and purposes of
    the trips being evaluated into the table's own keys, for instance three
    base-model income bands onto two survey bands. Unmapped keys are used
    as they are.
    """

    values: Mapping[tuple[str, str], float]
    group_map: Mapping[str, str] = field(default_factory=dict)
    purpose_map: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for key, v in self.values.items():
            if not v > 0:
                raise NonpositiveVot(f"value of time for {key} must be positive")

    def lookup(self, group: str, purpose: str) -> float:
        key = (self.group_map.get(group, group), self.purpose_map.get(purpose, purpose))
        try:
            return self.values[key]
        except KeyError:
            raise MissingVot(
                f"no value of time for income group {group!r}, purpose {purpose!r} "
                f"(looked up {key})") from None

    def require(self, pairs: Iterable[tuple[str, str]]) -> None:
        for group, purpose in pairs:
            self.lookup(group, purpose)

    @classmethod
    def from_records(cls, records: Iterable[Mapping], group_map=None,
                     purpose_map=None) -> "VotTable":
        values = {}
        for r in records:
            key = (str(r["income_group"]), str(r["purpose"]))
            if key in values:
                raise InputError(f"duplicate value of time entry {key}")
            values[key] = float(r["vot"])
        return cls(values, dict(group_map or {}), dict(purpose_map or {}))


def utility_rh(u_metro: float, beta_gc_metro: float, gc_rh: float, gc_metro: float) -> float:
    """Ride-hailing utility pivoted off metro."""
    return u_metro + beta_gc_metro * (gc_rh - gc_metro)


def _lse(values):
    m = max(values)
    if m == -math.inf:
        return m
    return m + math.log(math.fsum(math.exp(v - m) for v in values))


def prob_rh_within_transit(u_rh: float, u_metro: float,
                           u_others: Mapping[str, Optional[float]], nc: float,
                           variant: str = "normalized") -> float:
    """Conditional ride-hailing share inside the transit nest.

    ``u_others`` holds the remaining transit members (bus, train); ``None``
    marks an unavailable member. In the ``as-printed`` variant ride-hailing
    is left out of its own denominator, so shares inside the nest no longer
    add up to one.
    """
    if variant not in VARIANTS:
        raise InputError(f"unknown variant {variant!r}")
    a_rh = (u_rh - u_metro) / nc
    terms = [0.0] + [(u - u_metro) / nc for u in u_others.values() if u is not None]
    if variant == "normalized":
        terms.append(a_rh)
    if a_rh == -math.inf:
        return 0.0
    return math.exp(a_rh - _lse(terms))


def transit_share(top_level: Mapping[str, float], transit_nest: str = "transit") -> float:
    """Top-level transit probability from nest composite utilities."""
    return math.exp(top_level[transit_nest] - _lse(list(top_level.values())))


def prob_transit_new(new_transit_logsum: float, top_level: Mapping[str, float],
                     p_transit_base: float) -> float:
    """Pivoted top-level transit probability.

    ``top_level`` holds the base composite utility of every available
    top-level alternative, transit's base logsum included, so
    ``q = exp(new logsum) / sum(exp(top_level))`` and the result is
    ``q / (q + 1 - p_transit_base)``.
    """
    if not 0.0 < p_transit_base < 1.0:
        raise DegenerateBase(f"base transit probability {p_transit_base} not in (0, 1)")
    z = new_transit_logsum - _lse(list(top_level.values()))
    if z > 700:
        return 1.0 / (1.0 + (1.0 - p_transit_base) * math.exp(-z))
    q = math.exp(z)
    return q / (q + (1.0 - p_transit_base))


@dataclass(frozen=True)
class RHTrip:
    """Trip-level inputs the pivot needs beyond the base utilities."""

    purpose: str
    income_group: str
    time_rh_min: float
    distance_km: float
    gc_metro_min: float
    in_service_area: bool = True


def inject_rh(base_model: NestedLogitModel, base_utilities: Mapping[str, Optional[float]],
              trip: RHTrip, params: NewModeParams, vot_table: VotTable) -> dict[str, float]:
    """Mode probabilities for one trip after adding ride-hailing.

    Returns one entry per base-model mode plus ``rideHailing``. Outside the
    service area ride-hailing gets probability 0 and base shares are
    returned unchanged. In the ``as-printed`` variant the probabilities
    sum to more than one; the excess equals the ride-hailing probability.
    """
    params, model = params.resolve(base_model.for_purpose(trip.purpose))
    if not trip.in_service_area:
        probs = nested_probabilities(model, base_utilities)
        probs[RH] = 0.0
        return probs
    ref = model.reference_mode
    u_metro = base_utilities.get(ref)
    if u_metro is None:
        raise ReferenceModeUnavailable(f"reference mode {ref!r} is unavailable")

    vot_rh = vot_table.lookup(trip.income_group, trip.purpose)
    gc_rh = generalized_cost_rh(trip.time_rh_min, trip.distance_km, params, vot_rh).value
    u_rh = utility_rh(u_metro, params.beta_gc_metro, gc_rh, trip.gc_metro_min)

    transit = model.nest(model.transit_nest)
    members = {m: base_utilities.get(m) for m in transit.members}
    top = top_level_utilities(model, base_utilities)
    p_t = transit_share(top, transit.name)
    new_logsum = nest_logsum({**members, RH: u_rh}, transit.nc)
    p_t_new = prob_transit_new(new_logsum, top, p_t)

    others = {m: u for m, u in members.items() if m != ref}
    s_rh = prob_rh_within_transit(u_rh, u_metro, others, transit.nc, params.variant)
    scaled = {m: (None if u is None else u / transit.nc) for m, u in members.items()}
    if params.variant == "normalized":
        inner = mnl_probabilities({**scaled, RH: u_rh / transit.nc})
    else:
        inner = mnl_probabilities(scaled)

    base = nested_probabilities(model, base_utilities)
    factor = (1.0 - p_t_new) / (1.0 - p_t)
    probs = {}
    for m in model.modes:
        if m in transit.members:
            probs[m] = p_t_new * inner[m]
        else:
            probs[m] = base[m] * factor
    probs[RH] = p_t_new * s_rh
    return probs


def inject_rh_arrays(model: NestedLogitModel, modes, utilities: np.ndarray,
                     available: np.ndarray, time_rh: np.ndarray, distance_km: np.ndarray,
                     vot_rh: np.ndarray, gc_metro: np.ndarray, in_service_area: np.ndarray,
                     params: NewModeParams):
    """Vectorised :func:`inject_rh` for trips sharing one purpose.

    Returns an ``(n, len(modes) + 1)`` probability matrix whose last column
    is ride-hailing, together with the base probabilities ``(n, len(modes))``.
    """
    params, model = params.resolve(model)
    modes = list(modes)
    col = {m: j for j, m in enumerate(modes)}
    base, logsums, p_nest = nested_probabilities_array(model, modes, utilities, available)
    n = utilities.shape[0]
    out = np.zeros((n, len(modes) + 1))
    out[:, :-1] = base
    area = np.asarray(in_service_area, dtype=bool)
    if not area.any():
        return out, base

    ref = model.reference_mode
    transit = model.nest(model.transit_nest)
    if ref not in col or not available[area, col[ref]].all():
        raise ReferenceModeUnavailable(f"reference mode {ref!r} is unavailable")
    if np.any(np.asarray(vot_rh)[area] <= 0):
        raise NonpositiveVot("value of time must be positive")
    nc = transit.nc
    idx = np.flatnonzero(area)
    U, A = utilities[idx], available[idx]
    u_metro = U[:, col[ref]]
    gc_rh = params.delta_ratio * time_rh[idx] + \
        distance_km[idx] * params.fare_per_km / (vot_rh[idx] / 60.0)
    u_rh = u_metro + params.beta_gc_metro * (gc_rh - gc_metro[idx])

    tcols = [col[m] for m in transit.members if m in col]
    scaled = np.where(A[:, tcols], U[:, tcols] / nc, -np.inf)
    both = np.column_stack([scaled, u_rh / nc])
    mx = both.max(axis=1)
    e = np.exp(both - mx[:, None])
    tot_new = e.sum(axis=1)
    new_logsum = nc * (mx + np.log(tot_new))

    p_t = p_nest[transit.name][idx]
    if np.any((p_t <= 0) | (p_t >= 1)):
        raise DegenerateBase("base transit probability not in (0, 1)")
    names = [k for k in logsums]
    top = np.column_stack([logsums[k][idx] for k in names])
    top = np.where(np.isnan(top), -np.inf, top)
    tm = top.max(axis=1)
    log_d = tm + np.log(np.exp(top - tm[:, None]).sum(axis=1))
    z = new_logsum - log_d
    with np.errstate(over="ignore"):
        q = np.exp(np.minimum(z, 700.0))
    p_t_new = np.where(z > 700, 1.0 / (1.0 + (1.0 - p_t) * np.exp(-np.abs(z))),
                       q / (q + (1.0 - p_t)))

    if params.variant == "normalized":
        inner = e / tot_new[:, None]
    else:
        bm = scaled.max(axis=1)
        eb = np.exp(scaled - bm[:, None])
        tb = eb.sum(axis=1)
        with np.errstate(over="ignore"):
            inner = np.column_stack([eb / tb[:, None], np.exp(u_rh / nc - bm) / tb])
    factor = (1.0 - p_t_new) / (1.0 - p_t)
    block = base[idx] * factor[:, None]
    for k, j in enumerate(tcols):
        block[:, j] = p_t_new * inner[:, k]
    out[idx, :-1] = block
    out[idx, -1] = p_t_new * inner[:, -1]
    return out, base
