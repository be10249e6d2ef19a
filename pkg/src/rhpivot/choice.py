"""Multinomial and two-level nested logit probabilities.

Utilities are passed as ``{mode: value}`` mappings. A mode whose value is
``None`` is unavailable: it is dropped from numerators and denominators
alike, never given a large negative number.

Two entry points exist for nested probabilities. :func:`nested_probabilities`
works on a single mapping with plain floats; :func:`nested_probabilities_array`
evaluates many decision makers at once on a utility matrix plus an
availability mask and is what the scenario runner uses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import EmptyNest, ModelStructureError, NoAvailableMode

Utilities = Mapping[str, Optional[float]]

MODES = ("walk", "bicycle", "autoDriver", "autoPassenger", "bus", "metro",
         "train", "rideHailing")


def _available(u: Utilities) -> dict[str, float]:
    out = {}
    for mode, value in u.items():
        if value is None:
            continue
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"utility of {mode!r} is not finite: {value}")
        out[mode] = value
    return out


def _logsumexp(values: Sequence[float]) -> float:
    m = max(values)
    return m + math.log(math.fsum(math.exp(v - m) for v in values))


def mnl_probabilities(u: Utilities) -> dict[str, float]:
    """Multinomial logit shares over the available modes of ``u``.

    Unavailable modes are returned with probability 0.0.
    """
    avail = _available(u)
    if not avail:
        raise NoAvailableMode("no available mode in utility vector")
    m = max(avail.values())
    expu = {k: math.exp(v - m) for k, v in avail.items()}
    total = math.fsum(expu.values())
    return {k: (expu[k] / total if k in expu else 0.0) for k in u}


def nest_logsum(members: Utilities, nc: float) -> float:
    """Composite utility ``nc * ln(sum(exp(U / nc)))`` of the available members."""
    _check_nc(nc)
    avail = _available(members)
    if not avail:
        raise EmptyNest("nest has no available member")
    return nc * _logsumexp([v / nc for v in avail.values()])


def _check_nc(nc: float) -> None:
    if not 0.0 < nc <= 1.0:
        raise ModelStructureError(f"nesting coefficient must lie in (0, 1], got {nc}")


@dataclass(frozen=True)
class Nest:
    name: str
    members: tuple[str, ...]
    nc: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        _check_nc(self.nc)
        if not self.members:
            raise EmptyNest(f"nest {self.name!r} has no members")


@dataclass(frozen=True)
class NestedLogitModel:
    """A calibrated two-level nested logit model.

    ``coefficients`` holds scalar model parameters used outside this module
    (for instance ``beta_gc_metro``). ``purpose_overrides`` maps a trip
    purpose to ``{"coefficients": {...}, "nc": {nest: value}}`` patches.
    """

    nests: tuple[Nest, ...]
    coefficients: Mapping[str, float] = field(default_factory=dict)
    reference_mode: str = "metro"
    transit_nest: str = "transit"
    purpose_overrides: Mapping[str, Mapping] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "nests", tuple(self.nests))
        seen = set()
        names = set()
        for nest in self.nests:
            if nest.name in names:
                raise ModelStructureError(f"duplicate nest name {nest.name!r}")
            names.add(nest.name)
            for mode in nest.members:
                if mode in seen:
                    raise ModelStructureError(
                        f"mode {mode!r} belongs to more than one nest")
                seen.add(mode)
        for purpose, patch in self.purpose_overrides.items():
            unknown = set(patch.get("nc", {})) - names
            if unknown:
                raise ModelStructureError(
                    f"override for {purpose!r} names unknown nests {sorted(unknown)}")

    @property
    def modes(self) -> tuple[str, ...]:
        return tuple(m for nest in self.nests for m in nest.members)

    def nest_of(self, mode: str) -> Nest:
        for nest in self.nests:
            if mode in nest.members:
                return nest
        raise ModelStructureError(f"mode {mode!r} is not part of the model")

    def nest(self, name: str) -> Nest:
        for nest in self.nests:
            if nest.name == name:
                return nest
        raise ModelStructureError(f"no nest named {name!r}")

    def with_member(self, nest_name: str, mode: str) -> "NestedLogitModel":
        """Copy of the model with ``mode`` appended to ``nest_name``."""
        nests = tuple(
            replace(n, members=n.members + (mode,)) if n.name == nest_name else n
            for n in self.nests)
        self.nest(nest_name)
        return replace(self, nests=nests)

    def for_purpose(self, purpose: str) -> "NestedLogitModel":
        patch = self.purpose_overrides.get(purpose)
        if not patch:
            return self
        nc = patch.get("nc", {})
        nests = tuple(replace(n, nc=float(nc[n.name])) if n.name in nc else n
                      for n in self.nests)
        coefs = dict(self.coefficients)
        coefs.update(patch.get("coefficients", {}))
        return replace(self, nests=nests, coefficients=coefs, purpose_overrides={})

    @classmethod
    def from_dict(cls, d: Mapping) -> "NestedLogitModel":
        """Build a model from its JSON representation.

        Nests must list mode names as members; a member that is itself a
        nest (a mapping) would make a deeper tree and is rejected.
        """
        if "nests" not in d:
            raise ModelStructureError("model definition has no 'nests'")
        nests = []
        for raw in d["nests"]:
            members = raw.get("members", [])
            if any(not isinstance(m, str) for m in members) or "nests" in raw:
                raise ModelStructureError(
                    f"nest {raw.get('name')!r}: only two-level nesting is supported")
            nests.append(Nest(raw["name"], tuple(members), float(raw.get("nc", 1.0))))
        model = cls(
            nests=tuple(nests),
            coefficients={k: float(v) for k, v in d.get("coefficients", {}).items()},
            reference_mode=d.get("reference_mode", "metro"),
            transit_nest=d.get("transit_nest", "transit"),
            purpose_overrides=d.get("purpose_overrides", {}),
        )
        declared = d.get("modes")
        if declared is not None:
            if len(set(declared)) != len(declared):
                raise ModelStructureError("duplicate mode identifiers")
            if set(declared) != set(model.modes):
                raise ModelStructureError(
                    "every mode must belong to exactly one nest; "
                    f"declared {sorted(declared)}, nested {sorted(model.modes)}")
        model.nest_of(model.reference_mode)
        model.nest(model.transit_nest)
        return model

    def to_dict(self) -> dict:
        return {
            "modes": list(self.modes),
            "nests": [{"name": n.name, "members": list(n.members), "nc": n.nc}
                      for n in self.nests],
            "coefficients": dict(self.coefficients),
            "reference_mode": self.reference_mode,
            "transit_nest": self.transit_nest,
            "purpose_overrides": dict(self.purpose_overrides),
        }


def top_level_utilities(model: NestedLogitModel, u: Utilities) -> dict[str, float]:
    """Logsum of every nest that has at least one available member."""
    unknown = set(u) - set(model.modes)
    if unknown:
        raise ModelStructureError(f"utilities given for unknown modes {sorted(unknown)}")
    out = {}
    for nest in model.nests:
        members = {m: u.get(m) for m in nest.members}
        if any(v is not None for v in members.values()):
            out[nest.name] = nest_logsum(members, nest.nc)
    return out


def nested_probabilities(model: NestedLogitModel, u: Utilities) -> dict[str, float]:
    """Two-level nested logit: P(mode) = P(nest) * P(mode | nest).

    Modes of the model missing from ``u`` count as unavailable. The result
    has one entry per model mode.
    """
    top = top_level_utilities(model, u)
    if not top:
        raise NoAvailableMode("no available mode in utility vector")
    p_nest = mnl_probabilities(top)
    probs = {}
    for nest in model.nests:
        if nest.name not in p_nest:
            probs.update({m: 0.0 for m in nest.members})
            continue
        inner = mnl_probabilities(
            {m: (None if u.get(m) is None else u[m] / nest.nc) for m in nest.members})
        for m in nest.members:
            probs[m] = p_nest[nest.name] * inner[m]
    return probs


def nested_probabilities_array(model: NestedLogitModel, modes: Sequence[str],
                               utilities: np.ndarray, available: np.ndarray):
    """Vectorised nested logit over many decision makers.

    Parameters
    ----------
    model : NestedLogitModel
    modes : sequence of str
        Column labels of ``utilities``; every label must be a model mode.
        Model modes absent from ``modes`` are treated as unavailable.
    utilities : ndarray, shape (n, len(modes))
        Values in unavailable cells are ignored.
    available : bool ndarray, same shape

    Returns
    -------
    probs : ndarray, shape (n, len(modes))
    logsums : dict
        Nest name -> (n,) array of nest logsums (``nan`` where the nest has
        no available member).
    p_nest : dict
        Nest name -> (n,) array of top-level nest probabilities.
    """
    utilities = np.asarray(utilities, dtype=float)
    available = np.asarray(available, dtype=bool)
    col = {m: j for j, m in enumerate(modes)}
    for m in modes:
        model.nest_of(m)
    n = utilities.shape[0]
    if np.any(~np.isfinite(utilities[available])):
        raise ValueError("non-finite utility for an available mode")

    logsums = {}
    inner = np.zeros_like(utilities)
    for nest in model.nests:
        idx = [col[m] for m in nest.members if m in col]
        if not idx:
            logsums[nest.name] = np.full(n, np.nan)
            continue
        av = available[:, idx]
        scaled = np.where(av, utilities[:, idx] / nest.nc, -np.inf)
        has = av.any(axis=1)
        mx = np.where(has, scaled.max(axis=1), 0.0)
        e = np.where(av, np.exp(scaled - mx[:, None]), 0.0)
        tot = e.sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            inner[:, idx] = np.where(has[:, None], e / tot[:, None], 0.0)
            logsums[nest.name] = np.where(has, nest.nc * (mx + np.log(tot)), np.nan)

    names = list(logsums)
    top = np.column_stack([logsums[k] for k in names])
    top_av = ~np.isnan(top)
    if not top_av.any(axis=1).all():
        raise NoAvailableMode("a row has no available mode")
    t = np.where(top_av, top, -np.inf)
    mx = t.max(axis=1)
    e = np.where(top_av, np.exp(t - mx[:, None]), 0.0)
    pn = e / e.sum(axis=1)[:, None]
    p_nest = {k: pn[:, i] for i, k in enumerate(names)}

    probs = np.zeros_like(utilities)
    for nest in model.nests:
        for m in nest.members:
            if m in col:
                probs[:, col[m]] = p_nest[nest.name] * inner[:, col[m]]
    return probs, logsums, p_nest
