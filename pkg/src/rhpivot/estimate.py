"""Weighted maximum likelihood estimation of multinomial logit models.

Observations arrive in wide format, one row per respondent x scenario, with
attribute columns named ``<attribute>_<suffix>`` per alternative (for
example ``time_rh`` or ``cost_transit``) and a ``chosen`` column holding the
alternative name.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import (InputError, InvalidNull, MissingAttribute, ModelStructureError,
                     Nonidentifiable, NotConverged)

log = logging.getLogger(__name__)

ALTERNATIVES = ("rideHailing", "auto", "transit")
SUFFIXES = {"rideHailing": "rh", "auto": "auto", "transit": "transit"}
PURPOSES = ("HBW", "HBO")

TERM_KINDS = ("constant", "attribute", "interaction")


@dataclass(frozen=True)
class ChoiceObservation:
    """One respondent x scenario answer in the stated-preference survey."""

    respondent_id: str
    purpose: str
    scenario_id: int
    chosen: str
    attributes: Mapping[str, Mapping[str, float]]
    sociodemographics: Mapping[str, object] = field(default_factory=dict)
    weight: float = 1.0

    def __post_init__(self):
        if self.chosen not in self.attributes:
            raise InputError(f"chosen alternative {self.chosen!r} not in choice set")
        if self.weight <= 0:
            raise InputError("observation weight must be positive")
        for alt, attrs in self.attributes.items():
            if any(v < 0 for v in attrs.values()):
                raise InputError(f"negative time or cost for {alt!r}")

    def to_row(self, suffixes: Mapping[str, str] = SUFFIXES) -> dict:
        row = {"respondent_id": self.respondent_id, "purpose": self.purpose,
               "scenario_id": self.scenario_id, "chosen": self.chosen,
               "weight": self.weight}
        for alt, attrs in self.attributes.items():
            for name, value in attrs.items():
                row[f"{name}_{suffixes.get(alt, alt)}"] = value
        row.update(self.sociodemographics)
        return row


@dataclass(frozen=True)
class Term:
    """One utility coefficient and the data it multiplies.

    ``kind`` is one of:

    * ``constant``: alternative-specific constant on a single alternative.
    * ``attribute``: alternative attribute read from ``<column>_<suffix>``.
    * ``interaction``: sociodemographic column entering the listed alternatives.

    ``segment`` optionally restricts the term to rows where a
    sociodemographic column equals a value, e.g. ``("income_group", "<1500")``.
    """

    name: str
    kind: str
    alternatives: tuple[str, ...]
    column: Optional[str] = None
    segment: Optional[tuple[str, str]] = None


@dataclass(frozen=True)
class ModelSpec:
    terms: tuple[Term, ...]
    alternatives: tuple[str, ...] = ALTERNATIVES
    reference: str = "transit"
    suffixes: Mapping[str, str] = field(default_factory=lambda: dict(SUFFIXES))

    def __post_init__(self):
        names = [t.name for t in self.terms]
        if len(set(names)) != len(names):
            raise ModelStructureError("duplicate coefficient names in model spec")
        if self.reference not in self.alternatives:
            raise ModelStructureError(f"reference {self.reference!r} not an alternative")
        for t in self.terms:
            if t.kind not in TERM_KINDS:
                raise ModelStructureError(f"term {t.name!r}: unknown kind {t.kind!r}")
            unknown = set(t.alternatives) - set(self.alternatives)
            if unknown or not t.alternatives:
                raise ModelStructureError(f"term {t.name!r}: bad alternatives")
            if t.kind == "constant":
                if len(t.alternatives) != 1:
                    raise ModelStructureError(
                        f"constant {t.name!r} must apply to exactly one alternative")
                if t.alternatives[0] == self.reference:
                    raise ModelStructureError(
                        f"constant {t.name!r} is on the reference alternative, "
                        "whose constant is fixed to 0")
            elif not t.column:
                raise ModelStructureError(f"term {t.name!r} needs a column")

    @property
    def names(self) -> list[str]:
        return [t.name for t in self.terms]

    def suffix(self, alt: str) -> str:
        return self.suffixes.get(alt, alt)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelSpec":
        terms = []
        for raw in d["terms"]:
            seg = raw.get("segment")
            if seg is not None:
                seg = (seg["column"], str(seg["value"]))
            terms.append(Term(raw["name"], raw["kind"], tuple(raw["alternatives"]),
                              raw.get("column"), seg))
        kw = {}
        if "alternatives" in d:
            kw["alternatives"] = tuple(d["alternatives"])
        if "reference" in d:
            kw["reference"] = d["reference"]
        if "suffixes" in d:
            kw["suffixes"] = {**SUFFIXES, **d["suffixes"]}
        return cls(tuple(terms), **kw)

    def to_dict(self) -> dict:
        terms = []
        for t in self.terms:
            raw = {"name": t.name, "kind": t.kind, "alternatives": list(t.alternatives)}
            if t.column:
                raw["column"] = t.column
            if t.segment:
                raw["segment"] = {"column": t.segment[0], "value": t.segment[1]}
            terms.append(raw)
        return {"alternatives": list(self.alternatives), "reference": self.reference,
                "suffixes": dict(self.suffixes), "terms": terms}

    def required_columns(self) -> tuple[list[str], list[str]]:
        """Alternative attribute columns and sociodemographic columns used."""
        attr, socio = [], []
        for t in self.terms:
            if t.kind == "attribute":
                attr += [f"{t.column}_{self.suffix(a)}" for a in t.alternatives]
            elif t.kind == "interaction":
                socio.append(t.column)
            if t.segment:
                socio.append(t.segment[0])
        return list(dict.fromkeys(attr)), list(dict.fromkeys(socio))


@dataclass
class ChoiceData:
    """Design tensor for one estimation run.

    ``X`` has shape (n_obs, n_alternatives, n_coefficients).
    """

    spec: ModelSpec
    X: np.ndarray
    available: np.ndarray
    chosen: np.ndarray
    weights: np.ndarray
    ids: list = field(default_factory=list)
    n_dropped: int = 0

    @property
    def n(self) -> int:
        return self.X.shape[0]


def build_choice_data(frame: pd.DataFrame, spec: ModelSpec,
                      weights=None) -> ChoiceData:
    """Turn a wide observation table into a :class:`ChoiceData`.

    ``weights`` may be a column name, an array aligned with ``frame``, or
    ``None`` (use a ``weight`` column when present, else 1). Rows with a
    missing sociodemographic value needed by the spec are dropped and
    counted; any other defect raises.
    """
    attr_cols, socio_cols = spec.required_columns()
    for col in ["chosen", *attr_cols, *socio_cols]:
        if col not in frame.columns:
            raise MissingAttribute(col)

    keep = frame[socio_cols].notna().all(axis=1).to_numpy() if socio_cols else \
        np.ones(len(frame), dtype=bool)
    n_dropped = int((~keep).sum())
    if n_dropped:
        log.info("dropped %d observations with missing sociodemographics", n_dropped)
    df = frame.loc[keep].reset_index(drop=True)
    if isinstance(weights, str):
        w = df[weights].to_numpy(dtype=float)
    elif weights is not None:
        w = np.asarray(weights, dtype=float)[keep]
    elif "weight" in df.columns:
        w = df["weight"].to_numpy(dtype=float)
    else:
        w = np.ones(len(df))
    if len(df) == 0:
        raise InputError("no usable observations")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise InputError("observation weights must be positive and finite")

    alts = list(spec.alternatives)
    n, J, K = len(df), len(alts), len(spec.terms)
    avail = np.ones((n, J), dtype=bool)
    for j, a in enumerate(alts):
        col = f"avail_{spec.suffix(a)}"
        if col in df.columns:
            avail[:, j] = df[col].to_numpy(dtype=float) != 0

    alt_index = {a: j for j, a in enumerate(alts)}
    chosen_names = df["chosen"].astype(str)
    bad = ~chosen_names.isin(alts)
    if bad.any():
        raise InputError(f"unknown chosen alternative {chosen_names[bad].iloc[0]!r}")
    chosen = chosen_names.map(alt_index).to_numpy(dtype=int)
    if not avail[np.arange(n), chosen].all():
        raise InputError("chosen alternative is marked unavailable")

    X = np.zeros((n, J, K))
    for k, t in enumerate(spec.terms):
        mask = np.ones(n)
        if t.segment:
            mask = (df[t.segment[0]].astype(str) == t.segment[1]).to_numpy(dtype=float)
        for a in t.alternatives:
            j = alt_index[a]
            if t.kind == "constant":
                x = np.ones(n)
            elif t.kind == "attribute":
                x = df[f"{t.column}_{spec.suffix(a)}"].to_numpy(dtype=float)
                if np.any(np.isnan(x) & avail[:, j]):
                    raise InputError(
                        f"missing value in {t.column}_{spec.suffix(a)} for an available alternative")
                if np.any(x[avail[:, j]] < 0):
                    raise InputError(f"negative value in {t.column}_{spec.suffix(a)}")
                x = np.where(avail[:, j], x, 0.0)
            else:
                x = pd.to_numeric(df[t.column], errors="coerce").to_numpy(dtype=float)
                if np.any(np.isnan(x)):
                    raise InputError(f"non-numeric values in column {t.column!r}")
            X[:, j, k] = x * mask
    ids = df["respondent_id"].tolist() if "respondent_id" in df.columns else list(range(n))
    return ChoiceData(spec, X, avail, chosen, w, ids, n_dropped)


def _derivatives(data: ChoiceData, beta: np.ndarray, hessian: bool = True):
    V = data.X @ beta
    V = np.where(data.available, V, -np.inf)
    m = V.max(axis=1, keepdims=True)
    e = np.where(data.available, np.exp(V - m), 0.0)
    tot = e.sum(axis=1, keepdims=True)
    P = e / tot
    rows = np.arange(data.n)
    logp_chosen = V[rows, data.chosen] - m[:, 0] - np.log(tot[:, 0])
    w = data.weights
    ll = float(np.dot(w, logp_chosen))
    xbar = np.einsum("nj,njk->nk", P, data.X)
    grad = np.einsum("n,nk->k", w, data.X[rows, data.chosen] - xbar)
    if not hessian:
        return ll, grad, None
    D = data.X - xbar[:, None, :]
    H = -np.einsum("n,nj,njk,njl->kl", w, P, D, D)
    return ll, grad, H


def log_likelihood(data: ChoiceData, beta) -> tuple[float, np.ndarray]:
    """Weighted log-likelihood ``sum_n w_n ln P_n(chosen)`` and its gradient."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (data.X.shape[2],) or not np.all(np.isfinite(beta)):
        raise InputError("beta must be a finite vector with one entry per term")
    ll, grad, _ = _derivatives(data, beta, hessian=False)
    return ll, grad


def check_identification(data: ChoiceData) -> None:
    spec = data.spec
    alt_index = {a: j for j, a in enumerate(spec.alternatives)}
    chosen_w = np.bincount(data.chosen, weights=data.weights,
                           minlength=len(spec.alternatives))
    for t in spec.terms:
        if t.kind == "constant" and chosen_w[alt_index[t.alternatives[0]]] == 0:
            raise Nonidentifiable(t.name, f"alternative {t.alternatives[0]!r} is never chosen")
    # Utility differences across available alternatives must have full rank.
    cnt = data.available.sum(axis=1, keepdims=True)
    mean = (data.X * data.available[:, :, None]).sum(axis=1) / cnt
    D = (data.X - mean[:, None, :])[data.available]
    for k, t in enumerate(spec.terms):
        if not np.any(D[:, k]):
            raise Nonidentifiable(t.name, "no variation across alternatives")
        if np.linalg.matrix_rank(D[:, :k + 1]) < k + 1:
            raise Nonidentifiable(t.name, "collinear with earlier terms")


@dataclass
class EstimationResult:
    coefficients: dict[str, float]
    std_errors: dict[str, float]
    log_likelihood: float
    null_log_likelihood: float
    rho_squared: float
    converged: bool
    iterations: int
    gradient_norm: float
    n_obs: int
    weighted_n: float
    null_model: str = "zero"
    status: str = "converged"

    def to_dict(self) -> dict:
        return asdict(self)


def mcfadden_r2(ll: float, ll0: float) -> float:
    """McFadden pseudo R-squared, ``1 - LL / LL0``."""
    if ll0 >= 0:
        raise InvalidNull(f"null log-likelihood must be negative, got {ll0}")
    return 1.0 - ll / ll0


def _maximize(data: ChoiceData, beta0: np.ndarray, tol: float, max_iter: int):
    beta = beta0.copy()
    ll, g, H = _derivatives(data, beta)
    it = 0
    while True:
        if np.linalg.norm(g) <= tol * max(1.0, abs(ll)):
            status = "converged"
            break
        if it >= max_iter:
            status = "max_iter"
            break
        try:
            np.linalg.cholesky(-H)
            d = np.linalg.solve(-H, g)
        except np.linalg.LinAlgError:
            d = g / max(1.0, np.linalg.norm(g))
        step = 1.0
        while True:
            cand = beta + step * d
            ll_new, g_new, H_new = _derivatives(data, cand)
            if ll_new >= ll or step < 1e-12:
                break
            step *= 0.5
        it += 1
        if ll_new < ll:
            status = "line_search_failed"
            break
        beta, ll, g, H = cand, ll_new, g_new, H_new
    return beta, ll, g, H, it, status


def fit(data: ChoiceData, tol: float = 1e-8, max_iter: int = 100,
        null: str = "zero", strict: bool = False) -> EstimationResult:
    """Newton-Raphson maximum likelihood fit of the spec's coefficients.

    Convergence requires ``||grad|| <= tol * max(1, |LL|)``. A Hessian that
    is not negative definite falls back to a normalised steepest-ascent step;
    every step is halved until the likelihood does not decrease.

    ``null`` selects the McFadden reference model: ``"zero"`` (all
    coefficients 0, equal shares) or ``"constants"`` (constants-only fit).
    With ``strict=True`` a failed optimisation raises :class:`NotConverged`
    instead of returning a best-effort result.
    """
    if null not in ("zero", "constants"):
        raise InputError(f"unknown null model {null!r}")
    check_identification(data)
    K = data.X.shape[2]
    beta, ll, g, H, it, status = _maximize(data, np.zeros(K), tol, max_iter)
    converged = status == "converged"
    if not converged:
        msg = f"estimation stopped with status {status!r} after {it} iterations"
        if strict:
            raise NotConverged(msg)
        log.warning(msg)

    try:
        cov = np.linalg.inv(-H)
        se = np.sqrt(np.where(np.diag(cov) > 0, np.diag(cov), np.nan))
    except np.linalg.LinAlgError:
        se = np.full(K, np.nan)

    if null == "zero":
        ll0 = _derivatives(data, np.zeros(K), hessian=False)[0]
    else:
        ll0 = _constants_only_ll(data, tol, max_iter)
    names = data.spec.names
    return EstimationResult(
        coefficients=dict(zip(names, beta.tolist())),
        std_errors=dict(zip(names, se.tolist())),
        log_likelihood=ll,
        null_log_likelihood=ll0,
        rho_squared=mcfadden_r2(ll, ll0),
        converged=converged,
        iterations=it,
        gradient_norm=float(np.linalg.norm(g)),
        n_obs=data.n,
        weighted_n=float(data.weights.sum()),
        null_model=null,
        status=status,
    )


def _constants_only_ll(data: ChoiceData, tol: float, max_iter: int) -> float:
    idx = [k for k, t in enumerate(data.spec.terms) if t.kind == "constant"]
    if not idx:
        return _derivatives(data, np.zeros(data.X.shape[2]), hessian=False)[0]
    sub = ChoiceData(data.spec, data.X[:, :, idx], data.available, data.chosen,
                     data.weights)
    return _maximize(sub, np.zeros(len(idx)), tol, max_iter)[1]


def simulate_observations(seed: int, n_respondents: int, spec: ModelSpec,
                          truth: Mapping[str, float],
                          purposes: Sequence[str] = PURPOSES,
                          scenarios_per_respondent: int = 3) -> pd.DataFrame:
    """Synthetic stated-preference answers around an 8 km urban trip.

    Attributes vary around a ride-hailing / auto / transit base scenario;
    sociodemographics are drawn independently. Choices are sampled from the
    MNL implied by ``spec`` and ``truth`` (coefficients absent from
    ``truth`` are 0).
    """
    rng = np.random.default_rng(seed)
    rows = n_respondents * len(purposes) * scenarios_per_respondent
    resp = np.repeat(np.arange(n_respondents), len(purposes) * scenarios_per_respondent)
    socio = {
        "age_band": rng.choice(["18-24", "25-29", "30-39", "40-49", ">50"], n_respondents),
        "hh_size": rng.integers(1, 5, n_respondents),
        "autos": rng.integers(0, 3, n_respondents),
        "transit_dist_km": np.round(rng.uniform(0.1, 2.0, n_respondents), 3),
        "income_group": rng.choice(["<1500", ">=1500"], n_respondents, p=[0.4, 0.6]),
        "rh_interest": rng.integers(0, 2, n_respondents),
    }
    df = pd.DataFrame({
        "respondent_id": [f"r{i:05d}" for i in resp],
        "purpose": np.tile(np.repeat(list(purposes), scenarios_per_respondent), n_respondents),
        "scenario_id": np.tile(np.arange(1, scenarios_per_respondent + 1),
                               n_respondents * len(purposes)),
    })
    for col, values in socio.items():
        df[col] = values[resp]
    base = {"rh": (18.0, 14.0), "auto": (17.0, 6.0), "transit": (28.0, 3.3)}
    for sfx, (t, c) in base.items():
        df[f"time_{sfx}"] = np.round(t * rng.uniform(0.6, 1.6, rows), 2)
        df[f"cost_{sfx}"] = np.round(c * rng.uniform(0.4, 1.6, rows), 2)
        df[f"wait_{sfx}"] = np.round(rng.uniform(0, 10, rows), 2) if sfx != "auto" else 0.0
        df[f"walk_{sfx}"] = np.round(rng.uniform(0, 8, rows), 2)
    df["parking_auto"] = np.round(rng.uniform(0, 5, rows), 2)
    df["parking_rh"] = 0.0
    df["parking_transit"] = 0.0

    df["chosen"] = spec.alternatives[0]
    data = build_choice_data(df, spec, weights=np.ones(rows))
    beta = np.array([truth.get(name, 0.0) for name in spec.names])
    V = data.X @ beta
    gumbel = rng.gumbel(size=V.shape)
    df["chosen"] = np.asarray(spec.alternatives)[np.argmax(V + gumbel, axis=1)]
    return df
