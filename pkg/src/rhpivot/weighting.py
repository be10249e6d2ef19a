"""Raking of survey respondent weights to census category margins."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import DegenerateVariance, EmptyCell, InputError, UnknownVariable

log = logging.getLogger(__name__)

Margins = Mapping[str, Mapping[str, float]]


@dataclass(frozen=True)
class Respondent:
    id: str
    categories: Mapping[str, str]


@dataclass
class IPFResult:
    weights: dict[str, float]
    converged: bool
    iterations: int
    max_residual: float
    tol: float
    residual_history: list[float] = field(default_factory=list)

    def report(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "max_residual": self.max_residual,
            "tol": self.tol,
            "n_respondents": len(self.weights),
            "residual_history": self.residual_history,
        }


def validate_margins(margins: Margins) -> None:
    if not margins:
        raise InputError("no control variables in margins")
    for var, shares in margins.items():
        if not shares:
            raise InputError(f"variable {var!r} has no categories")
        if any(s < 0 for s in shares.values()):
            raise InputError(f"variable {var!r} has a negative target share")
        total = math.fsum(shares.values())
        if abs(total - 1.0) > 1e-9:
            raise InputError(f"target shares of {var!r} sum to {total}, not 1")


def filter_respondents(records: Iterable[Respondent], margins: Margins):
    """Drop respondents lacking a category in the margin universe.

    Returns ``(kept, n_dropped)``.
    """
    kept, dropped = [], 0
    for r in records:
        ok = all(r.categories.get(var) in shares for var, shares in margins.items())
        if ok:
            kept.append(r)
        else:
            dropped += 1
    if dropped:
        log.info("dropped %d respondents outside the margin categories", dropped)
    return kept, dropped


class _Design:
    """Integer category codes per control variable."""

    def __init__(self, records: Sequence[Respondent], margins: Margins):
        validate_margins(margins)
        self.variables = list(margins)
        self.categories = {v: list(margins[v]) for v in self.variables}
        self.targets = {v: np.array([margins[v][c] for c in self.categories[v]])
                        for v in self.variables}
        self.codes = {}
        for v in self.variables:
            lookup = {c: i for i, c in enumerate(self.categories[v])}
            try:
                codes = np.array([lookup[r.categories[v]] for r in records], dtype=int)
            except KeyError as exc:
                raise InputError(
                    f"respondent category {exc.args[0]!r} outside the margins of {v!r}; "
                    "filter respondents first") from None
            counts = np.bincount(codes, minlength=len(lookup))
            for i, c in enumerate(self.categories[v]):
                t = self.targets[v][i]
                if t > 0 and counts[i] == 0:
                    raise EmptyCell(v, c)
                if t == 0 and counts[i] > 0:
                    raise InputError(
                        f"category {c!r} of {v!r} has zero target share but "
                        f"{counts[i]} respondents; weights would not stay positive")
            self.codes[v] = codes

    def shares(self, v: str, w: np.ndarray) -> np.ndarray:
        return np.bincount(self.codes[v], weights=w,
                           minlength=len(self.categories[v])) / w.sum()

    def residual(self, w: np.ndarray) -> float:
        return max(float(np.max(np.abs(self.shares(v, w) - self.targets[v])))
                   for v in self.variables)


def ipf(records: Sequence[Respondent], margins: Margins, tol: float = 1e-6,
        max_iter: int = 1000, order: Optional[Sequence[str]] = None,
        cap: Optional[float] = None,
        initial: Optional[Mapping[str, float]] = None) -> IPFResult:
    """Rake respondent weights until every marginal share hits its target.

    Each sweep visits the control variables round-robin (in ``order``, or
    the margins' own order) and scales the weights of each category by
    ``target / current share``. After every sweep weights are optionally
    capped at ``cap`` and rescaled so they sum to the number of respondents.

    Parameters
    ----------
    records : sequence of Respondent
    margins : mapping
        ``{variable: {category: target_share}}``.
    tol : float
        Maximum absolute share residual accepted as converged.
    max_iter : int
        Maximum number of full sweeps.
    order : sequence of str, optional
    cap : float, optional
        Upper bound on individual weights (off by default).
    initial : mapping, optional
        Starting weights by respondent id; defaults to 1 for everyone.

    Returns
    -------
    IPFResult
        Weights are returned even when not converged; check ``converged``.
    """
    if tol <= 0:
        raise InputError("tol must be positive")
    if not records:
        raise InputError("no respondents")
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise InputError("duplicate respondent ids")
    design = _Design(records, margins)
    order = list(order) if order is not None else design.variables
    if sorted(order) != sorted(design.variables):
        raise InputError("order must list every control variable exactly once")

    n = len(records)
    if initial is None:
        w = np.ones(n)
    else:
        w = np.array([float(initial[i]) for i in ids])
        if np.any(w <= 0):
            raise InputError("initial weights must be positive")
        w *= n / w.sum()

    res = design.residual(w)
    history = [res]
    it = 0
    while res > tol and it < max_iter:
        for v in order:
            current = design.shares(v, w)
            factor = np.ones_like(current)
            pos = current > 0
            factor[pos] = design.targets[v][pos] / current[pos]
            w = w * factor[design.codes[v]]
        if cap is not None:
            w = np.minimum(w, cap)
        w *= n / w.sum()
        it += 1
        res = design.residual(w)
        history.append(res)

    converged = res <= tol
    if not converged:
        log.warning("IPF stopped after %d sweeps with residual %.3g > %.3g",
                    it, res, tol)
    return IPFResult(dict(zip(ids, w.tolist())), converged, it, res, tol, history)


def weighted_shares(records: Sequence[Respondent], weights: Mapping[str, float],
                    variable: str) -> dict[str, float]:
    totals: dict[str, float] = {}
    for r in records:
        if variable not in r.categories:
            raise UnknownVariable(f"respondent {r.id!r} has no variable {variable!r}")
        c = r.categories[variable]
        totals[c] = totals.get(c, 0.0) + weights[r.id]
    grand = math.fsum(totals.values())
    return {c: t / grand for c, t in totals.items()}


def margin_correlation(shares: Margins, margins: Margins) -> float:
    """Pearson correlation of stacked weighted shares against census shares.

    Categories present in the margins but not in ``shares`` count as 0.
    """
    x, y = [], []
    for var, targets in margins.items():
        got = shares.get(var)
        if got is None:
            raise UnknownVariable(f"no weighted shares for {var!r}")
        extra = set(got) - set(targets)
        if extra:
            raise InputError(f"categories {sorted(extra)} of {var!r} not in margins")
        for cat, t in targets.items():
            x.append(got.get(cat, 0.0))
            y.append(t)
    x, y = np.asarray(x), np.asarray(y)
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(np.dot(dx, dx)), math.sqrt(np.dot(dy, dy))
    if sx == 0 or sy == 0:
        raise DegenerateVariance("share vectors must not be constant")
    return float(np.clip(np.dot(dx, dy) / (sx * sy), -1.0, 1.0))
