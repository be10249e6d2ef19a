"""File formats, run configuration and deterministic writers.

All tables are UTF-8 CSV with a header row and "." decimals. A table may
start with comment lines such as ``# schema_version: 1``; they are
skipped. Missing required columns fail, unknown columns are logged.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import pandas as pd

from .choice import NestedLogitModel
from .errors import InputError, InvalidConfig
from .estimate import ModelSpec
from .newmode import VARIANTS, NewModeParams, VotTable
from .scenario import PRESETS, Scenario, SyntheticTripConfig, Trip, preset
from .weighting import Respondent

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
TRUE = {"1", "true", "yes", "y"}
FALSE = {"0", "false", "no", "n"}


def _count_comment_lines(path: Path) -> int:
    n = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            n += 1
    return n


def read_table(path, required: Sequence[str], optional: Sequence[str] = (),
               extra_ok: bool = False) -> pd.DataFrame:
    """Read a CSV as strings, checking its columns."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: file not found")
    skip = _count_comment_lines(path)
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, skiprows=skip,
                         encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise InputError(f"{path}: cannot parse CSV ({exc})") from exc
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise InputError(f"{path}: missing column(s) {missing}")
    if not extra_ok:
        unknown = [c for c in df.columns if c not in required and c not in optional]
        if unknown:
            log.warning("%s: ignoring unknown column(s) %s", path, unknown)
    df.attrs["path"] = str(path)
    df.attrs["first_line"] = skip + 2
    return df


def _where(df: pd.DataFrame, i: int) -> str:
    return f"{df.attrs.get('path', '<table>')}:{df.attrs.get('first_line', 2) + i}"


def _float(df, i, col, value) -> float:
    try:
        x = float(value)
    except ValueError:
        raise InputError(f"{_where(df, i)}: column {col!r}: not a number: {value!r}") from None
    if not math.isfinite(x):
        raise InputError(f"{_where(df, i)}: column {col!r}: non-finite value {value!r}")
    return x


def _bool(df, i, col, value) -> bool:
    v = str(value).strip().lower()
    if v in TRUE:
        return True
    if v in FALSE:
        return False
    raise InputError(f"{_where(df, i)}: column {col!r}: not a boolean: {value!r}")


def read_margins(path) -> dict[str, dict[str, float]]:
    df = read_table(path, ["variable", "category", "target_share"])
    margins: dict[str, dict[str, float]] = {}
    for i, r in enumerate(df.itertuples(index=False)):
        share = _float(df, i, "target_share", r.target_share)
        cats = margins.setdefault(r.variable, {})
        if r.category in cats:
            raise InputError(f"{_where(df, i)}: duplicate category {r.category!r}")
        cats[r.category] = share
    if not margins:
        raise InputError(f"{path}: no margins")
    return margins


def read_respondents(path, variables: Iterable[str]) -> list[Respondent]:
    """One row per respondent: ``respondent_id`` plus one column per variable."""
    variables = list(variables)
    df = read_table(path, ["respondent_id"], variables, extra_ok=True)
    ids = df["respondent_id"]
    if ids.duplicated().any():
        raise InputError(f"{path}: duplicate respondent_id {ids[ids.duplicated()].iloc[0]!r}")
    cols = [v for v in variables if v in df.columns]
    return [Respondent(r["respondent_id"], {v: r[v] for v in cols if r[v] != ""})
            for r in df.to_dict("records")]


def read_weights(path) -> dict[str, float]:
    df = read_table(path, ["respondent_id", "weight"])
    out = {}
    for i, r in enumerate(df.itertuples(index=False)):
        w = _float(df, i, "weight", r.weight)
        if w <= 0:
            raise InputError(f"{_where(df, i)}: weight must be positive")
        out[r.respondent_id] = w
    return out


def read_observations(path, spec: ModelSpec) -> pd.DataFrame:
    """Long SP table, one row per answered choice situation.

    Attribute, availability, weight and interaction columns must be numeric;
    segment columns stay as text. Empty cells become missing values.
    """
    attr, _ = spec.required_columns()
    avail = [f"avail_{spec.suffix(a)}" for a in spec.alternatives]
    interact = list(dict.fromkeys(t.column for t in spec.terms if t.kind == "interaction"))
    segment = list(dict.fromkeys(t.segment[0] for t in spec.terms if t.segment))
    base = ["respondent_id", "purpose", "scenario_id", "chosen"]
    df = read_table(path, base, attr + avail + interact + segment + ["weight"], extra_ok=True)
    out = df.copy()
    numeric = [c for c in attr + avail + interact + ["weight"] if c in df.columns]
    for c in numeric:
        blank = df[c].str.strip() == ""
        values = pd.to_numeric(df[c].where(~blank), errors="coerce")
        bad = ~blank & values.isna()
        if bad.any():
            i = int(bad.to_numpy().nonzero()[0][0])
            raise InputError(f"{_where(df, i)}: column {c!r}: not a number: {df[c].iloc[i]!r}")
        out[c] = values
    for c in segment:
        if c in df.columns:
            out[c] = df[c].where(df[c] != "")
    out.attrs.update(df.attrs)
    return out


def read_trips(path, modes: Sequence[str], vot_metro: Optional[VotTable] = None) -> list[Trip]:
    """Trips with base utilities in ``u_<mode>`` columns; empty means unavailable.

    Metro generalized cost comes from ``gc_metro_min`` or, failing that,
    from ``metro_time_min`` and ``metro_cost_eur`` with ``vot_metro``.
    """
    base = ["trip_id", "purpose", "auto_time_min", "distance_km", "income_group",
            "in_service_area"]
    ucols = [f"u_{m}" for m in modes]
    df = read_table(path, base, ucols + ["gc_metro_min", "metro_time_min", "metro_cost_eur"])
    have_u = [c for c in ucols if c in df.columns]
    if not have_u:
        raise InputError(f"{path}: no utility columns (expected u_<mode>)")
    has_gc = "gc_metro_min" in df.columns
    if not has_gc:
        if not {"metro_time_min", "metro_cost_eur"} <= set(df.columns):
            raise InputError(f"{path}: need gc_metro_min or metro_time_min + metro_cost_eur")
        if vot_metro is None:
            raise InputError(f"{path}: metro costs given but no metro value of time in config")
    trips = []
    for i, r in enumerate(df.to_dict("records")):
        u = {}
        for m in modes:
            v = r.get(f"u_{m}", "")
            u[m] = None if v == "" else _float(df, i, f"u_{m}", v)
        if has_gc:
            gc = _float(df, i, "gc_metro_min", r["gc_metro_min"])
        else:
            t = _float(df, i, "metro_time_min", r["metro_time_min"])
            c = _float(df, i, "metro_cost_eur", r["metro_cost_eur"])
            try:
                vm = vot_metro.lookup(r["income_group"], r["purpose"])
            except InputError as exc:
                raise InputError(f"{_where(df, i)}: {exc}") from exc
            gc = t + c / (vm / 60.0)
        try:
            trips.append(Trip(r["trip_id"], r["purpose"],
                              _float(df, i, "auto_time_min", r["auto_time_min"]),
                              _float(df, i, "distance_km", r["distance_km"]),
                              r["income_group"],
                              _bool(df, i, "in_service_area", r["in_service_area"]), u, gc))
        except InputError as exc:
            if str(exc).startswith(str(path)):
                raise
            raise InputError(f"{_where(df, i)}: {exc}") from exc
    ids = [t.trip_id for t in trips]
    if len(set(ids)) != len(ids):
        raise InputError(f"{path}: duplicate trip_id")
    return trips


def trips_to_rows(trips: Sequence[Trip], modes: Sequence[str]) -> list[dict]:
    rows = []
    for t in trips:
        row = {"trip_id": t.trip_id, "purpose": t.purpose, "auto_time_min": t.auto_time_min,
               "distance_km": t.distance_km, "income_group": t.income_group,
               "in_service_area": int(t.in_service_area), "gc_metro_min": t.gc_metro_min}
        for m in modes:
            v = t.utilities.get(m)
            row[f"u_{m}"] = "" if v is None else v
        rows.append(row)
    return rows


def read_json(path) -> Any:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: file not found")
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def format_csv(rows: Sequence[Mapping], columns: Sequence[str]) -> str:
    """CSV text with shortest round-trip float formatting."""
    lines = []

    class _Sink:
        def write(self, s):
            lines.append(s)

    w = csv.writer(_Sink(), lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    return "".join(lines)


def format_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_outputs(out_dir, files: Mapping[str, str]) -> dict[str, str]:
    """Write prepared text files; returns their sha256 digests."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    digests = {}
    for name, text in files.items():
        data = text.encode("utf-8")
        (out / name).write_bytes(data)
        digests[name] = hashlib.sha256(data).hexdigest()
    return digests


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunConfig:
    """Validated contents of ``run.json``; paths are resolved against its folder."""

    model: NestedLogitModel
    params: NewModeParams
    vot_rh: VotTable
    grid: list[Scenario]
    grid_name: str
    variant: str = "normalized"
    seed: Optional[int] = None
    trips_path: Optional[Path] = None
    synthetic: Optional[SyntheticTripConfig] = None
    synthetic_count: int = 0
    vot_metro: Optional[VotTable] = None
    output_dir: Path = Path("out")
    sample: bool = False
    workers: int = 1
    raw: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)

    def config_hash(self) -> str:
        blob = json.dumps({"config": self.raw, "inputs": self.inputs}, sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _vot_table(block, where) -> VotTable:
    if not isinstance(block, Mapping) or "values" not in block:
        raise InvalidConfig(f"{where}: expected an object with 'values'")
    try:
        return VotTable.from_records(block["values"], block.get("group_map"),
                                     block.get("purpose_map"))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidConfig(f"{where}: {exc}") from exc


def _grid(spec) -> tuple[list[Scenario], str]:
    if isinstance(spec, str):
        return preset(spec), spec
    if not isinstance(spec, Mapping) or "scenarios" not in spec:
        raise InvalidConfig(f"grid must be a preset name ({sorted(PRESETS)}) or "
                            "an object with 'scenarios'")
    grid = [Scenario(with_rh=False)] if spec.get("baseline", True) else []
    for s in spec["scenarios"]:
        try:
            grid.append(Scenario(float(s["tt_factor"]), float(s["wait_min"]),
                                 float(s["fare"]), s.get("label", "")))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidConfig(f"bad scenario {s!r}: {exc}") from exc
    return grid, "custom"


def load_run_config(path, preset_name: Optional[str] = None,
                    variant: Optional[str] = None) -> RunConfig:
    """Parse and validate ``run.json`` and every file it references."""
    path = Path(path)
    raw = read_json(path)
    if not isinstance(raw, dict):
        raise InvalidConfig(f"{path}: top level must be an object")
    root = path.parent
    paths = raw.get("paths", {})
    if "model" not in paths:
        raise InvalidConfig(f"{path}: paths.model is required")
    model_path = root / paths["model"]
    model = NestedLogitModel.from_dict(read_json(model_path))
    inputs = {"model": sha256_file(model_path)}

    variant = variant or raw.get("variant", "normalized")
    if variant not in VARIANTS:
        raise InvalidConfig(f"variant must be one of {VARIANTS}, got {variant!r}")
    nm = dict(raw.get("new_mode", {}))
    if "delta_ratio" not in nm:
        raise InvalidConfig(f"{path}: new_mode.delta_ratio is required")
    params = NewModeParams(delta_ratio=float(nm["delta_ratio"]), fare_per_km=0.0,
                           beta_gc_metro=nm.get("beta_gc_metro"), nc=nm.get("nc"),
                           variant=variant)
    params.resolve(model)
    for p in raw.get("purposes", []):
        params.resolve(model.for_purpose(p))

    vot = raw.get("vot", {})
    if "rh" not in vot:
        raise InvalidConfig(f"{path}: vot.rh is required")
    vot_rh = _vot_table(vot["rh"], "vot.rh")
    vot_metro = _vot_table(vot["metro"], "vot.metro") if "metro" in vot else None

    grid, grid_name = _grid(preset_name or raw.get("grid", "paper-grid"))
    if preset_name:
        grid_name = preset_name

    seed = raw.get("seed")
    if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool) or seed < 0):
        raise InvalidConfig("seed must be a non-negative integer")
    sample = bool(raw.get("sample", False))
    trips_path, synthetic, count = None, None, 0
    if "trips" in paths:
        trips_path = root / paths["trips"]
        if not trips_path.is_file():
            raise InputError(f"{trips_path}: file not found")
        inputs["trips"] = sha256_file(trips_path)
    elif "synthetic_trips" in raw:
        block = raw["synthetic_trips"]
        count = int(block.get("count", 10_000))
        synthetic = SyntheticTripConfig.from_dict(block)
        synthetic.validate()
    else:
        raise InvalidConfig(f"{path}: give paths.trips or a synthetic_trips block")
    if (synthetic is not None or sample) and seed is None:
        raise InvalidConfig("this run draws random numbers; set a seed in the config")
    workers = int(raw.get("workers", 1))
    if workers < 1:
        raise InvalidConfig("workers must be at least 1")
    effective = {**raw, "variant": variant, "grid": grid_name if preset_name else raw.get(
        "grid", "paper-grid")}
    return RunConfig(model=model, params=params, vot_rh=vot_rh, grid=grid,
                     grid_name=grid_name, variant=variant, seed=seed, trips_path=trips_path,
                     synthetic=synthetic, synthetic_count=count, vot_metro=vot_metro,
                     output_dir=root / paths.get("output_dir", "out"), sample=sample,
                     workers=workers, raw=effective, inputs=inputs)


def read_model(path) -> NestedLogitModel:
    return NestedLogitModel.from_dict(read_json(path))


def read_spec(path) -> ModelSpec:
    return ModelSpec.from_dict(read_json(path))
