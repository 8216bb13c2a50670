"""Weekly three-channel risk features on graph nodes.

Channel 0 (traffic safety) accumulates, per node and week, the casualty-
weighted severity of each accident: log(casualties + 1) times a severity
weight, a road-context weight, and a speed factor 0.5 + v/120. Channels 1
(infrastructure) and 2 (environment) average fixed per-category weights,
four infrastructure factors and two environmental ones, over that week's
accidents at the node. The weight tables live in a JSON file so regional
recalibrations are data edits, not code edits.
"""

from __future__ import annotations

import datetime as dt
import json
import math
import struct
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ShapeMismatchError, UnassignedRecordError
from .ingest import (
    AccidentRecord,
    HumanControl,
    JunctionControl,
    LightCondition,
    PhysicalFacility,
    RoadType,
    SurfaceCondition,
    WeatherCondition,
    iso_weeks_between,
    week_label,
)

FEATURE_NAMES = ("traffic_safety", "infrastructure", "environmental")


def _enum_table(enum_cls, weights: dict, unknown_default: float) -> dict:
    table = {}
    for member in enum_cls:
        if member.name == "UNKNOWN":
            table[member] = unknown_default
        else:
            table[member] = float(weights[member.value])
    return table


@dataclass
class WeightTables:
    """Severity/road/infrastructure/environment weights, total over each enum."""

    severity_w: dict[int, float]
    road_w: dict[RoadType, float]
    human_control_w: dict[HumanControl, float]
    physical_facility_w: dict[PhysicalFacility, float]
    light_w: dict[LightCondition, float]
    junction_control_w: dict[JunctionControl, float]
    surface_w: dict[SurfaceCondition, float]
    weather_w: dict[WeatherCondition, float]
    unknown_default: float = 0.5

    @classmethod
    def from_dict(cls, raw: dict) -> "WeightTables":
        unk = float(raw.get("unknown_default", 0.5))
        tables = cls(
            severity_w={int(k): float(v) for k, v in raw["severity"].items()},
            road_w=_enum_table(RoadType, raw["road_type"], unk),
            human_control_w=_enum_table(HumanControl, raw["human_control"], unk),
            physical_facility_w=_enum_table(
                PhysicalFacility, raw["physical_facility"], unk
            ),
            light_w=_enum_table(LightCondition, raw["light"], unk),
            junction_control_w=_enum_table(
                JunctionControl, raw["junction_control"], unk
            ),
            surface_w=_enum_table(SurfaceCondition, raw["surface"], unk),
            weather_w=_enum_table(WeatherCondition, raw["weather"], unk),
            unknown_default=unk,
        )
        tables.validate()
        return tables

    @classmethod
    def load(cls, path: str | Path) -> "WeightTables":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def default(cls) -> "WeightTables":
        raw = json.loads(
            resources.files("roadrisk.data").joinpath("weight_tables.json").read_text()
        )
        return cls.from_dict(raw)

    def validate(self) -> None:
        for table in (
            self.severity_w,
            self.road_w,
            self.human_control_w,
            self.physical_facility_w,
            self.light_w,
            self.junction_control_w,
            self.surface_w,
            self.weather_w,
        ):
            if any(w <= 0 for w in table.values()):
                raise ValueError("all risk weights must be positive")
        if set(self.severity_w) != {1, 2, 3}:
            raise ValueError("severity table must cover exactly levels 1..3")


def speed_factor(speed_limit_mph: float) -> float:
    return 0.5 + speed_limit_mph / 120.0


def severity_weight(
    tables: WeightTables,
    severity: int,
    road_type: RoadType,
    speed_limit_mph: float,
) -> float:
    """Multiplicative severity x road-context x speed weight."""
    return (
        tables.severity_w[severity]
        * tables.road_w[road_type]
        * speed_factor(speed_limit_mph)
    )


def temporal_weight(
    week_index: int,
    accident_week_index: int,
    tau_weeks: float = 0.0,
) -> float:
    """Weight of an accident's contribution to a given week's safety risk.

    Default (tau=0) is the same-week indicator, so the weekly series stays
    strictly week-local. With tau > 0 a causal Gaussian decay lets past
    accidents bleed forward: exp(-(dt)^2 / (2 tau^2)) for dt >= 0, 0 before
    the accident.
    """
    delta = week_index - accident_week_index
    if delta < 0:
        return 0.0
    if tau_weeks <= 0.0:
        return 1.0 if delta == 0 else 0.0
    return math.exp(-(delta**2) / (2.0 * tau_weeks**2))


def traffic_safety_risk(
    tables: WeightTables,
    records: Sequence[AccidentRecord],
    week: str,
    week_index_of: dict[str, int] | None = None,
    tau_weeks: float = 0.0,
) -> float:
    """Sum of log(casualties+1) * severity weight * temporal weight."""
    if week_index_of is None:
        week_index_of = {week: 0}
    t = week_index_of[week]
    total = 0.0
    for rec in records:
        t_k = week_index_of.get(week_label(rec.date))
        if t_k is None:
            continue
        w_temp = temporal_weight(t, t_k, tau_weeks)
        if w_temp == 0.0:
            continue
        w_sev = severity_weight(tables, rec.severity, rec.road_type, rec.speed_limit)
        total += math.log(rec.casualties + 1.0) * w_sev * w_temp
    return total


def infrastructure_risk(tables: WeightTables, record: AccidentRecord) -> float:
    """Mean of the four infrastructure factor weights, in (0, 1]."""
    return (
        tables.human_control_w[record.ped_human_control]
        + tables.physical_facility_w[record.ped_physical_facility]
        + tables.light_w[record.light]
        + tables.junction_control_w[record.junction_control]
    ) / 4.0


def environmental_risk(tables: WeightTables, record: AccidentRecord) -> float:
    """Mean of the surface and weather weights, in (0, 1]."""
    return (
        tables.surface_w[record.surface] + tables.weather_w[record.weather]
    ) / 2.0


@dataclass
class RiskTensor:
    """(weeks, nodes, 3) array of risk values plus its axis labels."""

    weeks: list[str]
    node_ids: list[int]
    values: np.ndarray  # (W, N, 3), feature order: safety, infrastructure, environment
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        w, n = len(self.weeks), len(self.node_ids)
        if self.values.shape != (w, n, 3):
            raise ShapeMismatchError(
                f"risk tensor shape {self.values.shape} != ({w}, {n}, 3)"
            )
        if not np.isfinite(self.values).all():
            raise ValueError("risk tensor contains non-finite values")

    @property
    def n_weeks(self) -> int:
        return len(self.weeks)

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    def copy(self) -> "RiskTensor":
        return RiskTensor(
            list(self.weeks), list(self.node_ids), self.values.copy(), dict(self.meta)
        )


def build_risk_tensor(
    tables: WeightTables,
    records: Sequence[AccidentRecord],
    assignment: Sequence[int],
    node_ids: Sequence[int],
    period: tuple[dt.date, dt.date],
    tau_weeks: float = 0.0,
) -> RiskTensor:
    """Assemble the weekly (W, N, 3) risk tensor over a study period.

    Safety risk is additive over a cell's accidents; infrastructure and
    environment are per-accident scores averaged within the cell, zero where
    the cell saw no accidents.
    """
    if len(records) != len(assignment):
        raise UnassignedRecordError("<length mismatch>")
    node_ids = list(node_ids)
    node_pos = {int(n): i for i, n in enumerate(node_ids)}
    weeks = iso_weeks_between(period[0], period[1])
    week_pos = {w: t for t, w in enumerate(weeks)}
    w, n = len(weeks), len(node_ids)
    values = np.zeros((w, n, 3))
    counts = np.zeros((w, n))

    # bucket records by cell once; the safety channel may still need
    # cross-week contributions when a decay window is configured
    by_node: dict[int, list[AccidentRecord]] = {}
    for rec, node in zip(records, assignment):
        node = int(node)
        if node not in node_pos:
            raise ShapeMismatchError(f"record node {node} not in graph nodes")
        i = node_pos[node]
        label = week_label(rec.date)
        if label not in week_pos:
            continue  # outside the study period
        t = week_pos[label]
        by_node.setdefault(i, []).append(rec)
        values[t, i, 1] += infrastructure_risk(tables, rec)
        values[t, i, 2] += environmental_risk(tables, rec)
        counts[t, i] += 1.0

    occupied = counts > 0
    values[:, :, 1][occupied] /= counts[occupied]
    values[:, :, 2][occupied] /= counts[occupied]

    if tau_weeks <= 0.0:
        for i, recs in by_node.items():
            for rec in recs:
                t = week_pos[week_label(rec.date)]
                w_sev = severity_weight(
                    tables, rec.severity, rec.road_type, rec.speed_limit
                )
                values[t, i, 0] += math.log(rec.casualties + 1.0) * w_sev
    else:
        for i, recs in by_node.items():
            for t, week in enumerate(weeks):
                values[t, i, 0] = traffic_safety_risk(
                    tables, recs, week, week_pos, tau_weeks
                )
    return RiskTensor(weeks, node_ids, values)


_HEADER = struct.Struct("<iii")


def save_tensor(tensor: RiskTensor, bin_path: str | Path, meta_path: str | Path) -> None:
    """Flat binary: header (W, N, F as little-endian int32) then float64
    payload in week-major order; JSON sidecar carries labels and metadata."""
    w, n, f = tensor.values.shape
    with open(bin_path, "wb") as fh:
        fh.write(_HEADER.pack(w, n, f))
        fh.write(np.ascontiguousarray(tensor.values, dtype="<f8").tobytes())
    sidecar = {
        "weeks": tensor.weeks,
        "node_ids": tensor.node_ids,
        "features": list(FEATURE_NAMES),
        **tensor.meta,
    }
    with open(meta_path, "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_tensor(bin_path: str | Path, meta_path: str | Path) -> RiskTensor:
    with open(bin_path, "rb") as fh:
        w, n, f = _HEADER.unpack(fh.read(_HEADER.size))
        payload = np.frombuffer(fh.read(), dtype="<f8")
    if payload.size != w * n * f:
        raise ShapeMismatchError(
            f"tensor payload holds {payload.size} values, header says {w * n * f}"
        )
    with open(meta_path) as fh:
        sidecar = json.load(fh)
    meta = {
        k: v for k, v in sidecar.items() if k not in ("weeks", "node_ids", "features")
    }
    return RiskTensor(
        weeks=list(sidecar["weeks"]),
        node_ids=[int(i) for i in sidecar["node_ids"]],
        values=payload.reshape(w, n, f).astype(np.float64),
        meta=meta,
    )
