"""Core record types and the canonical panel file format.

The canonical panel file is a comma-separated table with one row per stop
and the columns of :data:`PANEL_COLUMNS`, in that order. ``link`` and
``simulate`` both write it and ``fit``/``describe`` read it, so real and
simulated data go through the same estimator code.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
import pandas as pd

STATES = ("AZ", "CO", "TX")
RACES = ("white", "hispanic", "black", "asian_pacific", "other", "unknown")

PANEL_COLUMNS = (
    "driver_id",
    "linkable",
    "state",
    "stop_id",
    "date",
    "hour",
    "county",
    "officer_id",
    "perceived_race",
    "searched",
    "arrested",
    "duration_minutes",
)

RECORD_COLUMNS = PANEL_COLUMNS[2:] + ("link_fields",)


@dataclass(frozen=True)
class StopRecord:
    """One police encounter."""

    state: str
    stop_id: str
    date: dt.date
    perceived_race: str
    searched: bool
    hour: Optional[int] = None
    county: Optional[str] = None
    officer_id: Optional[str] = None
    arrested: Optional[bool] = None
    duration_minutes: Optional[float] = None
    link_fields: tuple = ()

    def __post_init__(self):
        if self.state not in STATES:
            raise ValueError(f"unknown state {self.state!r}")
        if self.perceived_race not in RACES:
            raise ValueError(f"unknown race category {self.perceived_race!r}")
        if self.hour is not None and not 0 <= self.hour <= 23:
            raise ValueError(f"hour out of range: {self.hour}")
        if self.duration_minutes is not None:
            if self.state != "AZ":
                raise ValueError("duration_minutes is only recorded for AZ")
            if self.duration_minutes < 0:
                raise ValueError("duration_minutes must be nonnegative")
        if self.state == "TX" and self.arrested is not None:
            raise ValueError("TX records carry no arrest information")


@dataclass(frozen=True)
class DriverPanel:
    """All stops attributed to one linked person, in time order."""

    driver_id: str
    state: str
    stops: tuple
    linkable: bool = True
    races: frozenset = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.stops:
            raise ValueError("a panel holds at least one stop")
        ordered = tuple(sorted(self.stops, key=lambda s: (s.date, s.stop_id)))
        object.__setattr__(self, "stops", ordered)
        object.__setattr__(self, "races", frozenset(s.perceived_race for s in ordered))

    @property
    def n_stops(self) -> int:
        return len(self.stops)


PanelsLike = Union[Sequence[DriverPanel], pd.DataFrame]


def _blank(value):
    return "" if value is None else value


def _fmt_bool(value):
    if value is None:
        return ""
    return "1" if value else "0"


def _fmt_float(value):
    if value is None:
        return ""
    return repr(float(value))


def _stop_row(panel_id, linkable, stop):
    return [
        panel_id,
        "1" if linkable else "0",
        stop.state,
        stop.stop_id,
        stop.date.isoformat(),
        "" if stop.hour is None else str(stop.hour),
        _blank(stop.county),
        _blank(stop.officer_id),
        stop.perceived_race,
        _fmt_bool(stop.searched),
        _fmt_bool(stop.arrested),
        _fmt_float(stop.duration_minutes),
    ]


def write_panels(panels: Iterable[DriverPanel], path) -> None:
    """Write panels in the canonical stop-per-row format, sorted by driver then time."""
    ordered = sorted(panels, key=lambda p: p.driver_id)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PANEL_COLUMNS)
        for panel in ordered:
            for stop in panel.stops:
                writer.writerow(_stop_row(panel.driver_id, panel.linkable, stop))


def _parse_opt_bool(text):
    if text == "":
        return None
    return text in ("1", "true", "True")


def _row_to_stop(row: dict) -> StopRecord:
    link = row.get("link_fields", "")
    return StopRecord(
        state=row["state"],
        stop_id=row["stop_id"],
        date=dt.date.fromisoformat(row["date"]),
        perceived_race=row["perceived_race"],
        searched=row["searched"] == "1",
        hour=int(row["hour"]) if row["hour"] != "" else None,
        county=row["county"] or None,
        officer_id=row["officer_id"] or None,
        arrested=_parse_opt_bool(row["arrested"]),
        duration_minutes=float(row["duration_minutes"]) if row["duration_minutes"] != "" else None,
        link_fields=tuple(json.loads(link)) if link else (),
    )


def read_panels(path) -> list:
    """Read a canonical panel file back into :class:`DriverPanel` objects."""
    groups: dict = {}
    meta: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(PANEL_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            from .exceptions import SchemaError

            raise SchemaError(f"panel file lacks columns: {sorted(missing)}")
        for row in reader:
            key = row["driver_id"]
            groups.setdefault(key, []).append(_row_to_stop(row))
            meta[key] = (row["state"], row["linkable"] == "1")
    return [
        DriverPanel(driver_id=k, state=meta[k][0], stops=tuple(v), linkable=meta[k][1])
        for k, v in sorted(groups.items())
    ]


def write_records(records: Iterable[StopRecord], path) -> None:
    """Write ingested stop records (with their link fields) to CSV."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECORD_COLUMNS)
        for stop in records:
            row = _stop_row("", True, stop)[2:]
            row.append(json.dumps(list(stop.link_fields), ensure_ascii=False))
            writer.writerow(row)


def read_records(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return [_row_to_stop(row) for row in csv.DictReader(fh)]


def panels_to_frame(panels: PanelsLike) -> pd.DataFrame:
    """Flatten panels to one row per stop with the canonical column set.

    A DataFrame that already has the canonical columns is returned as a copy,
    so callers may pass either representation.
    """
    if isinstance(panels, pd.DataFrame):
        missing = set(PANEL_COLUMNS) - set(panels.columns)
        if missing:
            raise ValueError(f"frame lacks canonical columns: {sorted(missing)}")
        return panels.loc[:, list(PANEL_COLUMNS)].copy()
    cols = {c: [] for c in PANEL_COLUMNS}
    for panel in panels:
        for s in panel.stops:
            cols["driver_id"].append(panel.driver_id)
            cols["linkable"].append(panel.linkable)
            cols["state"].append(s.state)
            cols["stop_id"].append(s.stop_id)
            cols["date"].append(s.date)
            cols["hour"].append(np.nan if s.hour is None else s.hour)
            cols["county"].append(s.county)
            cols["officer_id"].append(s.officer_id)
            cols["perceived_race"].append(s.perceived_race)
            cols["searched"].append(float(s.searched))
            cols["arrested"].append(np.nan if s.arrested is None else float(s.arrested))
            cols["duration_minutes"].append(
                np.nan if s.duration_minutes is None else s.duration_minutes
            )
    frame = pd.DataFrame(cols, columns=list(PANEL_COLUMNS))
    frame["date"] = pd.to_datetime(frame["date"])
    return frame


def frame_to_panels(frame: pd.DataFrame) -> list:
    """Inverse of :func:`panels_to_frame`."""
    panels = []
    for driver_id, grp in frame.groupby("driver_id", sort=True):
        stops = []
        for row in grp.itertuples(index=False):
            stops.append(
                StopRecord(
                    state=row.state,
                    stop_id=str(row.stop_id),
                    date=pd.Timestamp(row.date).date(),
                    perceived_race=row.perceived_race,
                    searched=bool(row.searched),
                    hour=None if pd.isna(row.hour) else int(row.hour),
                    county=None if pd.isna(row.county) else str(row.county),
                    officer_id=None if pd.isna(row.officer_id) else str(row.officer_id),
                    arrested=None if pd.isna(row.arrested) else bool(row.arrested),
                    duration_minutes=None
                    if pd.isna(row.duration_minutes)
                    else float(row.duration_minutes),
                )
            )
        first = grp.iloc[0]
        panels.append(
            DriverPanel(
                driver_id=str(driver_id),
                state=first.state,
                stops=tuple(stops),
                linkable=bool(first.linkable),
            )
        )
    return panels


def read_panel_frame(path) -> pd.DataFrame:
    """Read a canonical panel file straight into a DataFrame (fast path for fitting)."""
    frame = pd.read_csv(
        path,
        dtype={"driver_id": str, "state": str, "stop_id": str, "county": str, "officer_id": str,
               "perceived_race": str},
        keep_default_na=False,
        na_values={"hour": [""], "arrested": [""], "duration_minutes": [""]},
    )
    for col in ("county", "officer_id"):
        frame[col] = frame[col].replace("", None)
    frame["linkable"] = frame["linkable"].astype(bool)
    frame["date"] = pd.to_datetime(frame["date"])
    frame["searched"] = frame["searched"].astype(float)
    frame["arrested"] = frame["arrested"].astype(float)
    return frame.loc[:, list(PANEL_COLUMNS)]


def write_panel_frame(frame: pd.DataFrame, path) -> None:
    """Write a canonical frame with the same text encoding as :func:`write_panels`."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PANEL_COLUMNS)
    f = frame.sort_values(["driver_id", "date", "stop_id"], kind="mergesort")
    dates = pd.to_datetime(f["date"]).dt.strftime("%Y-%m-%d").to_numpy()
    for i, row in enumerate(f.itertuples(index=False)):
        writer.writerow([
            row.driver_id,
            "1" if row.linkable else "0",
            row.state,
            row.stop_id,
            dates[i],
            "" if pd.isna(row.hour) else str(int(row.hour)),
            "" if row.county is None or pd.isna(row.county) else row.county,
            "" if row.officer_id is None or pd.isna(row.officer_id) else row.officer_id,
            row.perceived_race,
            "1" if row.searched else "0",
            "" if pd.isna(row.arrested) else ("1" if row.arrested else "0"),
            "" if pd.isna(row.duration_minutes) else repr(float(row.duration_minutes)),
        ])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")
