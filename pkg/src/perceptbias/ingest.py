"""Parse raw per-state stop tables into :class:`~perceptbias.records.StopRecord` objects."""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import yaml

from .exceptions import ConfigError, SchemaError
from .records import RACES, STATES, StopRecord

log = logging.getLogger(__name__)

#: StopRecord fields a state config must map (a ``null`` source marks the field absent).
FIELDS = (
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
REQUIRED_FIELDS = ("stop_id", "date", "perceived_race", "searched")
ROW_NUMBER = "__row__"

TX_CUTOFF = dt.date(2016, 1, 1)


def normalize_text(value: Optional[str]) -> str:
    """Case-fold, strip diacritics and collapse whitespace.

    >>> normalize_text("  José   GARCÍA ")
    'jose garcia'
    """
    if value is None:
        return ""
    decomposed = unicodedata.normalize("NFKD", str(value))
    stripped = "".join(ch for ch in decomposed if not unicodedata.combining(ch))
    return " ".join(stripped.casefold().split())


@dataclass(frozen=True)
class StateConfig:
    """Column mapping, race normalization and filters for one state's raw data.

    Parameters
    ----------
    state : {'AZ', 'CO', 'TX'}
    columns : dict
        Maps every name in :data:`FIELDS` to a raw header, or to ``None`` when
        the state does not record that field. ``stop_id`` may be ``"__row__"``
        to derive identifiers from the file row number.
    link_key : dict
        Ordered mapping of key component name to raw header.
    race_map : dict
        Raw race label to canonical category. Lookup is on the normalized label.
    """

    state: str
    columns: dict
    link_key: dict
    race_map: dict
    delimiter: str = ","
    date_formats: tuple = ("%Y-%m-%d",)
    date_start: Optional[dt.date] = None
    date_end: Optional[dt.date] = None
    true_values: tuple = ("true", "t", "1", "y", "yes")
    false_values: tuple = ("false", "f", "0", "n", "no")
    _race_lookup: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.state not in STATES:
            raise ConfigError(f"unknown state {self.state!r}")
        missing = [f for f in FIELDS if f not in self.columns]
        if missing:
            raise ConfigError(f"config for {self.state} does not map fields {missing}")
        for name in REQUIRED_FIELDS:
            if self.columns[name] is None:
                raise ConfigError(f"required field {name!r} cannot be absent")
        if self.state != "AZ" and self.columns["duration_minutes"] is not None:
            raise ConfigError("duration is only recorded for AZ")
        if self.state == "TX" and self.columns["arrested"] is not None:
            raise ConfigError("TX provides no arrest data")
        if not self.link_key:
            raise ConfigError("link_key needs at least one component")
        lookup = {normalize_text(k): v for k, v in self.race_map.items()}
        for race in RACES:
            lookup.setdefault(race, race)
        bad = sorted({v for v in lookup.values() if v not in RACES})
        if bad:
            raise ConfigError(f"race_map targets unknown categories {bad}")
        object.__setattr__(self, "_race_lookup", lookup)

    @classmethod
    def from_dict(cls, data: dict) -> "StateConfig":
        data = dict(data)
        rng = data.pop("date_range", None) or {}
        for key, attr in (("start", "date_start"), ("end", "date_end")):
            value = rng.get(key)
            if isinstance(value, str):
                value = dt.date.fromisoformat(value)
            data[attr] = value
        for key in ("date_formats", "true_values", "false_values"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "StateConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh))

    @classmethod
    def bundled(cls, state: str) -> "StateConfig":
        """Load the config shipped with the package for ``state``."""
        name = f"{state.lower()}.yaml"
        text = resources.files("perceptbias.configs").joinpath(name).read_text(encoding="utf-8")
        return cls.from_dict(yaml.safe_load(text))

    def normalize_race(self, label: Optional[str]) -> str:
        """Map a raw label to a canonical category; unmapped labels become ``unknown``."""
        return self._race_lookup.get(normalize_text(label), "unknown")

    def in_date_range(self, date: dt.date) -> bool:
        if self.date_start is not None and date < self.date_start:
            return False
        if self.date_end is not None and date > self.date_end:
            return False
        return True


@dataclass(frozen=True)
class Rejection:
    row_number: int
    reason: str

    def to_json(self) -> str:
        return json.dumps({"row_number": self.row_number, "reason": self.reason})


@dataclass
class FilterReport:
    n_input: int
    n_output: int
    removed: dict

    def to_dict(self) -> dict:
        return {"n_input": self.n_input, "n_output": self.n_output, "removed": dict(self.removed)}


def _parse_date(text: str, formats) -> dt.date:
    text = text.strip()
    for fmt in formats:
        try:
            return dt.datetime.strptime(text, fmt).date()
        except ValueError:
            continue
    raise ValueError(f"unparseable date {text!r}")


def _parse_hour(text: str) -> Optional[int]:
    text = text.strip()
    if not text:
        return None
    head = text.split(":")[0]
    hour = int(head)
    if not 0 <= hour <= 23:
        raise ValueError(f"hour out of range {text!r}")
    return hour


def _parse_bool(text: str, config: StateConfig, name: str) -> Optional[bool]:
    value = text.strip().casefold()
    if value == "":
        return None
    if value in config.true_values:
        return True
    if value in config.false_values:
        return False
    raise ValueError(f"unparseable {name} value {text!r}")


def _parse_row(row: dict, row_number: int, config: StateConfig) -> StopRecord:
    cols = config.columns

    def raw(name):
        src = cols[name]
        return None if src is None else (row.get(src) or "")

    stop_src = cols["stop_id"]
    stop_id = f"{config.state}-{row_number}" if stop_src == ROW_NUMBER else raw("stop_id").strip()
    if not stop_id:
        raise ValueError("missing stop_id")
    date = _parse_date(raw("date"), config.date_formats)
    searched = _parse_bool(raw("searched"), config, "searched")
    if searched is None:
        raise ValueError("missing searched value")
    hour = _parse_hour(raw("hour")) if cols["hour"] is not None else None
    arrested = _parse_bool(raw("arrested"), config, "arrested") if cols["arrested"] else None
    duration = None
    if cols["duration_minutes"] is not None:
        text = raw("duration_minutes").strip()
        if text:
            duration = float(text)
            if duration < 0:
                raise ValueError(f"negative duration {text!r}")
    county = raw("county").strip() if cols["county"] else ""
    officer = raw("officer_id").strip() if cols["officer_id"] else ""
    link = tuple(normalize_text(row.get(src)) for src in config.link_key.values())
    return StopRecord(
        state=config.state,
        stop_id=stop_id,
        date=date,
        perceived_race=config.normalize_race(raw("perceived_race")),
        searched=searched,
        hour=hour,
        county=county or None,
        officer_id=officer or None,
        arrested=arrested,
        duration_minutes=duration,
        link_fields=link,
    )


def load_stops(path, config: StateConfig):
    """Read a raw stop table.

    Every data row yields exactly one record or one :class:`Rejection`.

    Returns
    -------
    records : list of StopRecord
    rejections : list of Rejection
        Row numbers count data rows from 1 (the header is row 0).

    Raises
    ------
    SchemaError
        If a mapped column is missing from the header.
    """
    records, rejections = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=config.delimiter)
        header = set(reader.fieldnames or ())
        needed = [c for c in config.columns.values() if c not in (None, ROW_NUMBER)]
        needed += list(config.link_key.values())
        for col in needed:
            if col not in header:
                raise SchemaError(f"{path}: missing required column {col!r}")
        for row_number, row in enumerate(reader, start=1):
            try:
                record = _parse_row(row, row_number, config)
            except ValueError as exc:
                rejections.append(Rejection(row_number, str(exc)))
                continue
            if not config.in_date_range(record.date):
                rejections.append(Rejection(row_number, f"date {record.date} outside configured range"))
                continue
            records.append(record)
    log.info("%s: %d records, %d rejections", path, len(records), len(rejections))
    return records, rejections


def apply_validity_filters(records):
    """Drop TX stops before 2016 and stops lacking every link field.

    Returns
    -------
    kept : list of StopRecord
    report : FilterReport
        Counts removed per rule (``pre2016``, ``missing_link_fields``).
    """
    kept = []
    removed = {"pre2016": 0, "missing_link_fields": 0}
    n_input = 0
    for rec in records:
        n_input += 1
        if rec.state == "TX" and rec.date < TX_CUTOFF:
            removed["pre2016"] += 1
        elif not any(rec.link_fields):
            removed["missing_link_fields"] += 1
        else:
            kept.append(rec)
    return kept, FilterReport(n_input=n_input, n_output=len(kept), removed=removed)


def write_rejections(rejections, path) -> None:
    Path(path).write_text("".join(r.to_json() + "\n" for r in rejections), encoding="utf-8")
