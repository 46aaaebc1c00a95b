"""Group stops into per-person panels using exact composite keys."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass

from .records import DriverPanel

log = logging.getLogger(__name__)

MAX_STOPS = 10


@dataclass(frozen=True)
class DriverKey:
    state: str
    key_tuple: tuple

    @property
    def complete(self) -> bool:
        return bool(self.key_tuple) and all(self.key_tuple)

    def driver_id(self) -> str:
        """Content hash of the normalized key, stable across runs and input order."""
        payload = "\x1f".join((self.state,) + tuple(self.key_tuple))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:20]


@dataclass
class LinkageReport:
    n_stops: int
    n_linkable: int
    n_drivers: int
    pct_multiply_stopped: float
    n_removed_overmatch: int = 0

    @property
    def key_availability(self) -> float:
        return self.n_linkable / self.n_stops if self.n_stops else float("nan")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _unlinkable_id(record) -> str:
    payload = f"unlinkable\x1f{record.state}\x1f{record.stop_id}"
    return "u" + hashlib.sha256(payload.encode("utf-8")).hexdigest()[:19]


def link_drivers(records, config=None):
    """Group records that share a complete :class:`DriverKey`.

    Records with any empty key component become singleton panels with
    ``linkable=False``.

    Parameters
    ----------
    records : iterable of StopRecord
        Stops from a single state, link fields already normalized.
    config : StateConfig, optional
        When given, each record's key length is checked against the
        configured components.

    Returns
    -------
    panels : list of DriverPanel
        Sorted by ``driver_id``.
    report : LinkageReport
    """
    groups: dict = {}
    singles = []
    n_stops = 0
    states = set()
    width = len(config.link_key) if config is not None else None
    for rec in records:
        n_stops += 1
        states.add(rec.state)
        if width is not None and len(rec.link_fields) != width:
            raise ValueError(
                f"stop {rec.stop_id}: expected {width} key components, got {len(rec.link_fields)}"
            )
        key = DriverKey(rec.state, tuple(rec.link_fields))
        if key.complete:
            groups.setdefault(key, []).append(rec)
        else:
            singles.append(rec)
    if len(states) > 1:
        raise ValueError(f"link_drivers expects one state, got {sorted(states)}")

    panels = [
        DriverPanel(driver_id=key.driver_id(), state=key.state, stops=tuple(stops))
        for key, stops in groups.items()
    ]
    panels += [
        DriverPanel(driver_id=_unlinkable_id(rec), state=rec.state, stops=(rec,), linkable=False)
        for rec in singles
    ]
    panels.sort(key=lambda p: p.driver_id)
    n_linkable = n_stops - len(singles)
    n_multi = sum(1 for p in panels if p.n_stops >= 2)
    report = LinkageReport(
        n_stops=n_stops,
        n_linkable=n_linkable,
        n_drivers=len(panels),
        pct_multiply_stopped=100.0 * n_multi / len(panels) if panels else 0.0,
    )
    log.info("linked %d stops into %d panels (%.1f%% keyed)", n_stops, len(panels),
             100 * report.key_availability if n_stops else 0.0)
    return panels, report


def remove_overmatched(panels, max_stops: int = MAX_STOPS):
    """Drop panels with more than ``max_stops`` stops, which are likely merged people.

    Returns
    -------
    kept : list of DriverPanel
    n_removed : int
    """
    panels = list(panels)
    kept = [p for p in panels if p.n_stops <= max_stops]
    n_removed = len(panels) - len(kept)
    if panels:
        log.info("removed %d over-matched drivers (%.3f%%)", n_removed, 100 * n_removed / len(panels))
    return kept, n_removed
