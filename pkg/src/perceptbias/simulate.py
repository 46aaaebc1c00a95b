"""Synthetic stop panels from a threshold model of perception and search.

An officer sees features ``X`` (driver appearance plus stop context), forms a
probability that the driver is Hispanic, records a perceived race, infers a
contraband probability ``p(X, r)`` and searches when it clears a threshold
``t(X, r)``. The default functional forms are::

    r(X)    = logistic(a0 + a1 * appearance + a2 * officer_hispanic + a3 * county)
    p(X, r) = logistic(b0 + b1 * z + b2 * r)
    t(X, r) = c0 + c1 * r + c2 * officer_hispanic + c3 * county
    P(search) = logistic((p - t) / s)        (or 1{p > t} when s is None)

where ``appearance = driver_appearance + context_noise`` varies from stop to
stop, ``z`` is a fixed driver risk trait and ``county`` is a county effect in
[-1, 1]. The recorded label is Hispanic when a uniform draw falls below
``r(X)``.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
import yaml
from scipy.special import expit

from .exceptions import ConfigError
from .records import PANEL_COLUMNS, frame_to_panels

log = logging.getLogger(__name__)

SCENARIOS = ("null", "statistical_discrimination", "taste_discrimination", "officer_confound")
DRIVER_CHUNK = 1024
TRUTH_STOPS = 10_000_000
TRUTH_SEED = 20_240_917

#: Taste-scenario threshold shift giving a search-rate effect of about 0.4 points.
TASTE_SHIFT = -0.011


@dataclass(frozen=True)
class SimConfig:
    """Parameters of the generative model; see the module docstring for the forms.

    The ``scenario`` names which channel links perceived race to searches and
    is checked against the parameters: ``null`` and ``officer_confound``
    need ``risk_race == threshold_race == 0``; ``officer_confound`` also needs
    officer race to move both perception and threshold;
    ``statistical_discrimination`` needs ``risk_race != 0`` and
    ``taste_discrimination`` needs ``threshold_race != 0``.
    """

    scenario: str = "null"
    n_drivers: int = 2000
    seed: int = 0
    state: str = "AZ"
    stops_pmf: tuple = (0.30, 0.25, 0.17, 0.11, 0.07, 0.04, 0.03, 0.015, 0.01, 0.005)
    risk_trait_sd: float = 1.0
    appearance_mean: float = 0.0
    appearance_sd: float = 1.0
    context_sd: float = 1.0
    perception_intercept: float = 0.0
    perception_appearance: float = 1.5
    perception_officer: float = 0.0
    perception_county: float = 0.0
    risk_intercept: float = -3.0
    risk_trait: float = 0.5
    risk_race: float = 0.0
    threshold_intercept: float = 0.265
    threshold_race: float = 0.0
    threshold_officer: float = 0.0
    threshold_county: float = 0.0
    search_scale: Optional[float] = 0.05
    n_officers: int = 200
    p_hispanic_officer: float = 0.3
    n_counties: int = 15
    home_county_prob: float = 0.8
    date_start: str = "2011-01-01"
    date_end: str = "2015-12-31"
    duration_mean: float = 15.0
    duration_search_shift: float = 0.0
    arrest_if_searched: float = 0.3
    arrest_if_not_searched: float = 0.01

    def __post_init__(self):
        if isinstance(self.stops_pmf, list):
            object.__setattr__(self, "stops_pmf", tuple(self.stops_pmf))
        self.validate()

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}")
        if self.n_drivers < 1:
            raise ConfigError("n_drivers must be positive")
        pmf = np.asarray(self.stops_pmf, dtype=float)
        if not 1 <= len(pmf) <= 10 or (pmf < 0).any() or not np.isclose(pmf.sum(), 1.0):
            raise ConfigError("stops_pmf must be a distribution over 1..k stops with k <= 10")
        if self.state not in ("AZ", "CO", "TX"):
            raise ConfigError(f"unknown state {self.state!r}")
        if self.state == "TX" and dt.date.fromisoformat(self.date_start) < dt.date(2016, 1, 1):
            raise ConfigError("TX stops must be dated 2016 or later")
        if dt.date.fromisoformat(self.date_end) < dt.date.fromisoformat(self.date_start):
            raise ConfigError("date_end precedes date_start")
        for name in ("p_hispanic_officer", "home_county_prob", "arrest_if_searched",
                     "arrest_if_not_searched"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.search_scale is not None and self.search_scale <= 0:
            raise ConfigError("search_scale must be positive (or None for a hard threshold)")
        lo, hi = self.threshold_bounds()
        if lo < 0 or hi > 1:
            raise ConfigError(f"threshold t(X, r) ranges over [{lo:.3f}, {hi:.3f}], outside [0, 1]")
        racial = self.risk_race != 0 or self.threshold_race != 0
        if self.scenario in ("null", "officer_confound") and racial:
            raise ConfigError(f"{self.scenario} scenario requires risk_race == threshold_race == 0")
        if self.scenario == "officer_confound" and (
            self.perception_officer == 0 or self.threshold_officer == 0
        ):
            raise ConfigError("officer_confound needs nonzero perception_officer and threshold_officer")
        if self.scenario == "statistical_discrimination" and (
            self.risk_race == 0 or self.threshold_race != 0
        ):
            raise ConfigError("statistical_discrimination needs risk_race != 0 and threshold_race == 0")
        if self.scenario == "taste_discrimination" and (
            self.threshold_race == 0 or self.risk_race != 0
        ):
            raise ConfigError("taste_discrimination needs threshold_race != 0 and risk_race == 0")

    def threshold_bounds(self):
        terms = [
            (min(0.0, self.threshold_race), max(0.0, self.threshold_race)),
            (min(0.0, self.threshold_officer), max(0.0, self.threshold_officer)),
            (-abs(self.threshold_county), abs(self.threshold_county)),
        ]
        lo = self.threshold_intercept + sum(t[0] for t in terms)
        hi = self.threshold_intercept + sum(t[1] for t in terms)
        return lo, hi

    @classmethod
    def preset(cls, scenario: str, **overrides) -> "SimConfig":
        """Default parameters for each scenario, with optional overrides."""
        base = {
            "null": {},
            "taste_discrimination": {"threshold_race": TASTE_SHIFT},
            "statistical_discrimination": {"risk_race": 0.25},
            "officer_confound": {"perception_officer": 2.0, "threshold_officer": -0.1},
        }[scenario]
        return cls(scenario=scenario, **{**base, **overrides})

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["stops_pmf"] = list(self.stops_pmf)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown SimConfig fields {sorted(unknown)}")
        data = dict(data)
        for key in ("date_start", "date_end"):
            if isinstance(data.get(key), dt.date):
                data[key] = data[key].isoformat()
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "SimConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh) or {})

    def model_hash(self) -> str:
        """Hash of the fields that determine the population estimand."""
        keys = (
            "scenario", "risk_trait_sd", "risk_intercept", "risk_trait", "risk_race",
            "threshold_intercept", "threshold_race", "threshold_officer", "threshold_county",
            "search_scale", "p_hispanic_officer",
        )
        payload = json.dumps({k: getattr(self, k) for k in keys}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


# --- model components -------------------------------------------------------


def perception_probability(appearance, officer_hispanic, county_effect, config: SimConfig):
    return expit(
        config.perception_intercept
        + config.perception_appearance * np.asarray(appearance)
        + config.perception_officer * np.asarray(officer_hispanic)
        + config.perception_county * np.asarray(county_effect)
    )


def risk_probability(trait, r, config: SimConfig):
    return expit(config.risk_intercept + config.risk_trait * np.asarray(trait)
                 + config.risk_race * np.asarray(r))


def search_threshold(r, officer_hispanic, county_effect, config: SimConfig):
    return (
        config.threshold_intercept
        + config.threshold_race * np.asarray(r)
        + config.threshold_officer * np.asarray(officer_hispanic)
        + config.threshold_county * np.asarray(county_effect)
    )


def perceive_race(prob, u):
    """Recorded race label: ``'hispanic'`` iff the uniform draw ``u`` is below ``prob``.

    Works elementwise on arrays (returning an array of labels).

    Raises
    ------
    ConfigError
        If ``prob`` lies outside [0, 1].
    """
    prob = np.asarray(prob, dtype=float)
    if np.any((prob < 0) | (prob > 1)) or np.any(np.isnan(prob)):
        raise ConfigError("perception probability must lie in [0, 1]")
    out = np.where(np.asarray(u) < prob, "hispanic", "white")
    return out.item() if out.ndim == 0 else out


def search_probability(p, t, scale):
    """Probability of a search given contraband belief ``p`` and threshold ``t``.

    With ``scale=None`` the rule is deterministic: search iff ``p > t``.
    """
    p = np.asarray(p, dtype=float)
    t = np.asarray(t, dtype=float)
    if scale is None:
        return (p > t).astype(float)
    return expit((p - t) / scale)


def search_decision(p, t, scale=None, u=None):
    """Whether the officer searches.

    ``scale=None`` gives the hard threshold ``p > t`` (ties do not search);
    otherwise a search happens when ``u < logistic((p - t) / scale)``.
    """
    if scale is None:
        out = np.asarray(p) > np.asarray(t)
    else:
        if u is None:
            raise ValueError("the stochastic rule needs a uniform draw u")
        out = np.asarray(u) < search_probability(p, t, scale)
    return out.item() if out.ndim == 0 else out


# --- ground truth -----------------------------------------------------------


@dataclass
class GroundTruth:
    """Estimand implied by a config.

    ``delta`` is the average over stops of
    ``P(search | X, r=1) - P(search | X, r=0)`` holding ``X`` fixed.
    """

    scenario: str
    delta: float
    method: str
    mc_se: float = 0.0
    n_stops: int = 0
    seed: Optional[int] = None
    log_odds_delta: Optional[float] = None
    config_hash: str = ""

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _cache_dir() -> Path:
    return Path(os.environ.get("PERCEPTBIAS_CACHE_DIR", Path.home() / ".cache" / "perceptbias"))


def _truth_by_simulation(config: SimConfig, n_stops: int, seed: int):
    rng = np.random.default_rng(seed)
    total = total_sq = 0.0
    done = 0
    chunk = 1_000_000
    while done < n_stops:
        m = min(chunk, n_stops - done)
        z = rng.normal(0.0, config.risk_trait_sd, m)
        o = (rng.random(m) < config.p_hispanic_officer).astype(float)
        u = rng.uniform(-1.0, 1.0, m)
        p1 = search_probability(risk_probability(z, 1.0, config), search_threshold(1.0, o, u, config),
                                config.search_scale)
        p0 = search_probability(risk_probability(z, 0.0, config), search_threshold(0.0, o, u, config),
                                config.search_scale)
        d = p1 - p0
        total += float(d.sum())
        total_sq += float((d * d).sum())
        done += m
    mean = total / n_stops
    var = max(total_sq / n_stops - mean**2, 0.0)
    return mean, float(np.sqrt(var / n_stops))


def ground_truth(config: SimConfig, n_stops: int = TRUTH_STOPS, use_cache: bool = True) -> GroundTruth:
    """Implied effect of perceived race on the search probability.

    Scenarios without a racial channel have ``delta = 0`` exactly. Otherwise
    ``delta`` is a large simulation over the feature distribution, cached on
    disk by :meth:`SimConfig.model_hash`.
    """
    h = config.model_hash()
    log_odds = None
    if config.search_scale is not None and config.risk_race == 0:
        log_odds = -config.threshold_race / config.search_scale
    if config.scenario in ("null", "officer_confound"):
        return GroundTruth(config.scenario, 0.0, "closed_form", log_odds_delta=0.0, config_hash=h)

    path = _cache_dir() / f"truth-{h}-{n_stops}.json"
    if use_cache and path.exists():
        return GroundTruth(**json.loads(path.read_text()))
    mean, se = _truth_by_simulation(config, n_stops, TRUTH_SEED)
    truth = GroundTruth(config.scenario, mean, "simulation", mc_se=se, n_stops=n_stops,
                        seed=TRUTH_SEED, log_odds_delta=log_odds, config_hash=h)
    if use_cache:
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(truth.to_dict(), sort_keys=True))
        except OSError as exc:
            log.warning("could not cache ground truth: %s", exc)
    return truth


# --- panel generation -------------------------------------------------------


def _pool(config: SimConfig):
    rng = np.random.default_rng([config.seed, 0])
    officer_hisp = (rng.random(config.n_officers) < config.p_hispanic_officer).astype(float)
    county_eff = rng.uniform(-1.0, 1.0, config.n_counties)
    return officer_hisp, county_eff


def _chunk(config: SimConfig, start: int, stop: int, officer_hisp, county_eff):
    rng = np.random.default_rng([config.seed, 1, start // DRIVER_CHUNK])
    nd = stop - start
    pmf = np.asarray(config.stops_pmf, dtype=float)
    n_stops = rng.choice(np.arange(1, len(pmf) + 1), size=nd, p=pmf / pmf.sum())
    trait = rng.normal(0.0, config.risk_trait_sd, nd)
    look = rng.normal(config.appearance_mean, config.appearance_sd, nd)
    home = rng.integers(0, config.n_counties, nd)

    drv = np.repeat(np.arange(nd), n_stops)
    m = len(drv)
    seq = np.arange(m) - np.repeat(np.cumsum(n_stops) - n_stops, n_stops)
    officer = rng.integers(0, config.n_officers, m)
    away = rng.random(m) >= config.home_county_prob
    county = np.where(away, rng.integers(0, config.n_counties, m), home[drv])
    appearance = look[drv] + rng.normal(0.0, config.context_sd, m)
    o = officer_hisp[officer]
    u_c = county_eff[county]

    r_prob = perception_probability(appearance, o, u_c, config)
    r = (rng.random(m) < r_prob).astype(float)
    p = risk_probability(trait[drv], r, config)
    t = search_threshold(r, o, u_c, config)
    draw = rng.random(m)
    if config.search_scale is None:
        searched = (p > t).astype(float)
    else:
        searched = (draw < search_probability(p, t, config.search_scale)).astype(float)

    d0 = dt.date.fromisoformat(config.date_start).toordinal()
    d1 = dt.date.fromisoformat(config.date_end).toordinal()
    day = rng.integers(d0, d1 + 1, m)
    hour = rng.integers(0, 24, m)
    arrest_u = rng.random(m)
    dur = rng.exponential(config.duration_mean, m) + config.duration_search_shift * searched

    idx = start + drv
    frame = pd.DataFrame({
        "driver_id": np.char.add("D", np.char.zfill(idx.astype(str), 7)),
        "linkable": True,
        "state": config.state,
        "stop_id": np.char.add(
            np.char.add("S", np.char.zfill(idx.astype(str), 7)),
            np.char.add("-", np.char.zfill(seq.astype(str), 2)),
        ),
        "date": pd.to_datetime(day - 719163, unit="D"),
        "hour": hour.astype(float),
        "county": np.char.add("C", np.char.zfill(county.astype(str), 3)),
        "officer_id": np.char.add("O", np.char.zfill(officer.astype(str), 4)),
        "perceived_race": np.where(r == 1, "hispanic", "white"),
        "searched": searched,
        "arrested": np.nan,
        "duration_minutes": np.nan,
        "officer_hispanic": o,
    })
    if config.state != "TX":
        p_arrest = np.where(searched == 1, config.arrest_if_searched, config.arrest_if_not_searched)
        frame["arrested"] = (arrest_u < p_arrest).astype(float)
    if config.state == "AZ":
        frame["duration_minutes"] = dur
    return frame


def simulate_frame(config: SimConfig, with_truth: bool = True, keep_latent: bool = False):
    """Generate stops as a canonical frame.

    Drivers are produced in blocks of :data:`DRIVER_CHUNK`, each with its own
    random stream derived from ``(seed, block index)``, so output does not
    depend on how blocks are scheduled.

    Returns
    -------
    frame : DataFrame
    truth : GroundTruth or None
    """
    officer_hisp, county_eff = _pool(config)
    parts = [
        _chunk(config, lo, min(lo + DRIVER_CHUNK, config.n_drivers), officer_hisp, county_eff)
        for lo in range(0, config.n_drivers, DRIVER_CHUNK)
    ]
    frame = pd.concat(parts, ignore_index=True)
    if not keep_latent:
        frame = frame.loc[:, list(PANEL_COLUMNS)]
    truth = ground_truth(config) if with_truth else None
    return frame, truth


def generate_panel(config: SimConfig, with_truth: bool = True):
    """Generate :class:`~perceptbias.records.DriverPanel` objects and the ground truth."""
    frame, truth = simulate_frame(config, with_truth=with_truth)
    return frame_to_panels(frame), truth


def naive_pooled_difference(frame: pd.DataFrame, outcome: str = "searched") -> float:
    """Search-rate gap between Hispanic- and white-perceived stops, ignoring who the driver is."""
    y = frame[outcome].to_numpy(dtype=float)
    r = (frame["perceived_race"] == "hispanic").to_numpy()
    return float(y[r].mean() - y[~r].mean())
