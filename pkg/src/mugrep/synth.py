"""Seeded synthetic city generator and dataset summary.

The latent unit-price process is
    price = base + district_offset + strength * field(location)
            + attribute_effect + trend * years(date) + noise
with field() a sum of random radial bumps (a few city-scale ones plus one
small bump per community, so communities carry persistent local levels).
All latent parameters are written to latent.json for diagnostics; the same
seed always produces a byte-identical directory.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import schema as sch
from .data import (
    Checkin,
    Community,
    Dataset,
    Poi,
    TransactionEvent,
    Trip,
    UrbanRecords,
    UserProfile,
    load_dataset,
    write_dataset,
)

BASE_PRICE = 5.0
PRICE_FLOOR = 0.3

NAME_FIRST = [
    "Golden", "Jade", "Riverside", "Sunny", "Lakeview", "Harmony",
    "Phoenix", "Lotus", "Maple", "Dragon", "Pearl", "Bamboo",
]
NAME_SECOND = [
    "Gardens", "Court", "Heights", "Residence", "Mansion",
    "Terrace", "Park", "Villa", "Plaza", "Palace",
]


@dataclass
class GeneratorConfig:
    seed: int = 0
    n_districts: int = 4
    n_communities: int = 200
    n_transactions: int = 5000
    city_extent_m: float = 12000.0
    spatial_autocorr_strength: float = 0.6
    temporal_drift_per_year: float = 0.4
    noise_std: float = 0.1
    date_range_days: int = 730
    n_pois: int = 2500
    n_stations: int = 300
    n_checkins: int = 30000
    n_trips: int = 12000
    n_users: int = 4000

    def validate(self) -> None:
        counts = [
            self.n_districts, self.n_communities, self.n_transactions,
            self.n_pois, self.n_stations, self.n_checkins, self.n_trips,
            self.n_users, self.date_range_days,
        ]
        if any(c < 1 for c in counts):
            raise ValueError("all generator counts must be >= 1")
        if self.city_extent_m <= 0:
            raise ValueError("zero-area city: extent must be positive")
        if not 0.0 <= self.spatial_autocorr_strength <= 1.0:
            raise ValueError("spatial_autocorr_strength must be in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        cfg = cls()
        for k, v in d.items():
            if not hasattr(cfg, k):
                raise ValueError(f"unknown generator option '{k}'")
            setattr(cfg, k, type(getattr(cfg, k))(v))
        return cfg


def spatial_field(bumps: list, x: float, y: float) -> float:
    """Sum of radial Gaussian bumps at (x, y), without the strength factor."""
    total = 0.0
    for cx, cy, sigma, amp in bumps:
        d2 = (x - cx) ** 2 + (y - cy) ** 2
        total += amp * math.exp(-d2 / (2.0 * sigma * sigma))
    return total


def attribute_effect(effects: dict, attrs: dict) -> float:
    total = 0.0
    for name, spec in effects["numeric"].items():
        total += spec["weight"] * (attrs[name] - spec["center"]) / spec["scale"]
    for name, w in effects["binary"].items():
        total += w * attrs[name]
    for name, table in effects["categorical"].items():
        total += table[attrs[name]]
    return total


def latent_mean_price(latent: dict, district_id: int, x: float, y: float,
                      date: int, attrs: dict) -> float:
    return (
        latent["base"]
        + latent["district_offsets"][district_id]
        + latent["spatial_autocorr_strength"] * spatial_field(latent["field_bumps"], x, y)
        + attribute_effect(latent["attribute_effects"], attrs)
        + latent["trend_per_year"] * date / 365.0
    )


def _make_attribute_effects(rng: np.random.Generator) -> dict:
    numeric = {
        "rooms": {"center": 3.0, "scale": 1.0, "weight": float(rng.normal(0, 0.15))},
        "area": {"center": 85.0, "scale": 30.0, "weight": float(rng.normal(0, 0.2))},
        "floor_number": {"center": 18.0, "scale": 8.0, "weight": float(rng.normal(0, 0.08))},
        "elevator_ratio": {"center": 0.5, "scale": 0.25, "weight": float(rng.normal(0, 0.08))},
    }
    binary = {"free_of_tax": float(rng.normal(0, 0.15))}
    categorical = {
        name: {v: float(rng.normal(0, 0.12)) for v in values}
        for name, values in sch.ESTATE_CATEGORICAL.items()
    }
    return {"numeric": numeric, "binary": binary, "categorical": categorical}


def _sample_estate_attrs(rng: np.random.Generator) -> dict:
    attrs = {
        "rooms": float(rng.integers(1, 6)),
        "area": float(round(min(250.0, max(30.0, math.exp(rng.normal(math.log(85.0), 0.3)))), 1)),
        "floor_number": float(rng.integers(6, 34)),
        "elevator_ratio": float(round(rng.uniform(0.15, 1.0), 3)),
        "free_of_tax": int(rng.random() < 0.6),
    }
    for name, values in sch.ESTATE_CATEGORICAL.items():
        attrs[name] = values[int(rng.integers(0, len(values)))]
    return attrs


def _tilted(low: list[float], high: list[float], pct: float) -> list[float]:
    probs = [(1.0 - pct) * a + pct * b for a, b in zip(low, high)]
    s = sum(probs)
    return [p / s for p in probs]


def generate(config: GeneratorConfig, out_dir: str | Path) -> Path:
    """Generate the full dataset directory. Deterministic in config.seed."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    extent = config.city_extent_m
    m = config.n_districts
    n_com = config.n_communities

    # District centers on a jittered grid; communities take the nearest one.
    g = math.ceil(math.sqrt(m))
    centers = []
    for i in range(m):
        gx, gy = i % g, i // g
        cx = (gx + 0.5) * extent / g + rng.uniform(-extent / (6 * g), extent / (6 * g))
        cy = (gy + 0.5) * extent / g + rng.uniform(-extent / (6 * g), extent / (6 * g))
        centers.append((cx, cy))

    cluster_centers = [(rng.uniform(0.15, 0.85) * extent, rng.uniform(0.15, 0.85) * extent)
                       for _ in range(4)]
    centroids = []
    for _ in range(n_com):
        if rng.random() < 0.7:
            cc = cluster_centers[int(rng.integers(0, len(cluster_centers)))]
            x = min(extent, max(0.0, rng.normal(cc[0], extent / 12)))
            y = min(extent, max(0.0, rng.normal(cc[1], extent / 12)))
        else:
            x, y = rng.uniform(0, extent), rng.uniform(0, extent)
        centroids.append((float(x), float(y)))

    districts = [
        int(np.argmin([(x - cx) ** 2 + (y - cy) ** 2 for cx, cy in centers]))
        for x, y in centroids
    ]
    # Every district must own at least one community.
    for d in range(m):
        if d not in districts:
            cand = int(np.argmin(
                [(x - centers[d][0]) ** 2 + (y - centers[d][1]) ** 2 for x, y in centroids]
            ))
            districts[cand] = d

    district_offsets = [float(v) for v in rng.normal(0.0, 0.7, size=m)]

    bumps = []
    for _ in range(10):
        bumps.append([
            float(rng.uniform(0, extent)), float(rng.uniform(0, extent)),
            float(rng.uniform(1500.0, 3500.0)), float(rng.normal(0.0, 0.9)),
        ])
    for x, y in centroids:
        bumps.append([x, y, float(rng.uniform(250.0, 500.0)), float(rng.normal(0.0, 0.8))])

    # Market activity migrates across the city over the covered period: the
    # community mix interpolates from an early popularity profile to an
    # independent late one, so late-period transactions concentrate in
    # communities with thin early history (emerging neighborhoods).
    zipf = (np.arange(1, n_com + 1, dtype=float)) ** -1.0
    pop_early = zipf[rng.permutation(n_com)]
    pop_early = pop_early / pop_early.sum()
    pop_late = zipf[rng.permutation(n_com)]
    pop_late = pop_late / pop_late.sum()
    popularity = 0.5 * (pop_early + pop_late)

    # Districts are spatial regions, so raw offsets would correlate with the
    # field even at strength zero. Project them orthogonal to the
    # volume-weighted district field means so the autocorrelation knob is the
    # only source of field-price correlation.
    fvals = np.array([spatial_field(bumps, x, y) for x, y in centroids])
    dist_arr = np.array(districts)
    off = np.array(district_offsets)
    p_d = np.array([popularity[dist_arr == d].sum() for d in range(m)])
    m_d = np.array([
        (popularity[dist_arr == d] @ fvals[dist_arr == d]) / p_d[d] if p_d[d] > 0 else 0.0
        for d in range(m)
    ])
    centered = m_d - float(p_d @ m_d)
    denom = float(p_d @ (centered * centered))
    if denom > 1e-12:
        off = off - (float(p_d @ (off * centered)) / denom) * centered
    district_offsets = [float(v) for v in off]

    effects = _make_attribute_effects(rng)
    trend = config.temporal_drift_per_year
    strength = config.spatial_autocorr_strength

    latent = {
        "base": BASE_PRICE,
        "district_offsets": district_offsets,
        "field_bumps": bumps,
        "spatial_autocorr_strength": strength,
        "attribute_effects": effects,
        "trend_per_year": trend,
        "noise_std": config.noise_std,
    }

    # Community quality percentile drives resident-profile tilts.
    quality = [
        BASE_PRICE + district_offsets[districts[i]] + strength * spatial_field(bumps, *centroids[i])
        for i in range(n_com)
    ]
    order = sorted(range(n_com), key=lambda i: quality[i])
    pct = [0.0] * n_com
    for rank, i in enumerate(order):
        pct[i] = rank / max(1, n_com - 1)

    seen_names: dict[str, int] = {}
    communities = []
    for i in range(n_com):
        first = NAME_FIRST[int(rng.integers(0, len(NAME_FIRST)))]
        second = NAME_SECOND[int(rng.integers(0, len(NAME_SECOND)))]
        name = f"{first} {second}"
        times = seen_names.get(name, 0)
        seen_names[name] = times + 1
        if times:
            name = f"{name} {times + 1}"
        communities.append(Community(
            id=i,
            name=name,
            x_m=centroids[i][0],
            y_m=centroids[i][1],
            district_id=districts[i],
            developer=sch.DEVELOPERS[int(rng.integers(0, len(sch.DEVELOPERS)))],
            completion_year=int(rng.integers(1995, 2021)),
            building_count=int(rng.integers(3, 41)),
            estate_count=int(rng.integers(100, 3001)),
            property_fee=float(round(rng.uniform(0.8, 8.0), 2)),
        ))

    day_weights = np.tile([1.0, 1.0, 1.0, 1.0, 1.25, 1.5, 1.4],
                          math.ceil(config.date_range_days / 7))[: config.date_range_days]
    day_weights = day_weights / day_weights.sum()

    events = []
    for _ in range(config.n_transactions):
        date = int(rng.choice(config.date_range_days, p=day_weights))
        shift = date / max(1, config.date_range_days - 1)
        mix = (1.0 - shift) * pop_early + shift * pop_late
        ci = int(rng.choice(n_com, p=mix / mix.sum()))
        jx = float(np.clip(rng.normal(0.0, 360.0), -780.0, 780.0))
        jy = float(np.clip(rng.normal(0.0, 360.0), -780.0, 780.0))
        x, y = centroids[ci][0] + jx, centroids[ci][1] + jy
        attrs = _sample_estate_attrs(rng)
        price = latent_mean_price(latent, districts[ci], x, y, date, attrs) + float(
            rng.normal(0.0, config.noise_std)
        )
        events.append(TransactionEvent(
            id=len(events), x_m=x, y_m=y, date=date, community_id=ci,
            raw_attributes=attrs, y=max(PRICE_FLOOR, price),
        ))

    # Hotspots biased toward high-field areas anchor POIs, check-ins and trips.
    cand = [(rng.uniform(0, extent), rng.uniform(0, extent)) for _ in range(40)]
    weights = np.array([math.exp(1.5 * spatial_field(bumps, cx, cy)) for cx, cy in cand])
    weights = weights / weights.sum()
    hotspot_idx = rng.choice(len(cand), size=6, replace=False, p=weights)
    hotspots = [cand[int(i)] for i in hotspot_idx]

    poi_probs = [0.18, 0.14, 0.22, 0.20, 0.16, 0.10]
    pois = []
    for _ in range(config.n_pois):
        if rng.random() < 0.45:
            hx, hy = hotspots[int(rng.integers(0, len(hotspots)))]
            x = float(np.clip(rng.normal(hx, 700.0), 0, extent))
            y = float(np.clip(rng.normal(hy, 700.0), 0, extent))
        else:
            x, y = float(rng.uniform(0, extent)), float(rng.uniform(0, extent))
        cat = sch.POI_CATEGORIES[int(rng.choice(len(sch.POI_CATEGORIES), p=poi_probs))]
        pois.append(Poi(x, y, cat))
    stations = []
    for _ in range(config.n_stations):
        if rng.random() < 0.7:
            hx, hy = hotspots[int(rng.integers(0, len(hotspots)))]
            x = float(np.clip(rng.normal(hx, 900.0), 0, extent))
            y = float(np.clip(rng.normal(hy, 900.0), 0, extent))
        else:
            x, y = float(rng.uniform(0, extent)), float(rng.uniform(0, extent))
        cat = "subway" if rng.random() < 0.3 else "bus"
        stations.append(Poi(x, y, cat))

    users = []
    user_home = []
    ua = sch.USER_ATTRIBUTES
    for _ in range(config.n_users):
        ci = int(rng.choice(n_com, p=popularity))
        p = pct[ci]
        attrs = {
            "hometown": ua["hometown"][int(rng.choice(6, p=[0.4, 0.15, 0.15, 0.12, 0.12, 0.06]))],
            "gender": ua["gender"][int(rng.integers(0, 2))],
            "age": ua["age"][int(rng.choice(4, p=[0.1, 0.45, 0.3, 0.15]))],
            "life_stage": ua["life_stage"][int(rng.choice(4, p=[0.15, 0.45, 0.25, 0.15]))],
            "industry": ua["industry"][int(rng.choice(6, p=_tilted(
                [0.12, 0.22, 0.1, 0.08, 0.22, 0.26], [0.14, 0.1, 0.3, 0.22, 0.08, 0.16], p)))],
            "car_owner": "yes" if rng.random() < 0.25 + 0.5 * p else "no",
            "income": ua["income"][int(rng.choice(4, p=_tilted(
                [0.5, 0.3, 0.15, 0.05], [0.05, 0.2, 0.4, 0.35], p)))],
            "education": ua["education"][int(rng.choice(3, p=_tilted(
                [0.25, 0.4, 0.35], [0.55, 0.3, 0.15], p)))],
            "consumption_level": ua["consumption_level"][int(rng.choice(3, p=_tilted(
                [0.55, 0.3, 0.15], [0.15, 0.35, 0.5], p)))],
            "consumption_wish": ua["consumption_wish"][int(rng.choice(6, p=_tilted(
                [0.3, 0.15, 0.15, 0.1, 0.1, 0.2], [0.1, 0.2, 0.1, 0.25, 0.2, 0.15], p)))],
        }
        users.append(UserProfile(ci, attrs))
        user_home.append(ci)

    checkins = []
    for _ in range(config.n_checkins):
        uid = int(rng.integers(0, config.n_users))
        if rng.random() < 0.7:
            hx, hy = centroids[user_home[uid]]
            sx, sy = 260.0, 260.0
        else:
            hx, hy = hotspots[int(rng.integers(0, len(hotspots)))]
            sx, sy = 420.0, 420.0
        x = float(np.clip(rng.normal(hx, sx), 0, extent))
        y = float(np.clip(rng.normal(hy, sy), 0, extent))
        ts = int(rng.integers(0, config.date_range_days * 1440))
        checkins.append(Checkin(uid, x, y, ts))

    trips = []
    mode_base = np.array([0.28, 0.10, 0.30, 0.15, 0.17])
    dest_base = np.array([0.38, 0.10, 0.30, 0.22])
    for _ in range(config.n_trips):
        ci = int(rng.choice(n_com, p=popularity))
        tilt = pct[ci] - 0.5
        ox = float(np.clip(rng.normal(centroids[ci][0], 200.0), 0, extent))
        oy = float(np.clip(rng.normal(centroids[ci][1], 200.0), 0, extent))
        if rng.random() < 0.6:
            hx, hy = hotspots[int(rng.integers(0, len(hotspots)))]
            dx = float(np.clip(rng.normal(hx, 500.0), 0, extent))
            dy = float(np.clip(rng.normal(hy, 500.0), 0, extent))
        else:
            dx, dy = float(rng.uniform(0, extent)), float(rng.uniform(0, extent))
        mp = mode_base + np.array([0.16, 0.02, -0.12, -0.04, -0.02]) * tilt
        mp = np.clip(mp, 0.01, None)
        mp = mp / mp.sum()
        dp = dest_base + np.array([-0.04, 0.0, 0.02, 0.02]) * tilt
        dp = np.clip(dp, 0.01, None)
        dp = dp / dp.sum()
        trips.append(Trip(
            ox, oy, dx, dy,
            sch.TRAVEL_MODES[int(rng.choice(5, p=mp))],
            sch.DESTINATION_TYPES[int(rng.choice(4, p=dp))],
            bool(rng.random() < 0.30),
        ))

    dataset = Dataset(
        events=events,
        communities=communities,
        records=UrbanRecords(pois=pois, stations=stations, checkins=checkins,
                             trips=trips, users=users),
        schema=sch.default_schema(),
    )
    out_dir = Path(out_dir)
    write_dataset(out_dir, dataset)
    (out_dir / "latent.json").write_text(
        json.dumps(latent, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return out_dir


def describe(dataset_dir: str | Path) -> dict:
    """Counts and per-district price statistics for a dataset directory."""
    ds = load_dataset(dataset_dir)
    per_district: dict[int, list[float]] = {}
    for ev in ds.events:
        d = next(c.district_id for c in ds.communities if c.id == ev.community_id)
        per_district.setdefault(d, []).append(ev.y)
    district_stats = {}
    for d in sorted(per_district):
        arr = np.array(per_district[d])
        district_stats[str(d)] = {
            "count": int(arr.size),
            "price_mean": float(arr.mean()),
            "price_std": float(arr.std()),
        }
    dates = [ev.date for ev in ds.events]
    return {
        "transactions": len(ds.events),
        "communities": len(ds.communities),
        "pois": len(ds.records.pois),
        "transport_stations": len(ds.records.stations),
        "checkins": len(ds.records.checkins),
        "trip_queries": len(ds.records.trips),
        "users": len(ds.records.users),
        "date_min": min(dates) if dates else None,
        "date_max": max(dates) if dates else None,
        "districts": district_stats,
    }
