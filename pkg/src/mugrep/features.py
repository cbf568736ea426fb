"""Feature construction: the seven feature groups, per-event input vectors,
per-community similarity vectors, and train-set normalization.

Builders are pure functions over immutable inputs. Temporal features only ever
read strictly earlier transactions; everything else is derived from the static
urban record set.
"""

from __future__ import annotations

import bisect
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Community, Dataset, Poi, TransactionEvent
from .schema import SchemaError
from .spatial import GridIndex

DEFAULT_RADIUS_M = 500.0
DEFAULT_CAP_M = 5000.0
HISTORY_WINDOW_DAYS = 90

GROUPS = [
    "profile",
    "community_profile",
    "temporal",
    "geographical",
    "visit",
    "mobility",
    "population",
]
SIMILARITY_GROUPS = {
    "g": "geographical",
    "v": "visit",
    "m": "mobility",
    "p": "population",
}
VISIT_SLOTS = [
    ("work", "workday"), ("work", "weekend"),
    ("break", "workday"), ("break", "weekend"),
    ("all", "workday"), ("all", "weekend"),
]


def is_weekend_day(day: int) -> bool:
    return day % 7 in (5, 6)


# ---------------------------------------------------------------------------
# Layout

@dataclass(frozen=True)
class Slot:
    group: str
    name: str
    kind: str  # "numeric" (z-scored) or "passthrough" (one-hot / flag)


class FeatureLayout:
    """Dataset-wide ordered slot list; identical for every event."""

    def __init__(self, slots: list[Slot]):
        self.slots = slots
        self.index = {(s.group, s.name): i for i, s in enumerate(slots)}

    def __len__(self) -> int:
        return len(self.slots)

    def group_indices(self, group: str) -> list[int]:
        return [i for i, s in enumerate(self.slots) if s.group == group]

    def groups(self) -> list[str]:
        seen = []
        for s in self.slots:
            if s.group not in seen:
                seen.append(s.group)
        return seen

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "community_index": "embedding",
            "slots": [{"group": s.group, "name": s.name, "kind": s.kind} for s in self.slots],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureLayout":
        return cls([Slot(s["group"], s["name"], s["kind"]) for s in d["slots"]])

    def layout_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def save(self, path: Path) -> None:
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "FeatureLayout":
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))


def build_layout(schema: dict, n_districts: int, dropped_groups: frozenset[str] = frozenset()) -> FeatureLayout:
    """Canonical slot order. ``dropped_groups`` removes whole feature groups
    (used by the feature-ablation variants)."""
    slots: list[Slot] = []

    def add(group, name, kind):
        if group not in dropped_groups:
            slots.append(Slot(group, name, kind))

    for name in schema["estate_numeric"]:
        add("profile", name, "numeric")
    for name in schema["estate_binary"]:
        add("profile", name, "passthrough")
    for name, values in schema["estate_categorical"].items():
        for v in values:
            add("profile", f"{name}={v}", "passthrough")

    for name in ["completion_year", "building_count", "estate_count", "property_fee"]:
        add("community_profile", name, "numeric")
    for dev in schema["developers"]:
        add("community_profile", f"developer={dev}", "passthrough")
    for d in range(n_districts):
        add("community_profile", f"district={d}", "passthrough")

    add("temporal", "valuation_day", "numeric")
    for d in range(7):
        add("temporal", f"day_of_week={d}", "passthrough")
    for name in ["hist_mean", "hist_var", "hist_max", "hist_min", "hist_count"]:
        add("temporal", name, "numeric")
    add("temporal", "hist_missing", "passthrough")

    for factor in schema["geo_factors"]:
        add("geographical", f"{factor}_count", "numeric")
        add("geographical", f"{factor}_nearest", "numeric")
    add("geographical", "facility_total", "numeric")

    for hours, daytype in VISIT_SLOTS:
        add("visit", f"visits_{hours}_{daytype}", "numeric")

    for daytype in ["workday", "weekend"]:
        add("mobility", f"inflow_{daytype}", "numeric")
    for daytype in ["workday", "weekend"]:
        add("mobility", f"outflow_{daytype}", "numeric")
    for daytype in ["workday", "weekend"]:
        for mode in schema["travel_modes"]:
            add("mobility", f"mode={mode}_{daytype}", "numeric")
    for daytype in ["workday", "weekend"]:
        for dst in schema["destination_types"]:
            add("mobility", f"dest={dst}_{daytype}", "numeric")

    add("population", "resident_count", "numeric")
    for attr, values in schema["user_attributes"].items():
        for v in values:
            add("population", f"{attr}={v}", "numeric")

    return FeatureLayout(slots)


@dataclass
class FeatureVector:
    values: np.ndarray
    layout: FeatureLayout


# ---------------------------------------------------------------------------
# Temporal: historical price statistics

@dataclass(frozen=True)
class HistoricalPriceStats:
    mean: float
    variance: float
    max: float
    min: float
    count: int
    missing_flag: int


class PriceHistory:
    """Per-community chronological price lists for rolling-window statistics."""

    def __init__(self, events: list[TransactionEvent]):
        self._dates: dict[int, list[int]] = {}
        self._prices: dict[int, list[float]] = {}
        for ev in sorted(events, key=lambda e: (e.date, e.id)):
            if ev.y is None:
                continue
            self._dates.setdefault(ev.community_id, []).append(ev.date)
            self._prices.setdefault(ev.community_id, []).append(ev.y)

    def window_prices(self, community_id: int, lo_date: int, hi_date: int) -> list[float]:
        """Prices of community transactions with lo_date <= date < hi_date."""
        dates = self._dates.get(community_id)
        if not dates:
            return []
        lo = bisect.bisect_left(dates, lo_date)
        hi = bisect.bisect_left(dates, hi_date)
        return self._prices[community_id][lo:hi]


def historical_price_stats(
    community_id: int, valuation_date: int, history: PriceHistory,
    window_days: int = HISTORY_WINDOW_DAYS,
) -> HistoricalPriceStats:
    """Price statistics of same-community sales closed in the rolling window
    [valuation_date - window_days, valuation_date). Population variance."""
    prices = history.window_prices(community_id, valuation_date - window_days, valuation_date)
    if not prices:
        return HistoricalPriceStats(0.0, 0.0, 0.0, 0.0, 0, 1)
    arr = np.asarray(prices)
    return HistoricalPriceStats(
        float(arr.mean()), float(arr.var()), float(arr.max()), float(arr.min()),
        int(arr.size), 0,
    )


# ---------------------------------------------------------------------------
# Geographical

class GeoIndex:
    """Facility grids per geographical factor; transportation is fed by
    transport stations, the six other factors by POI categories."""

    def __init__(self, pois: list[Poi], stations: list[Poi], geo_factors: list[str],
                 cell_m: float = DEFAULT_RADIUS_M):
        self.geo_factors = list(geo_factors)
        self.grids = {factor: GridIndex(cell_m) for factor in geo_factors}
        self.all_grid = GridIndex(cell_m)
        for p in pois:
            if p.category in self.grids:
                self.grids[p.category].add(p.x_m, p.y_m)
            self.all_grid.add(p.x_m, p.y_m)
        for s in stations:
            self.grids["transportation"].add(s.x_m, s.y_m)
            self.all_grid.add(s.x_m, s.y_m)

    def features(self, point: tuple[float, float],
                 radius_m: float = DEFAULT_RADIUS_M, cap_m: float = DEFAULT_CAP_M) -> np.ndarray:
        x, y = point
        out = []
        for factor in self.geo_factors:
            grid = self.grids[factor]
            out.append(float(len(grid.within(x, y, radius_m))))
            hit = grid.nearest_within(x, y, cap_m)
            out.append(hit[1] if hit is not None else cap_m)
        out.append(float(len(self.all_grid.within(x, y, radius_m))))
        return np.array(out)


def geographical_features(point, pois, stations, radius_m=DEFAULT_RADIUS_M,
                          cap_m=DEFAULT_CAP_M, geo_factors=None) -> np.ndarray:
    from .schema import GEO_FACTORS

    idx = GeoIndex(pois, stations, geo_factors or GEO_FACTORS)
    return idx.features(point, radius_m, cap_m)


# ---------------------------------------------------------------------------
# Population visits

class VisitIndex:
    """Check-in grid; visits are distinct (user, 10-minute window) pairs among
    the check-ins inside the query radius."""

    def __init__(self, checkins, cell_m: float = DEFAULT_RADIUS_M):
        self.grid = GridIndex(cell_m)
        self.meta: list[tuple[int, int]] = []  # (user_id, window)
        for c in checkins:
            self.grid.add(c.x_m, c.y_m)
            self.meta.append((c.user_id, c.timestamp_min // 10))

    def features(self, point: tuple[float, float],
                 radius_m: float = DEFAULT_RADIUS_M) -> np.ndarray:
        x, y = point
        visits = {self.meta[i] for i in self.grid.within(x, y, radius_m)}
        counts = {key: 0 for key in VISIT_SLOTS}
        for _user, window in visits:
            start_min = window * 10
            minute = start_min % 1440
            daytype = "weekend" if is_weekend_day(start_min // 1440) else "workday"
            if 600 <= minute < 1080:
                counts[("work", daytype)] += 1
            elif 1080 <= minute < 1380:
                counts[("break", daytype)] += 1
            counts[("all", daytype)] += 1
        return np.array([float(counts[key]) for key in VISIT_SLOTS])


def visit_features(point, checkins, radius_m=DEFAULT_RADIUS_M) -> np.ndarray:
    return VisitIndex(checkins).features(point, radius_m)


# ---------------------------------------------------------------------------
# Mobility

class MobilityTable:
    """Trips attributed to the community with the nearest centroid within
    the attribution radius; one fixed-length feature row per community."""

    def __init__(self, trips, communities: list[Community], schema: dict,
                 attribution_radius_m: float = DEFAULT_RADIUS_M):
        self.schema = schema
        modes = schema["travel_modes"]
        dests = schema["destination_types"]
        self.dim = 4 + 2 * len(modes) + 2 * len(dests)
        grid = GridIndex(attribution_radius_m)
        ids = []
        for c in communities:
            grid.add(c.x_m, c.y_m)
            ids.append(c.id)

        def attribute(x, y):
            hit = grid.nearest_within(x, y, attribution_radius_m)
            return ids[hit[0]] if hit is not None else None

        inflow = {c.id: [0, 0] for c in communities}
        outflow = {c.id: [0, 0] for c in communities}
        mode_counts = {c.id: np.zeros((2, len(modes))) for c in communities}
        dest_counts = {c.id: np.zeros((2, len(dests))) for c in communities}
        for t in trips:
            day = 1 if t.is_weekend else 0
            dst = attribute(t.dest_x_m, t.dest_y_m)
            if dst is not None:
                inflow[dst][day] += 1
            org = attribute(t.origin_x_m, t.origin_y_m)
            if org is not None:
                outflow[org][day] += 1
                mode_counts[org][day][modes.index(t.travel_mode)] += 1
                dest_counts[org][day][dests.index(t.destination_type)] += 1

        self.rows: dict[int, np.ndarray] = {}
        for c in communities:
            parts = [float(inflow[c.id][0]), float(inflow[c.id][1]),
                     float(outflow[c.id][0]), float(outflow[c.id][1])]
            for day in (0, 1):
                total = mode_counts[c.id][day].sum()
                dist = mode_counts[c.id][day] / total if total > 0 else np.zeros(len(modes))
                parts.extend(dist.tolist())
            for day in (0, 1):
                total = dest_counts[c.id][day].sum()
                dist = dest_counts[c.id][day] / total if total > 0 else np.zeros(len(dests))
                parts.extend(dist.tolist())
            self.rows[c.id] = np.array(parts)

    def features(self, community_id: int) -> np.ndarray:
        return self.rows[community_id]


def mobility_features(community: Community, trips, schema: dict,
                      communities: list[Community] | None = None) -> np.ndarray:
    table = MobilityTable(trips, communities if communities is not None else [community], schema)
    return table.features(community.id)


# ---------------------------------------------------------------------------
# Resident population profile

class PopulationTable:
    def __init__(self, users, communities: list[Community], schema: dict):
        attrs = schema["user_attributes"]
        self.dim = 1 + sum(len(v) for v in attrs.values())
        self.rows: dict[int, np.ndarray] = {}
        per_com: dict[int, list] = {c.id: [] for c in communities}
        for u in users:
            if u.community_id in per_com:
                per_com[u.community_id].append(u)
        for cid, members in per_com.items():
            parts = [float(len(members))]
            for attr, values in attrs.items():
                counts = np.zeros(len(values))
                for u in members:
                    counts[values.index(u.attributes[attr])] += 1
                dist = counts / len(members) if members else counts
                parts.extend(dist.tolist())
            self.rows[cid] = np.array(parts)

    def features(self, community_id: int) -> np.ndarray:
        return self.rows[community_id]


def population_features(community: Community, users, schema: dict) -> np.ndarray:
    return PopulationTable(users, [community], schema).features(community.id)


# ---------------------------------------------------------------------------
# Assembly

@dataclass
class FeatureContext:
    """Prebuilt indices shared by all per-event assemblies."""

    schema: dict
    layout: FeatureLayout
    geo: GeoIndex
    visits: VisitIndex
    mobility: MobilityTable
    population: PopulationTable
    history: PriceHistory
    radius_m: float = DEFAULT_RADIUS_M
    cap_m: float = DEFAULT_CAP_M


def build_feature_context(dataset: Dataset, layout: FeatureLayout | None = None,
                          radius_m: float = DEFAULT_RADIUS_M,
                          cap_m: float = DEFAULT_CAP_M) -> FeatureContext:
    schema = dataset.schema
    if layout is None:
        layout = build_layout(schema, dataset.n_districts)
    return FeatureContext(
        schema=schema,
        layout=layout,
        geo=GeoIndex(dataset.records.pois, dataset.records.stations, schema["geo_factors"]),
        visits=VisitIndex(dataset.records.checkins),
        mobility=MobilityTable(dataset.records.trips, dataset.communities, schema),
        population=PopulationTable(dataset.records.users, dataset.communities, schema),
        history=PriceHistory(dataset.events),
        radius_m=radius_m,
        cap_m=cap_m,
    )


def _onehot(values: list[str], value: str, field: str) -> list[float]:
    if value not in values:
        raise SchemaError(f"value '{value}' outside schema enumeration for '{field}'")
    return [1.0 if v == value else 0.0 for v in values]


def assemble_x(
    attrs: dict,
    community: Community,
    location: tuple[float, float],
    valuation_date: int,
    ctx: FeatureContext,
    n_districts: int | None = None,
) -> np.ndarray:
    """Raw (unnormalized) input vector for a subject at ``location`` valued on
    ``valuation_date``. Group order follows the layout."""
    schema = ctx.schema
    layout = ctx.layout
    present = set(layout.groups())
    parts: list[np.ndarray] = []

    if "profile" in present:
        vals: list[float] = []
        for name in schema["estate_numeric"]:
            if name not in attrs:
                raise SchemaError(f"missing estate attribute '{name}'")
            vals.append(float(attrs[name]))
        for name in schema["estate_binary"]:
            b = int(attrs[name])
            if b not in (0, 1):
                raise SchemaError(f"binary attribute '{name}' not 0/1")
            vals.append(float(b))
        for name, values in schema["estate_categorical"].items():
            vals.extend(_onehot(values, attrs[name], name))
        parts.append(np.array(vals))

    if "community_profile" in present:
        vals = [
            float(community.completion_year),
            float(community.building_count),
            float(community.estate_count),
            float(community.property_fee),
        ]
        vals.extend(_onehot(schema["developers"], community.developer, "developer"))
        m = n_districts if n_districts is not None else (
            len([s for s in layout.slots if s.group == "community_profile" and s.name.startswith("district=")])
        )
        district = [0.0] * m
        district[community.district_id] = 1.0
        vals.extend(district)
        parts.append(np.array(vals))

    if "temporal" in present:
        stats = historical_price_stats(community.id, valuation_date, ctx.history)
        dow = [0.0] * 7
        dow[valuation_date % 7] = 1.0
        parts.append(np.array(
            [float(valuation_date)] + dow
            + [stats.mean, stats.variance, stats.max, stats.min, float(stats.count),
               float(stats.missing_flag)]
        ))

    if "geographical" in present:
        parts.append(ctx.geo.features(location, ctx.radius_m, ctx.cap_m))
    if "visit" in present:
        parts.append(ctx.visits.features(location, ctx.radius_m))
    if "mobility" in present:
        parts.append(ctx.mobility.features(community.id))
    if "population" in present:
        parts.append(ctx.population.features(community.id))

    vec = np.concatenate(parts) if parts else np.zeros(0)
    if vec.shape[0] != len(layout):
        raise SchemaError(
            f"assembled vector length {vec.shape[0]} != layout length {len(layout)}"
        )
    return vec


def assemble_event_x(event: TransactionEvent, community: Community,
                     ctx: FeatureContext, n_districts: int | None = None) -> np.ndarray:
    return assemble_x(event.raw_attributes, community, event.location, event.date,
                      ctx, n_districts)


def community_similarity_vectors(ctx: FeatureContext, communities: list[Community]) -> dict[str, np.ndarray]:
    """f_g / f_v / f_m / f_p: the four urban feature groups evaluated at each
    community centroid, one matrix (n_communities x dim) per type."""
    rows_g, rows_v, rows_m, rows_p = [], [], [], []
    for c in communities:
        rows_g.append(ctx.geo.features(c.centroid, ctx.radius_m, ctx.cap_m))
        rows_v.append(ctx.visits.features(c.centroid, ctx.radius_m))
        rows_m.append(ctx.mobility.features(c.id))
        rows_p.append(ctx.population.features(c.id))
    return {
        "g": np.vstack(rows_g),
        "v": np.vstack(rows_v),
        "m": np.vstack(rows_m),
        "p": np.vstack(rows_p),
    }


# ---------------------------------------------------------------------------
# Normalization

STD_FLOOR = 1e-8


@dataclass
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray  # floored at STD_FLOOR; passthrough slots hold (0, 1)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(np.array(d["mean"]), np.array(d["std"]))


def fit_normalizer(train_vectors: np.ndarray, layout: FeatureLayout) -> NormalizationStats:
    if train_vectors.shape[0] == 0:
        raise ValueError("cannot fit a normalizer on an empty training set")
    mean = train_vectors.mean(axis=0)
    std = np.maximum(train_vectors.std(axis=0), STD_FLOOR)
    for i, slot in enumerate(layout.slots):
        if slot.kind == "passthrough":
            mean[i], std[i] = 0.0, 1.0
    return NormalizationStats(mean=mean, std=std)


def apply_normalizer(stats: NormalizationStats, vector: np.ndarray) -> np.ndarray:
    return (vector - stats.mean) / stats.std
