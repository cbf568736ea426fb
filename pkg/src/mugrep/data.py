"""Domain types, CSV ingestion, and the chronological train/validation/test split.

Coordinates are planar meters throughout. Loading re-sorts transactions by
(date, ingestion order) and assigns ids 0..n-1; everything downstream relies
on that ordering. Loaded structures are treated as immutable.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .schema import SchemaError, check_enum, estate_columns, load_schema

DATASET_FILES = [
    "transactions.csv",
    "communities.csv",
    "pois.csv",
    "checkins.csv",
    "trips.csv",
    "users.csv",
]


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class TransactionEvent:
    """One closed sale. ``y`` is the unit price (10,000 CNY per square meter);
    it is None only for subject properties that have not transacted yet."""

    id: int
    x_m: float
    y_m: float
    date: int
    community_id: int
    raw_attributes: dict
    y: float | None = None

    @property
    def location(self) -> tuple[float, float]:
        return (self.x_m, self.y_m)


@dataclass(frozen=True)
class Community:
    id: int
    name: str
    x_m: float
    y_m: float
    district_id: int
    developer: str
    completion_year: int
    building_count: int
    estate_count: int
    property_fee: float

    @property
    def centroid(self) -> tuple[float, float]:
        return (self.x_m, self.y_m)


@dataclass(frozen=True)
class Poi:
    x_m: float
    y_m: float
    category: str


@dataclass(frozen=True)
class Checkin:
    user_id: int
    x_m: float
    y_m: float
    timestamp_min: int


@dataclass(frozen=True)
class Trip:
    origin_x_m: float
    origin_y_m: float
    dest_x_m: float
    dest_y_m: float
    travel_mode: str
    destination_type: str
    is_weekend: bool


@dataclass(frozen=True)
class UserProfile:
    community_id: int
    attributes: dict  # attribute name -> categorical value


@dataclass
class UrbanRecords:
    pois: list[Poi] = field(default_factory=list)
    stations: list[Poi] = field(default_factory=list)
    checkins: list[Checkin] = field(default_factory=list)
    trips: list[Trip] = field(default_factory=list)
    users: list[UserProfile] = field(default_factory=list)


@dataclass(frozen=True)
class DatasetSplit:
    train: list[int]
    validation: list[int]
    test: list[int]


@dataclass
class Dataset:
    events: list[TransactionEvent]
    communities: list[Community]
    records: UrbanRecords
    schema: dict

    def community_by_id(self) -> dict[int, Community]:
        return {c.id: c for c in self.communities}

    @property
    def n_districts(self) -> int:
        return max(c.district_id for c in self.communities) + 1


def _parse_row(row: dict, line_no: int, path: str, casts: dict) -> dict:
    out = {}
    for col, cast in casts.items():
        if col not in row or row[col] is None:
            raise DatasetError(f"{path}:{line_no}: missing column '{col}'")
        try:
            out[col] = cast(row[col])
        except (TypeError, ValueError) as exc:
            raise DatasetError(f"{path}:{line_no}: malformed value for '{col}': {row[col]!r}") from exc
    return out


def _read_rows(path: Path):
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for line_no, row in enumerate(reader, start=2):
            yield line_no, row


def lonlat_to_meters(
    lon: float, lat: float, origin_lon: float, origin_lat: float
) -> tuple[float, float]:
    """Local equirectangular projection around a dataset-centroid origin."""
    earth_r = 6_371_000.0
    x = math.radians(lon - origin_lon) * earth_r * math.cos(math.radians(origin_lat))
    y = math.radians(lat - origin_lat) * earth_r
    return (x, y)


def load_dataset(dir_path: str | Path, project_lonlat: bool = False) -> Dataset:
    """Load the full CSV file set from ``dir_path``.

    Transactions are sorted by (date, ingestion order) and given ids 0..n-1.
    With ``project_lonlat`` the coordinate columns are interpreted as lon/lat
    degrees and projected to planar meters around the community centroid mean.
    """
    dir_path = Path(dir_path)
    for name in DATASET_FILES + ["schema.json"]:
        if not (dir_path / name).exists():
            raise DatasetError(f"missing dataset file: {dir_path / name}")
    schema = load_schema(dir_path / "schema.json")
    est_cols = estate_columns(schema)

    communities: list[Community] = []
    path = dir_path / "communities.csv"
    for line_no, row in _read_rows(path):
        vals = _parse_row(
            row,
            line_no,
            path.name,
            {
                "id": int,
                "name": str,
                "x_m": float,
                "y_m": float,
                "district_id": int,
                "developer": str,
                "completion_year": int,
                "building_count": int,
                "estate_count": int,
                "property_fee": float,
            },
        )
        check_enum(schema["developers"], vals["developer"], "developer", f"{path.name}:{line_no}")
        communities.append(Community(**vals))
    community_ids = {c.id for c in communities}

    raw_events = []
    path = dir_path / "transactions.csv"
    for line_no, row in _read_rows(path):
        casts = {"date": int, "x_m": float, "y_m": float, "community_id": int, "price": float}
        vals = _parse_row(row, line_no, path.name, casts)
        attrs = {}
        for col in est_cols:
            if col not in row:
                raise DatasetError(f"{path.name}:{line_no}: missing column '{col}'")
            if col in schema["estate_numeric"]:
                attrs[col] = float(row[col])
            elif col in schema["estate_binary"]:
                attrs[col] = int(row[col])
                if attrs[col] not in (0, 1):
                    raise DatasetError(f"{path.name}:{line_no}: binary column '{col}' not 0/1")
            else:
                check_enum(schema["estate_categorical"][col], row[col], col, f"{path.name}:{line_no}")
                attrs[col] = row[col]
        if vals["community_id"] not in community_ids:
            raise DatasetError(
                f"{path.name}:{line_no}: unresolved community {vals['community_id']}"
            )
        if vals["price"] <= 0:
            raise DatasetError(f"{path.name}:{line_no}: non-positive price {vals['price']}")
        raw_events.append((vals, attrs))

    pois: list[Poi] = []
    stations: list[Poi] = []
    path = dir_path / "pois.csv"
    for line_no, row in _read_rows(path):
        vals = _parse_row(row, line_no, path.name, {"x_m": float, "y_m": float, "kind": str, "category": str})
        if vals["kind"] == "poi":
            check_enum(schema["poi_categories"], vals["category"], "category", f"{path.name}:{line_no}")
            pois.append(Poi(vals["x_m"], vals["y_m"], vals["category"]))
        elif vals["kind"] == "station":
            check_enum(schema["station_categories"], vals["category"], "category", f"{path.name}:{line_no}")
            stations.append(Poi(vals["x_m"], vals["y_m"], vals["category"]))
        else:
            raise SchemaError(f"{path.name}:{line_no}: kind must be poi or station, got '{vals['kind']}'")

    checkins: list[Checkin] = []
    path = dir_path / "checkins.csv"
    for line_no, row in _read_rows(path):
        vals = _parse_row(row, line_no, path.name, {"user_id": int, "x_m": float, "y_m": float, "timestamp_min": int})
        checkins.append(Checkin(**vals))

    trips: list[Trip] = []
    path = dir_path / "trips.csv"
    for line_no, row in _read_rows(path):
        vals = _parse_row(
            row,
            line_no,
            path.name,
            {
                "origin_x_m": float,
                "origin_y_m": float,
                "dest_x_m": float,
                "dest_y_m": float,
                "travel_mode": str,
                "destination_type": str,
                "is_weekend": int,
            },
        )
        check_enum(schema["travel_modes"], vals["travel_mode"], "travel_mode", f"{path.name}:{line_no}")
        check_enum(
            schema["destination_types"], vals["destination_type"], "destination_type", f"{path.name}:{line_no}"
        )
        vals["is_weekend"] = bool(vals["is_weekend"])
        trips.append(Trip(**vals))

    users: list[UserProfile] = []
    path = dir_path / "users.csv"
    user_attr_names = list(schema["user_attributes"])
    for line_no, row in _read_rows(path):
        vals = _parse_row(row, line_no, path.name, {"community_id": int})
        if vals["community_id"] not in community_ids:
            raise DatasetError(f"{path.name}:{line_no}: unresolved community {vals['community_id']}")
        attrs = {}
        for name in user_attr_names:
            if name not in row:
                raise DatasetError(f"{path.name}:{line_no}: missing column '{name}'")
            check_enum(schema["user_attributes"][name], row[name], name, f"{path.name}:{line_no}")
            attrs[name] = row[name]
        users.append(UserProfile(vals["community_id"], attrs))

    if project_lonlat:
        if not communities:
            raise DatasetError("cannot project an empty community set")
        origin_lon = sum(c.x_m for c in communities) / len(communities)
        origin_lat = sum(c.y_m for c in communities) / len(communities)

        def proj(lon, lat):
            return lonlat_to_meters(lon, lat, origin_lon, origin_lat)

        communities = [
            Community(c.id, c.name, *proj(c.x_m, c.y_m), c.district_id, c.developer,
                      c.completion_year, c.building_count, c.estate_count, c.property_fee)
            for c in communities
        ]
        raw_events = [({**v, "x_m": proj(v["x_m"], v["y_m"])[0], "y_m": proj(v["x_m"], v["y_m"])[1]}, a)
                      for v, a in raw_events]
        pois = [Poi(*proj(p.x_m, p.y_m), p.category) for p in pois]
        stations = [Poi(*proj(p.x_m, p.y_m), p.category) for p in stations]
        checkins = [Checkin(c.user_id, *proj(c.x_m, c.y_m), c.timestamp_min) for c in checkins]
        trips = [
            Trip(*proj(t.origin_x_m, t.origin_y_m), *proj(t.dest_x_m, t.dest_y_m),
                 t.travel_mode, t.destination_type, t.is_weekend)
            for t in trips
        ]

    # Chronological ids: sort by date, ties broken by ingestion order.
    order = sorted(range(len(raw_events)), key=lambda i: (raw_events[i][0]["date"], i))
    events = [
        TransactionEvent(
            id=new_id,
            x_m=raw_events[i][0]["x_m"],
            y_m=raw_events[i][0]["y_m"],
            date=raw_events[i][0]["date"],
            community_id=raw_events[i][0]["community_id"],
            raw_attributes=raw_events[i][1],
            y=raw_events[i][0]["price"],
        )
        for new_id, i in enumerate(order)
    ]

    records = UrbanRecords(pois=pois, stations=stations, checkins=checkins, trips=trips, users=users)
    return Dataset(events=events, communities=communities, records=records, schema=schema)


def write_dataset(dir_path: str | Path, dataset: Dataset) -> None:
    """Write the CSV file set (plus schema.json). Inverse of load_dataset."""
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    est_cols = estate_columns(dataset.schema)

    with (dir_path / "transactions.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "x_m", "y_m", "community_id", "price"] + est_cols)
        for ev in dataset.events:
            writer.writerow(
                [ev.date, repr(ev.x_m), repr(ev.y_m), ev.community_id, repr(ev.y)]
                + [ev.raw_attributes[c] if not isinstance(ev.raw_attributes[c], float)
                   else repr(ev.raw_attributes[c]) for c in est_cols]
            )

    with (dir_path / "communities.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["id", "name", "x_m", "y_m", "district_id", "developer",
             "completion_year", "building_count", "estate_count", "property_fee"]
        )
        for c in dataset.communities:
            writer.writerow(
                [c.id, c.name, repr(c.x_m), repr(c.y_m), c.district_id, c.developer,
                 c.completion_year, c.building_count, c.estate_count, repr(c.property_fee)]
            )

    with (dir_path / "pois.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x_m", "y_m", "kind", "category"])
        for p in dataset.records.pois:
            writer.writerow([repr(p.x_m), repr(p.y_m), "poi", p.category])
        for p in dataset.records.stations:
            writer.writerow([repr(p.x_m), repr(p.y_m), "station", p.category])

    with (dir_path / "checkins.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "x_m", "y_m", "timestamp_min"])
        for c in dataset.records.checkins:
            writer.writerow([c.user_id, repr(c.x_m), repr(c.y_m), c.timestamp_min])

    with (dir_path / "trips.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["origin_x_m", "origin_y_m", "dest_x_m", "dest_y_m",
             "travel_mode", "destination_type", "is_weekend"]
        )
        for t in dataset.records.trips:
            writer.writerow(
                [repr(t.origin_x_m), repr(t.origin_y_m), repr(t.dest_x_m), repr(t.dest_y_m),
                 t.travel_mode, t.destination_type, int(t.is_weekend)]
            )

    with (dir_path / "users.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        attr_names = list(dataset.schema["user_attributes"])
        writer.writerow(["community_id"] + attr_names)
        for u in dataset.records.users:
            writer.writerow([u.community_id] + [u.attributes[a] for a in attr_names])

    (dir_path / "schema.json").write_text(
        json.dumps(dataset.schema, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def split_chronological(
    events: list[TransactionEvent], validation_days: int, test_days: int
) -> DatasetSplit:
    """Date-range split: the last ``test_days`` of the range are test, the
    ``validation_days`` before them validation, everything earlier train."""
    if validation_days <= 0 or test_days <= 0:
        raise DatasetError("validation_days and test_days must be positive")
    if not events:
        raise DatasetError("degenerate split: no events")
    max_date = max(ev.date for ev in events)
    test_start = max_date - test_days + 1
    val_start = test_start - validation_days
    train = [ev.id for ev in events if ev.date < val_start]
    validation = [ev.id for ev in events if val_start <= ev.date < test_start]
    test = [ev.id for ev in events if ev.date >= test_start]
    if not train or not validation or not test:
        raise DatasetError("degenerate split: a partition is empty")
    return DatasetSplit(train=train, validation=validation, test=test)
