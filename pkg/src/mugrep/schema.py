"""Dataset schema: closed enumerations and column typing for the CSV file set.

Every categorical value that appears in a dataset must come from the
enumerations declared in the dataset's ``schema.json``; feature one-hot
blocks are laid out against these same lists, so the file is the single
source of truth for both ingestion validation and feature geometry.
"""

from __future__ import annotations

import json
from pathlib import Path

SCHEMA_VERSION = 1

# Estate profile attributes, in canonical column order.
ESTATE_NUMERIC = ["rooms", "area", "floor_number", "elevator_ratio"]
ESTATE_BINARY = ["free_of_tax"]
ESTATE_CATEGORICAL = {
    "decoration": ["none", "simple", "fine"],
    "orientation": ["east", "north", "south", "west"],
    "structure": ["flat", "jump", "duplex"],
    "heating": ["central", "self", "none"],
    "floor_type": ["basement", "low", "medium", "high"],
    "ownership": ["commercial", "affordable", "public"],
    "building_type": ["tower", "slab", "mixed"],
}
ESTATE_ATTRIBUTES = ESTATE_NUMERIC + ESTATE_BINARY + list(ESTATE_CATEGORICAL)

# Geographical facility factors. Transportation is fed by transport stations,
# the remaining factors by POI categories of the same name.
GEO_FACTORS = [
    "transportation",
    "education",
    "medical",
    "shopping",
    "living",
    "entertainment",
    "unpleasantness",
]
POI_CATEGORIES = [
    "education",
    "medical",
    "shopping",
    "living",
    "entertainment",
    "unpleasantness",
]
STATION_CATEGORIES = ["subway", "bus"]

TRAVEL_MODES = ["drive", "taxi", "bus", "cycle", "walk"]
DESTINATION_TYPES = ["enterprise", "administration", "shopping", "entertainment"]

# Resident profile attributes: every one categorical over a closed list.
USER_ATTRIBUTES = {
    "hometown": ["local", "north", "south", "east", "west", "abroad"],
    "gender": ["female", "male"],
    "age": ["teenager", "youth", "middle_aged", "old"],
    "life_stage": ["student", "working", "parent", "retired"],
    "industry": ["education", "catering", "it", "finance", "manufacturing", "other"],
    "car_owner": ["no", "yes"],
    "income": ["low", "medium", "high", "very_high"],
    "education": ["undergraduate", "college", "senior"],
    "consumption_level": ["low", "medium", "high"],
    "consumption_wish": [
        "daily_supplies",
        "education",
        "healthcare",
        "travel",
        "finance",
        "technology",
    ],
}

DEVELOPERS = [f"dev_{i:02d}" for i in range(10)]


class SchemaError(ValueError):
    """Raised when a dataset row carries a value outside the declared schema."""


def default_schema() -> dict:
    """The schema dictionary shipped with generated datasets."""
    return {
        "version": SCHEMA_VERSION,
        "estate_numeric": list(ESTATE_NUMERIC),
        "estate_binary": list(ESTATE_BINARY),
        "estate_categorical": {k: list(v) for k, v in ESTATE_CATEGORICAL.items()},
        "geo_factors": list(GEO_FACTORS),
        "poi_categories": list(POI_CATEGORIES),
        "station_categories": list(STATION_CATEGORIES),
        "travel_modes": list(TRAVEL_MODES),
        "destination_types": list(DESTINATION_TYPES),
        "user_attributes": {k: list(v) for k, v in USER_ATTRIBUTES.items()},
        "developers": list(DEVELOPERS),
    }


def write_schema(path: Path, schema: dict | None = None) -> None:
    schema = schema if schema is not None else default_schema()
    path.write_text(json.dumps(schema, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_schema(path: Path) -> dict:
    if not path.exists():
        raise FileNotFoundError(f"missing schema file: {path}")
    schema = json.loads(path.read_text(encoding="utf-8"))
    required = [
        "estate_numeric",
        "estate_binary",
        "estate_categorical",
        "poi_categories",
        "station_categories",
        "travel_modes",
        "destination_types",
        "user_attributes",
        "developers",
    ]
    for key in required:
        if key not in schema:
            raise SchemaError(f"schema missing section '{key}'")
    return schema


def estate_columns(schema: dict) -> list[str]:
    """Estate attribute column order used by transactions.csv."""
    return (
        list(schema["estate_numeric"])
        + list(schema["estate_binary"])
        + list(schema["estate_categorical"])
    )


def check_enum(schema_values: list[str], value: str, field: str, where: str) -> None:
    if value not in schema_values:
        raise SchemaError(f"{where}: value '{value}' not in schema enumeration for '{field}'")
