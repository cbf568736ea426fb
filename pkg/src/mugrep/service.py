"""Appraisal HTTP service: community search/detail and what-if valuation over
an immutable world snapshot (dataset + frozen graphs + checkpoint).

All error responses are structured JSON {code, message, field?}. The OpenAPI
description is served at /api/spec.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import features as ft
from .data import Dataset, load_dataset
from .model import ModelParameters, QueryContext, predict_one
from .schema import SchemaError
from .training import FeatureAblation, Prepared, _hetero_ball, prepare

SERVICE_VERSION = "1"


class AppraisalError(Exception):
    def __init__(self, status: int, code: str, message: str, field: str | None = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.field = field

    def body(self) -> dict:
        out = {"code": self.code, "message": self.message}
        if self.field is not None:
            out["field"] = self.field
        return out


@dataclass
class World:
    dataset: Dataset
    prepared: Prepared
    model: ModelParameters
    layout_hash: str
    checkpoint_version: str

    @property
    def max_date(self) -> int:
        return max(ev.date for ev in self.dataset.events) if self.dataset.events else 0


def load_world(dataset_dir: str | Path, checkpoint_path: str | Path) -> World:
    """Load dataset + checkpoint and rebuild the serving world; the feature
    layout is re-derived and must hash-match the checkpoint."""
    from .model import load_checkpoint

    model, meta = load_checkpoint(checkpoint_path)
    dataset = load_dataset(dataset_dir)
    hp = meta["hyperparams"]

    manifest = Path(dataset_dir) / "features.json"
    if manifest.exists():
        layout = ft.FeatureLayout.load(manifest)
        if layout.layout_hash() != meta["feature_layout_hash"]:
            raise ValueError(
                "feature layout manifest does not match the checkpoint's layout hash"
            )
        present = set(layout.groups())
    else:
        present = set(ft.GROUPS)
    dropped = frozenset(g for g in ft.GROUPS if g not in present)
    type_of = {v: k for k, v in ft.SIMILARITY_GROUPS.items()}
    fa = FeatureAblation(
        name="FromCheckpoint",
        dropped_groups=dropped,
        dropped_edge_types=frozenset(type_of[g] for g in dropped if g in type_of),
        disable_community=not model.ablation.use_community_module,
    )
    normalizer = ft.NormalizationStats(meta["norm_mean"], meta["norm_std"])
    prepared = prepare(dataset, hp, fa, normalizer=normalizer,
                       price_stats=(meta["price_mean"], meta["price_std"]))
    if prepared.layout.layout_hash() != meta["feature_layout_hash"]:
        raise ValueError("feature layout does not match the checkpoint's layout hash")
    return World(
        dataset=dataset, prepared=prepared, model=model,
        layout_hash=meta["feature_layout_hash"],
        checkpoint_version=str(meta["version"]),
    )


def _validate_attributes(schema: dict, attributes: dict) -> dict:
    attrs: dict = {}
    for name in schema["estate_numeric"]:
        if name not in attributes:
            raise AppraisalError(422, "missing_attribute", f"missing attribute '{name}'", name)
        try:
            attrs[name] = float(attributes[name])
        except (TypeError, ValueError):
            raise AppraisalError(422, "invalid_attribute", f"'{name}' must be numeric", name)
    if attrs.get("area", 0.0) <= 0.0:
        raise AppraisalError(422, "invalid_attribute", "area must be positive", "area")
    for name in schema["estate_binary"]:
        if name not in attributes:
            raise AppraisalError(422, "missing_attribute", f"missing attribute '{name}'", name)
        v = attributes[name]
        if v not in (0, 1, "0", "1", False, True):
            raise AppraisalError(422, "invalid_attribute", f"'{name}' must be 0 or 1", name)
        attrs[name] = int(v)
    for name, values in schema["estate_categorical"].items():
        if name not in attributes:
            raise AppraisalError(422, "missing_attribute", f"missing attribute '{name}'", name)
        if attributes[name] not in values:
            raise AppraisalError(
                422, "invalid_attribute",
                f"'{attributes[name]}' is not a valid value for '{name}'", name)
        attrs[name] = attributes[name]
    return attrs


def appraise(world: World, request: dict) -> dict:
    """Value a subject property; pure function of (checkpoint, history, request)."""
    prepared = world.prepared
    if not isinstance(request, dict):
        raise AppraisalError(422, "invalid_request", "request body must be a JSON object")
    if "community_id" not in request:
        raise AppraisalError(422, "missing_attribute", "missing community_id", "community_id")
    try:
        community_id = int(request["community_id"])
    except (TypeError, ValueError):
        raise AppraisalError(422, "invalid_attribute", "community_id must be an integer",
                             "community_id")
    com = prepared.dataset.community_by_id().get(community_id)
    if com is None:
        raise AppraisalError(404, "unknown_community", f"unknown community {community_id}")
    valuation_date = request.get("valuation_date")
    if valuation_date is None:
        valuation_date = world.max_date + 1
    try:
        valuation_date = int(valuation_date)
    except (TypeError, ValueError):
        raise AppraisalError(422, "invalid_attribute", "valuation_date must be an integer",
                             "valuation_date")
    attrs = _validate_attributes(prepared.dataset.schema, request.get("attributes", {}))

    fctx = prepared.feature_ctx
    try:
        x_raw = ft.assemble_x(attrs, com, com.centroid, valuation_date, fctx,
                              prepared.dataset.n_districts)
    except SchemaError as exc:
        raise AppraisalError(422, "invalid_attribute", str(exc))
    x = ft.apply_normalizer(prepared.normalizer, x_raw)

    hp = prepared.hp
    neighbors = prepared.graph.attach_virtual(com.centroid, valuation_date)
    nbr_preds: dict[int, list[int]] = {}
    frontier = list(neighbors)
    for _ in range(1, hp.l_e):
        nxt = []
        for node in frontier:
            if node not in nbr_preds:
                ps = prepared.graph.predecessors(node)
                nbr_preds[node] = ps
                nxt.extend(ps)
        frontier = nxt
    if world.model.ablation.use_community_module:
        closure, ball = _hetero_ball(prepared.hetero, community_id, hp.l_c)
        active_by_cid = {
            cid: tuple(prepared.intra.active_events(
                cid, valuation_date, hp.n_c, hp.eps_tau_days, before_date=valuation_date))
            for cid in sorted(ball)
        }
    else:
        closure, active_by_cid = {}, {}
    qc = QueryContext(
        x=x, community_id=community_id, district_id=com.district_id,
        neighbors=neighbors, nbr_preds=nbr_preds,
        hetero_closure=closure, active_by_cid=active_by_cid,
    )
    unit_price = predict_one(world.model, prepared.table, qc)
    stats = ft.historical_price_stats(community_id, valuation_date, fctx.history)
    return {
        "unit_price_estimate": unit_price,
        "total_price": unit_price * attrs["area"],
        "context": {
            "neighborhood_size": len(neighbors),
            "hist_missing": stats.missing_flag,
            "district_id": com.district_id,
            "checkpoint_version": world.checkpoint_version,
        },
    }


def community_summary(world: World, com) -> dict:
    return {
        "id": com.id,
        "name": com.name,
        "district_id": com.district_id,
        "centroid": {"x_m": com.x_m, "y_m": com.y_m},
        "profile": {
            "developer": com.developer,
            "completion_year": com.completion_year,
            "building_count": com.building_count,
            "estate_count": com.estate_count,
            "property_fee": com.property_fee,
        },
    }


def search_communities(world: World, q: str) -> list[dict]:
    needle = q.lower()
    scored = []
    for com in world.dataset.communities:
        pos = com.name.lower().find(needle)
        if pos >= 0:
            scored.append((pos, com.id, com))
    scored.sort(key=lambda t: (t[0], t[1]))
    return [community_summary(world, com) for _, _, com in scored[:20]]


def community_detail(world: World, community_id: int) -> dict:
    com = world.dataset.community_by_id().get(community_id)
    if com is None:
        raise AppraisalError(404, "unknown_community", f"unknown community {community_id}")
    date = world.max_date + 1
    stats = ft.historical_price_stats(community_id, date, world.prepared.feature_ctx.history)
    tx_count = sum(1 for ev in world.dataset.events if ev.community_id == community_id)
    out = community_summary(world, com)
    out["transaction_count"] = tx_count
    out["last_quarter_stats"] = {
        "mean": stats.mean, "variance": stats.variance, "max": stats.max,
        "min": stats.min, "count": stats.count, "missing": stats.missing_flag,
    }
    return out


def create_app(world: World | None = None, world_loader=None) -> FastAPI:
    """App factory. With ``world_loader`` the world is loaded on startup and
    requests arriving earlier get 503."""
    app = FastAPI(title="mugrep appraisal service", version=SERVICE_VERSION,
                  openapi_url="/api/spec", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"],
    )
    app.state.world = world
    if world_loader is not None:
        @app.on_event("startup")
        def _load():
            app.state.world = world_loader()

    # The UI renders its attribute form from the served description, so the
    # dataset's estate-attribute schema rides along as an OpenAPI extension.
    base_openapi = app.openapi

    def openapi_with_attributes():
        doc = base_openapi()
        w = app.state.world
        if w is not None:
            schema = w.dataset.schema
            attrs = {}
            for name in schema["estate_numeric"]:
                attrs[name] = {"type": "numeric"}
            for name in schema["estate_binary"]:
                attrs[name] = {"type": "binary"}
            for name, values in schema["estate_categorical"].items():
                attrs[name] = {"type": "categorical", "values": list(values)}
            doc["x-estate-attributes"] = attrs
        return doc

    app.openapi = openapi_with_attributes

    def err(status: int, code: str, message: str, field: str | None = None) -> JSONResponse:
        body = {"code": code, "message": message}
        if field is not None:
            body["field"] = field
        return JSONResponse(status_code=status, content=body)

    def need_world() -> World:
        w = app.state.world
        if w is None:
            raise AppraisalError(503, "loading", "model not loaded")
        return w

    @app.exception_handler(AppraisalError)
    async def _appraisal_error(_req: Request, exc: AppraisalError):
        return JSONResponse(status_code=exc.status, content=exc.body())

    @app.get("/api/health")
    def health():
        w = app.state.world
        if w is None:
            return err(503, "loading", "model not loaded")
        return {
            "status": "ready",
            "checkpoint_version": w.checkpoint_version,
            "n_communities": len(w.dataset.communities),
            "n_events": len(w.dataset.events),
        }

    @app.get("/api/communities")
    def communities(q: str | None = None):
        w = need_world()
        if not q:
            return err(400, "empty_query", "empty query")
        return search_communities(w, q)

    @app.get("/api/communities/{community_id}")
    def detail(community_id: int):
        w = need_world()
        return community_detail(w, community_id)

    @app.post("/api/appraise")
    async def appraise_endpoint(request: Request):
        w = need_world()
        try:
            body = json.loads(await request.body())
        except json.JSONDecodeError:
            return err(422, "invalid_request", "request body must be valid JSON")
        return appraise(w, body)

    return app


def serve(dataset_dir: str | Path, checkpoint_path: str | Path, addr: str) -> None:
    import uvicorn

    host, _, port = addr.rpartition(":")
    app = create_app(world_loader=lambda: load_world(dataset_dir, checkpoint_path))
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port))
