"""End-to-end pipeline: context preparation, the training loop with early
stopping, metric computation, the HA / LR / DNN baselines, the ablation
harness, and per-community error analysis."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import features as ft
from .autodiff import AdamState, Tape, adam_step
from .community_graph import (
    EDGE_TYPES,
    HeteroCommunityEdges,
    IntraCommunityIndex,
    build_hetero_edges,
    zscore_rows,
)
from .data import Dataset, DatasetSplit, TransactionEvent, split_chronological
from .event_graph import EventGraph, GraphHyperParams, build_event_graph
from .model import (
    AblationConfig,
    EventTable,
    ModelDims,
    ModelParameters,
    QueryContext,
    batch_loss,
)

DEFAULT_VALIDATION_DAYS = 30
DEFAULT_TEST_DAYS = 150


@dataclass
class TrainConfig:
    lr: float = 0.01
    patience_epochs: int = 30
    max_epochs: int = 8
    batch_size: int = 64
    seed: int = 0
    validation_days: int = DEFAULT_VALIDATION_DAYS
    test_days: int = DEFAULT_TEST_DAYS
    ablation: AblationConfig = field(default_factory=AblationConfig)
    dims: ModelDims = field(default_factory=ModelDims)

    def validate(self) -> None:
        if self.patience_epochs < 1:
            raise ValueError("patience must be >= 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        cfg = cls()
        for k, v in d.items():
            if k == "ablation":
                cfg.ablation = AblationConfig.from_dict(v)
            elif k == "dims":
                cfg.dims = ModelDims.from_dict(v)
            elif hasattr(cfg, k):
                setattr(cfg, k, type(getattr(cfg, k))(v))
            else:
                raise ValueError(f"unknown training option '{k}'")
        cfg.validate()
        return cfg


@dataclass(frozen=True)
class FeatureAblation:
    """A feature-group ablation: dropping a group also drops its edge set."""

    name: str = "Complete"
    dropped_groups: frozenset = frozenset()
    dropped_edge_types: frozenset = frozenset()
    disable_community: bool = False


FEATURE_VARIANTS = {
    "Complete": FeatureAblation(),
    "Basic": FeatureAblation(
        "Basic",
        frozenset({"geographical", "visit", "mobility", "population"}),
        frozenset(EDGE_TYPES),
        disable_community=True,
    ),
    "noGeo": FeatureAblation("noGeo", frozenset({"geographical"}), frozenset({"g"})),
    "noVis": FeatureAblation("noVis", frozenset({"visit"}), frozenset({"v"})),
    "noMob": FeatureAblation("noMob", frozenset({"mobility"}), frozenset({"m"})),
    "noPop": FeatureAblation("noPop", frozenset({"population"}), frozenset({"p"})),
}


@dataclass
class Prepared:
    """Frozen world state shared by training, evaluation and serving."""

    dataset: Dataset
    split: DatasetSplit
    hp: GraphHyperParams
    layout: ft.FeatureLayout
    feature_ctx: ft.FeatureContext
    normalizer: ft.NormalizationStats
    table: EventTable
    graph: EventGraph
    intra: IntraCommunityIndex
    hetero: HeteroCommunityEdges
    contexts: dict[int, QueryContext]
    districts: np.ndarray
    dates: np.ndarray
    feature_ablation: FeatureAblation

    def queries(self, ids: list[int]) -> list[QueryContext]:
        return [self.contexts[i] for i in ids]


def _hetero_ball(hetero: HeteroCommunityEdges, cid: int, radius: int):
    """Closure of hetero neighbors within ``radius`` hops of ``cid``."""
    closure: dict[int, list] = {}
    seen = {cid}
    frontier = [cid]
    for _ in range(radius):
        nxt = []
        for c in frontier:
            entries = hetero.hetero_neighbors(c)
            closure[c] = entries
            for nbr, _p in entries:
                if nbr not in seen:
                    seen.add(nbr)
                    nxt.append(nbr)
        frontier = nxt
    return closure, seen


def prepare(dataset: Dataset, hp: GraphHyperParams | None = None,
            feature_ablation: FeatureAblation | None = None,
            validation_days: int = DEFAULT_VALIDATION_DAYS,
            test_days: int = DEFAULT_TEST_DAYS,
            normalizer: ft.NormalizationStats | None = None,
            split: DatasetSplit | None = None,
            price_stats: tuple[float, float] | None = None) -> Prepared:
    """Build features, graphs and per-event query contexts.

    When ``normalizer`` is given (evaluation/serving against a checkpoint) it
    is used as-is; otherwise statistics are fit on the training split.
    """
    hp = hp or GraphHyperParams()
    hp.validate()
    fa = feature_ablation or FEATURE_VARIANTS["Complete"]
    if split is None:
        split = split_chronological(dataset.events, validation_days, test_days)

    layout = ft.build_layout(dataset.schema, dataset.n_districts, fa.dropped_groups)
    fctx = ft.build_feature_context(dataset, layout)
    com_by_id = dataset.community_by_id()

    n = len(dataset.events)
    x_raw = np.zeros((n, len(layout)))
    districts = np.zeros(n, dtype=np.int64)
    dates = np.zeros(n, dtype=np.int64)
    communities = np.zeros(n, dtype=np.int64)
    prices = np.zeros(n)
    for ev in dataset.events:
        com = com_by_id[ev.community_id]
        x_raw[ev.id] = ft.assemble_event_x(ev, com, fctx, dataset.n_districts)
        districts[ev.id] = com.district_id
        dates[ev.id] = ev.date
        communities[ev.id] = ev.community_id
        prices[ev.id] = ev.y

    if normalizer is None:
        normalizer = ft.fit_normalizer(x_raw[split.train], layout)
    if price_stats is None:
        train_prices = prices[split.train]
        price_stats = (float(train_prices.mean()),
                       max(float(train_prices.std()), 1e-8))
    x_norm = ft.apply_normalizer(normalizer, x_raw)
    table = EventTable(x_norm, communities, prices,
                       price_mean=price_stats[0], price_std=price_stats[1])

    graph = build_event_graph(dataset.events, hp)
    intra = IntraCommunityIndex(dataset.events)

    sim = ft.community_similarity_vectors(fctx, dataset.communities)
    keep = frozenset(EDGE_TYPES) - fa.dropped_edge_types
    community_ids = [c.id for c in dataset.communities]
    if fa.disable_community or not keep:
        hetero = HeteroCommunityEdges(community_ids, {}, {})
    else:
        hetero = build_hetero_edges(
            {t: zscore_rows(sim[t]) for t in keep},
            community_ids, hp.sim_quantile, keep_types=keep,
        )

    use_community = not fa.disable_community
    active_cache: dict[tuple[int, int], tuple[int, ...]] = {}

    def active(cid: int, date: int) -> tuple[int, ...]:
        key = (cid, date)
        got = active_cache.get(key)
        if got is None:
            got = tuple(intra.active_events(cid, date, hp.n_c, hp.eps_tau_days,
                                            before_date=date))
            active_cache[key] = got
        return got

    contexts: dict[int, QueryContext] = {}
    for ev in dataset.events:
        neighbors = graph.predecessors(ev.id)
        nbr_preds: dict[int, list[int]] = {}
        frontier = list(neighbors)
        for _depth in range(1, hp.l_e):
            nxt = []
            for node in frontier:
                if node not in nbr_preds:
                    ps = graph.predecessors(node)
                    nbr_preds[node] = ps
                    nxt.extend(ps)
            frontier = nxt
        if use_community:
            closure, ball = _hetero_ball(hetero, ev.community_id, hp.l_c)
            active_by_cid = {cid: active(cid, ev.date) for cid in sorted(ball)}
        else:
            closure, active_by_cid = {}, {}
        contexts[ev.id] = QueryContext(
            x=x_norm[ev.id],
            community_id=ev.community_id,
            district_id=int(districts[ev.id]),
            neighbors=neighbors,
            nbr_preds=nbr_preds,
            hetero_closure=closure,
            active_by_cid=active_by_cid,
            y_true=float(prices[ev.id]),
        )

    return Prepared(
        dataset=dataset, split=split, hp=hp, layout=layout, feature_ctx=fctx,
        normalizer=normalizer, table=table, graph=graph, intra=intra, hetero=hetero,
        contexts=contexts, districts=districts, dates=dates, feature_ablation=fa,
    )


# ---------------------------------------------------------------------------
# Training loop

@dataclass
class TrainResult:
    model: ModelParameters
    log: list[tuple[int, float, float]]  # (epoch, train_loss, val_loss)
    best_epoch: int
    best_val_loss: float
    initial_train_loss: float
    final_train_loss: float


class EarlyStopper:
    """Stop after ``patience`` consecutive epochs without a strictly better
    validation loss; remembers which epoch was best."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, val_loss: float) -> tuple[bool, bool]:
        """Returns (improved, should_stop)."""
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = epoch
            self.bad_epochs = 0
            return True, False
        self.bad_epochs += 1
        return False, self.bad_epochs >= self.patience


def _forward_mse(model: ModelParameters, prepared: Prepared, ids: list[int],
                 chunk: int = 256) -> float:
    total = 0.0
    for lo in range(0, len(ids), chunk):
        batch = prepared.queries(ids[lo:lo + chunk])
        loss, _ = batch_loss(Tape(), model, prepared.table, batch)
        total += loss.item() * len(batch)
    return total / len(ids)


def predict_events(model: ModelParameters, prepared: Prepared, ids: list[int],
                   chunk: int = 256) -> np.ndarray:
    out = np.zeros(len(ids))
    for lo in range(0, len(ids), chunk):
        batch = prepared.queries(ids[lo:lo + chunk])
        fw_tape = Tape()
        from .model import Forward

        fw = Forward(fw_tape, model, prepared.table)
        for j, qc in enumerate(batch):
            out[lo + j] = fw.predict(qc).item()
    return out


def train(prepared: Prepared, config: TrainConfig) -> TrainResult:
    """Minibatch training with Adam and early stopping on validation MSE;
    returns the parameters from the best-validation epoch."""
    config.validate()
    if prepared.feature_ablation.disable_community and config.ablation.use_community_module:
        config = replace(config, ablation=replace(config.ablation, use_community_module=False))
    rng = np.random.default_rng(config.seed)
    model = ModelParameters.init(
        rng, len(prepared.layout), len(prepared.dataset.communities),
        prepared.dataset.n_districts, config.ablation, config.dims,
        prepared.hp.l_e, prepared.hp.l_c,
    )
    adam = AdamState(lr=config.lr)
    train_ids = list(prepared.split.train)
    val_ids = list(prepared.split.validation)

    initial_train_loss = _forward_mse(model, prepared, train_ids)

    stopper = EarlyStopper(config.patience_epochs)
    best_snap = model.snapshot()
    log: list[tuple[int, float, float]] = []

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train_ids))
        loss_sum = 0.0
        for lo in range(0, len(order), config.batch_size):
            ids = [train_ids[i] for i in order[lo:lo + config.batch_size]]
            batch = prepared.queries(ids)
            tape = Tape()
            model.zero_grads()
            loss, _ = batch_loss(tape, model, prepared.table, batch)
            val = loss.item()
            if not math.isfinite(val):
                raise RuntimeError(
                    "NaN/Inf training loss: learning rate too high or bad initialization"
                )
            tape.backward(loss)
            adam_step(adam, model.params)
            loss_sum += val * len(batch)
        train_loss = loss_sum / len(train_ids)
        val_loss = _forward_mse(model, prepared, val_ids)
        if not math.isfinite(val_loss):
            raise RuntimeError("NaN/Inf validation loss")
        log.append((epoch, train_loss, val_loss))
        improved, should_stop = stopper.update(epoch, val_loss)
        if improved:
            best_snap = model.snapshot()
        if should_stop:
            break

    model.restore(best_snap)
    final_train_loss = _forward_mse(model, prepared, train_ids)
    return TrainResult(
        model=model, log=log, best_epoch=stopper.best_epoch,
        best_val_loss=stopper.best, initial_train_loss=initial_train_loss,
        final_train_loss=final_train_loss,
    )


# ---------------------------------------------------------------------------
# Metrics

@dataclass
class MetricsReport:
    mae: float
    mape: float  # fraction, not percent
    rmse: float
    per_community_mape: dict[int, float]
    n_evaluated: int

    def to_dict(self) -> dict:
        return {
            "mae": self.mae, "mape": self.mape, "rmse": self.rmse,
            "n_evaluated": self.n_evaluated,
            "per_community_mape": {str(k): v for k, v in sorted(self.per_community_mape.items())},
        }


def compute_metrics(y_true: np.ndarray, y_pred: np.ndarray,
                    community_ids: np.ndarray | None = None) -> MetricsReport:
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if np.any(y_true <= 0):
        raise ValueError("MAPE undefined: non-positive ground-truth price")
    err = y_pred - y_true
    mae = float(np.mean(np.abs(err)))
    mape = float(np.mean(np.abs(err) / y_true))
    rmse = float(math.sqrt(np.mean(err * err)))
    per_com: dict[int, float] = {}
    if community_ids is not None:
        for cid in np.unique(community_ids):
            mask = community_ids == cid
            per_com[int(cid)] = float(np.mean(np.abs(err[mask]) / y_true[mask]))
    return MetricsReport(mae=mae, mape=mape, rmse=rmse, per_community_mape=per_com,
                         n_evaluated=int(y_true.size))


def evaluate(model: ModelParameters, prepared: Prepared, ids: list[int]) -> MetricsReport:
    preds = predict_events(model, prepared, ids)
    y = np.array([prepared.contexts[i].y_true for i in ids])
    coms = np.array([prepared.contexts[i].community_id for i in ids])
    return compute_metrics(y, preds, coms)


# ---------------------------------------------------------------------------
# Baselines

def baseline_ha(events: list[TransactionEvent], target_ids: list[int],
                window_days: int = 90) -> np.ndarray:
    """Mean same-community price over the prior ``window_days``; falls back to
    the community running mean, then the global running mean."""
    history = ft.PriceHistory(events)
    by_id = {ev.id: ev for ev in events}
    ordered = sorted(events, key=lambda e: (e.date, e.id))
    glob_sum, glob_n = 0.0, 0
    # Running means keyed by event id: totals over strictly earlier dates.
    com_acc: dict[int, tuple[float, int]] = {}
    prefix: dict[int, tuple[float, int, float, int]] = {}
    i = 0
    n = len(ordered)
    while i < n:
        j = i
        day = ordered[i].date
        while j < n and ordered[j].date == day:
            j += 1
        for k in range(i, j):
            ev = ordered[k]
            c_tot, c_cnt = com_acc.get(ev.community_id, (0.0, 0))
            prefix[ev.id] = (c_tot, c_cnt, glob_sum, glob_n)
        for k in range(i, j):
            ev = ordered[k]
            c_tot, c_cnt = com_acc.get(ev.community_id, (0.0, 0))
            com_acc[ev.community_id] = (c_tot + ev.y, c_cnt + 1)
            glob_sum += ev.y
            glob_n += 1
        i = j
    out = np.zeros(len(target_ids))
    for idx, tid in enumerate(target_ids):
        ev = by_id[tid]
        window = history.window_prices(ev.community_id, ev.date - window_days, ev.date)
        if window:
            out[idx] = float(np.mean(window))
            continue
        c_tot, c_cnt, g_tot, g_cnt = prefix[tid]
        if c_cnt > 0:
            out[idx] = c_tot / c_cnt
        elif g_cnt > 0:
            out[idx] = g_tot / g_cnt
        else:
            out[idx] = 0.0
    return out


def baseline_lr(x_train: np.ndarray, y_train: np.ndarray, x_test: np.ndarray,
                ridge: float = 1e-6) -> np.ndarray:
    """Least squares with a tiny ridge for conditioning, intercept included."""
    a = np.hstack([x_train, np.ones((x_train.shape[0], 1))])
    gram = a.T @ a + ridge * np.eye(a.shape[1])
    beta = np.linalg.solve(gram, a.T @ y_train)
    return np.hstack([x_test, np.ones((x_test.shape[0], 1))]) @ beta


def baseline_dnn(prepared: Prepared, config: TrainConfig) -> TrainResult:
    """Plain feed-forward baseline: the network under full ablation with a
    single shared head, trained at lr 0.005."""
    cfg = replace(config, lr=0.005, ablation=AblationConfig(False, False, False))
    return train(prepared, cfg)


# ---------------------------------------------------------------------------
# Ablation harness

MODEL_VARIANTS = ["full", "noEvt", "noCom", "noMT"]


def run_ablation_suite(dataset: Dataset, base_config: TrainConfig,
                       hp: GraphHyperParams | None = None,
                       variants: list[str] | None = None,
                       seeds: list[int] | None = None) -> list[dict]:
    """Train and test every requested variant x seed; model variants share one
    prepared world, feature variants re-derive layouts and edge sets."""
    from .model import ABLATION_VARIANTS

    hp = hp or GraphHyperParams()
    variants = variants or (MODEL_VARIANTS + list(FEATURE_VARIANTS))
    seeds = seeds or [base_config.seed]
    rows: list[dict] = []
    prepared_cache: dict[str, Prepared] = {}

    def prepared_for(fa: FeatureAblation) -> Prepared:
        if fa.name not in prepared_cache:
            prepared_cache[fa.name] = prepare(
                dataset, hp, fa,
                validation_days=base_config.validation_days,
                test_days=base_config.test_days,
            )
        return prepared_cache[fa.name]

    for variant in variants:
        if variant in ABLATION_VARIANTS:
            fa = FEATURE_VARIANTS["Complete"]
            ablation = ABLATION_VARIANTS[variant]
        elif variant in FEATURE_VARIANTS:
            fa = FEATURE_VARIANTS[variant]
            ablation = AblationConfig(
                use_community_module=not fa.disable_community
            )
        else:
            raise ValueError(f"unknown ablation variant '{variant}'")
        prepared = prepared_for(fa)
        for seed in seeds:
            cfg = replace(base_config, seed=seed, ablation=ablation)
            result = train(prepared, cfg)
            report = evaluate(result.model, prepared, prepared.split.test)
            rows.append({
                "variant": variant, "seed": seed,
                "mae": report.mae, "mape": report.mape, "rmse": report.rmse,
                "best_epoch": result.best_epoch,
            })
    return rows


# ---------------------------------------------------------------------------
# Analysis and artifact writers

def community_volume_analysis(prepared: Prepared, report: MetricsReport) -> list[dict]:
    """Per-community test MAPE joined with train transaction volume and its
    inverse (1 / (1 + volume), defined for empty communities)."""
    train_counts: dict[int, int] = {}
    for i in prepared.split.train:
        cid = prepared.contexts[i].community_id
        train_counts[cid] = train_counts.get(cid, 0) + 1
    rows = []
    for cid in sorted(report.per_community_mape):
        vol = train_counts.get(cid, 0)
        rows.append({
            "community_id": cid,
            "test_mape": report.per_community_mape[cid],
            "train_volume": vol,
            "inverse_train_volume": 1.0 / (1.0 + vol),
        })
    return rows


def mape_volume_spearman(rows: list[dict]) -> float:
    from scipy.stats import spearmanr

    mapes = [r["test_mape"] for r in rows]
    inv = [r["inverse_train_volume"] for r in rows]
    rho = spearmanr(mapes, inv).statistic
    return float(rho)


def write_metrics_json(path: str | Path, report: MetricsReport, extra: dict | None = None) -> None:
    doc = report.to_dict()
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_train_log(path: str | Path, log: list[tuple[int, float, float]]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, tr, vl in log:
            writer.writerow([epoch, repr(tr), repr(vl)])


def write_ablation_table(path: str | Path, rows: list[dict]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "seed", "mae", "mape", "rmse", "best_epoch"])
        for r in rows:
            writer.writerow([r["variant"], r["seed"], repr(r["mae"]), repr(r["mape"]),
                             repr(r["rmse"]), r["best_epoch"]])


def write_community_mape(path: str | Path, rows: list[dict]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["community_id", "test_mape", "train_volume", "inverse_train_volume"])
        for r in rows:
            writer.writerow([r["community_id"], repr(r["test_mape"]), r["train_volume"],
                             repr(r["inverse_train_volume"])])
