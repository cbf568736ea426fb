"""The appraisal network.

Event-level attention convolution over the evolving transaction graph,
dynamic intra-community representation, heterogeneous inter-community
convolution, a fusion MLP, and one output head per urban district. Every
attention block scores candidates with v' tanh(W [ ... ]), normalizes the
scores over the neighbor list, and aggregates with the resulting weights.
Empty neighborhoods contribute zero vectors, so sparse regions degrade
gracefully.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .event_graph import GraphHyperParams

CHECKPOINT_VERSION = 1


@dataclass
class ModelDims:
    hidden: int = 32         # event / intra / inter representation width
    attn: int = 32           # attention projection width
    fusion_hidden: int = 64
    embed: int = 8           # community-id embedding width

    def to_dict(self) -> dict:
        return {"hidden": self.hidden, "attn": self.attn,
                "fusion_hidden": self.fusion_hidden, "embed": self.embed}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelDims":
        return cls(**d)


@dataclass(frozen=True)
class AblationConfig:
    use_event_module: bool = True
    use_community_module: bool = True
    use_multitask: bool = True

    def label(self) -> str:
        if self.use_event_module and self.use_community_module and self.use_multitask:
            return "full"
        parts = []
        if not self.use_event_module:
            parts.append("noEvt")
        if not self.use_community_module:
            parts.append("noCom")
        if not self.use_multitask:
            parts.append("noMT")
        return "+".join(parts)

    def to_dict(self) -> dict:
        return {"use_event_module": self.use_event_module,
                "use_community_module": self.use_community_module,
                "use_multitask": self.use_multitask}

    @classmethod
    def from_dict(cls, d: dict) -> "AblationConfig":
        return cls(**d)


ABLATION_VARIANTS = {
    "full": AblationConfig(True, True, True),
    "noEvt": AblationConfig(False, True, True),
    "noCom": AblationConfig(True, False, True),
    "noMT": AblationConfig(True, True, False),
}


class ModelParameters:
    """Every learnable tensor, created in a fixed seeded order."""

    def __init__(self, params: dict[str, Tensor], dims: ModelDims, feature_dim: int,
                 n_communities: int, n_districts: int, ablation: AblationConfig,
                 l_e: int, l_c: int):
        self.params = params
        self.dims = dims
        self.feature_dim = feature_dim
        self.n_communities = n_communities
        self.n_districts = n_districts
        self.ablation = ablation
        self.l_e = l_e
        self.l_c = l_c

    @property
    def input_dim(self) -> int:
        return self.feature_dim + self.dims.embed

    @classmethod
    def init(cls, rng: np.random.Generator, feature_dim: int, n_communities: int,
             n_districts: int, ablation: AblationConfig | None = None,
             dims: ModelDims | None = None, l_e: int = 2, l_c: int = 1) -> "ModelParameters":
        ablation = ablation or AblationConfig()
        dims = dims or ModelDims()
        d_in = feature_dim + dims.embed
        p: dict[str, Tensor] = {}

        def mat(name, rows, cols):
            p[name] = ad.parameter(ad.glorot(rng, rows, cols))

        def zeros(name, size):
            p[name] = ad.parameter(np.zeros(size))

        mat("community_embedding", n_communities, dims.embed)
        if ablation.use_event_module:
            mat("event_att_w", dims.attn, 2 * d_in + 1)
            mat("event_att_v", 1, dims.attn)
            mat("event_conv_w_1", dims.hidden, d_in + 1)
            for level in range(2, l_e + 1):
                mat(f"event_conv_w_{level}", dims.hidden, dims.hidden)
        if ablation.use_community_module:
            mat("intra_att_w", dims.attn, d_in + 1)
            mat("intra_att_v", 1, dims.attn)
            mat("intra_conv_w", dims.hidden, d_in)
            mat("inter_att_w", dims.attn, d_in + dims.hidden + 4)
            mat("inter_att_v", 1, dims.attn)
            for level in range(1, l_c + 1):
                mat(f"inter_conv_w_{level}", dims.hidden, dims.hidden)
        mat("fusion_w1", dims.fusion_hidden, d_in + 2 * dims.hidden)
        zeros("fusion_b1", dims.fusion_hidden)
        mat("fusion_w2", dims.fusion_hidden, dims.fusion_hidden)
        zeros("fusion_b2", dims.fusion_hidden)
        if ablation.use_multitask:
            for m in range(n_districts):
                mat(f"head_w_{m}", 1, dims.fusion_hidden)
                zeros(f"head_b_{m}", 1)
        else:
            mat("head_w_shared", 1, dims.fusion_hidden)
            zeros("head_b_shared", 1)
        return cls(p, dims, feature_dim, n_communities, n_districts, ablation, l_e, l_c)

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def parameter_count(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, arr in snap.items():
            self.params[k].data[...] = arr


@dataclass
class QueryContext:
    """Everything a single forward pass needs, resolved against the graphs.
    ``nbr_preds`` holds full predecessor lists for every event node expanded
    at depth < l_e; ``hetero_closure`` and ``active_by_cid`` cover the
    l_c-hop community ball around the subject's community."""

    x: np.ndarray
    community_id: int
    district_id: int
    neighbors: list[int]
    nbr_preds: dict[int, list[int]] = field(default_factory=dict)
    hetero_closure: dict[int, list[tuple[int, np.ndarray]]] = field(default_factory=dict)
    active_by_cid: dict[int, tuple[int, ...]] = field(default_factory=dict)
    y_true: float | None = None


class EventTable:
    """Normalized features, community and price per historical event.

    Prices enter the network as inputs (neighbor states, attention scores)
    z-scored with train statistics, like every other input; the raw price is
    kept for targets and baselines."""

    def __init__(self, x_norm: np.ndarray, communities: np.ndarray, prices: np.ndarray,
                 price_mean: float = 0.0, price_std: float = 1.0):
        self.x_norm = x_norm
        self.communities = communities
        self.prices = prices
        self.price_mean = price_mean
        self.price_std = price_std

    def feat(self, event_id: int) -> np.ndarray:
        return self.x_norm[event_id]

    def community(self, event_id: int) -> int:
        return int(self.communities[event_id])

    def price(self, event_id: int) -> float:
        return float(self.prices[event_id])

    def norm_price(self, event_id: int) -> float:
        return (float(self.prices[event_id]) - self.price_mean) / self.price_std


class Forward:
    """One forward evaluation context bound to a tape; memoizes node tensors
    so shared subexpressions accumulate gradients through fan-out."""

    def __init__(self, tape: Tape, model: ModelParameters, table: EventTable):
        self.tape = tape
        self.model = model
        self.table = table
        self.p = model.params
        self._x_memo: dict[int, Tensor] = {}
        self._h0_memo: dict[int, Tensor] = {}
        self._event_memo: dict = {}
        self._alpha_memo: dict = {}
        self._intra_memo: dict = {}
        self._zero_hidden = ad.constant(np.zeros(model.dims.hidden))

    # -- shared node tensors -------------------------------------------------

    def node_x(self, event_id: int) -> Tensor:
        t = self._x_memo.get(event_id)
        if t is None:
            t = ad.concat(self.tape, [
                ad.constant(self.table.feat(event_id)),
                ad.embedding_lookup(self.tape, self.p["community_embedding"],
                                    self.table.community(event_id)),
            ])
            self._x_memo[event_id] = t
        return t

    def subject_x(self, qc: QueryContext) -> Tensor:
        t = ad.concat(self.tape, [
            ad.constant(qc.x),
            ad.embedding_lookup(self.tape, self.p["community_embedding"], qc.community_id),
        ])
        return t

    def node_h0(self, event_id: int) -> Tensor:
        t = self._h0_memo.get(event_id)
        if t is None:
            t = ad.concat(self.tape, [
                self.node_x(event_id),
                ad.constant(np.array([self.table.norm_price(event_id)])),
            ])
            self._h0_memo[event_id] = t
        return t

    # -- event-level block -----------------------------------------------------

    def event_coefficients(self, x_subject: Tensor, neighbor_ids: list[int]) -> Tensor:
        """Attention weights of a node over its neighbor list."""
        betas = []
        for nb in neighbor_ids:
            u = ad.concat(self.tape, [
                x_subject, self.node_x(nb),
                ad.constant(np.array([self.table.norm_price(nb)])),
            ])
            score = ad.affine(self.tape, self.p["event_att_v"],
                              ad.tanh(self.tape, ad.affine(self.tape, self.p["event_att_w"], u)))
            betas.append(score)
        return ad.masked_softmax(self.tape, betas)

    def _event_alphas(self, key, x_node: Tensor, nbrs: list[int]) -> Tensor:
        t = self._alpha_memo.get(key)
        if t is None:
            t = self.event_coefficients(x_node, nbrs)
            self._alpha_memo[key] = t
        return t

    def _event_h(self, key, x_node: Tensor, nbrs: list[int],
                 preds_of: dict[int, list[int]], level: int) -> Tensor:
        """Layer-``level`` representation of one node; layer-1 has no self
        term, deeper layers add the node's own previous layer."""
        memo_key = (key, level)
        cached = self._event_memo.get(memo_key)
        if cached is not None:
            return cached
        if not nbrs:
            out = self._zero_hidden
        else:
            alphas = self._event_alphas(key, x_node, nbrs)
            if level == 1:
                states = [self.node_h0(nb) for nb in nbrs]
            else:
                states = [
                    self._event_h(nb, self.node_x(nb), preds_of.get(nb, []), preds_of, level - 1)
                    for nb in nbrs
                ]
            agg = ad.weighted_sum(self.tape, alphas, states)
            if level > 1:
                agg = ad.add(self.tape, agg,
                             self._event_h(key, x_node, nbrs, preds_of, level - 1))
            out = ad.relu(self.tape, ad.affine(self.tape, self.p[f"event_conv_w_{level}"], agg))
        self._event_memo[memo_key] = out
        return out

    def event_representation(self, x_subject: Tensor, qc: QueryContext) -> Tensor:
        if not qc.neighbors:
            return self._zero_hidden
        # Subjects get a per-query key: their neighborhoods are not shared,
        # unlike historical nodes whose representations are query-independent.
        return self._event_h(("subject", id(qc)), x_subject, qc.neighbors, qc.nbr_preds,
                             self.model.l_e)

    # -- community-level block -------------------------------------------------

    def intra_representation(self, active_ids: tuple[int, ...]) -> Tensor:
        cached = self._intra_memo.get(active_ids)
        if cached is not None:
            return cached
        if not active_ids:
            out = self._zero_hidden
        else:
            betas = []
            for ev in active_ids:
                u = ad.concat(self.tape, [
                    self.node_x(ev),
                    ad.constant(np.array([self.table.norm_price(ev)])),
                ])
                score = ad.affine(self.tape, self.p["intra_att_v"],
                                  ad.tanh(self.tape, ad.affine(self.tape, self.p["intra_att_w"], u)))
                betas.append(score)
            alphas = ad.masked_softmax(self.tape, betas)
            agg = ad.weighted_sum(self.tape, alphas, [self.node_x(ev) for ev in active_ids])
            out = ad.relu(self.tape, ad.affine(self.tape, self.p["intra_conv_w"], agg))
        self._intra_memo[active_ids] = out
        return out

    def inter_representation(self, x_subject: Tensor, qc: QueryContext) -> Tensor:
        memo: dict = {}
        alpha_memo: dict = {}

        def h_u(cid: int) -> Tensor:
            return self.intra_representation(qc.active_by_cid.get(cid, ()))

        def alphas_for(cid: int, entries) -> Tensor:
            t = alpha_memo.get(cid)
            if t is None:
                betas = []
                for nbr, p_vec in entries:
                    u = ad.concat(self.tape, [x_subject, h_u(nbr), ad.constant(p_vec)])
                    score = ad.affine(
                        self.tape, self.p["inter_att_v"],
                        ad.tanh(self.tape, ad.affine(self.tape, self.p["inter_att_w"], u)))
                    betas.append(score)
                t = ad.masked_softmax(self.tape, betas)
                alpha_memo[cid] = t
            return t

        def h_c(cid: int, level: int) -> Tensor:
            if level == 0:
                return h_u(cid)
            key = (cid, level)
            cached = memo.get(key)
            if cached is not None:
                return cached
            entries = qc.hetero_closure.get(cid, [])
            agg: Tensor | None = None
            if entries:
                alphas = alphas_for(cid, entries)
                agg = ad.weighted_sum(self.tape, alphas,
                                      [h_c(nbr, level - 1) for nbr, _ in entries])
            if level > 1:
                self_h = h_c(cid, level - 1)
                agg = self_h if agg is None else ad.add(self.tape, agg, self_h)
            if agg is None:
                out = self._zero_hidden
            else:
                out = ad.relu(self.tape,
                              ad.affine(self.tape, self.p[f"inter_conv_w_{level}"], agg))
            memo[key] = out
            return out

        return h_c(qc.community_id, self.model.l_c)

    # -- fusion and heads --------------------------------------------------------

    def predict(self, qc: QueryContext) -> Tensor:
        model = self.model
        x_subject = self.subject_x(qc)
        if model.ablation.use_event_module:
            h_e = self.event_representation(x_subject, qc)
        else:
            h_e = self._zero_hidden
        if model.ablation.use_community_module:
            h_c = self.inter_representation(x_subject, qc)
        else:
            h_c = self._zero_hidden
        fused = ad.concat(self.tape, [x_subject, h_e, h_c])
        h1 = ad.relu(self.tape, ad.affine(self.tape, self.p["fusion_w1"], fused,
                                          self.p["fusion_b1"]))
        h_o = ad.affine(self.tape, self.p["fusion_w2"], h1, self.p["fusion_b2"])
        if model.ablation.use_multitask:
            if not 0 <= qc.district_id < model.n_districts:
                raise ValueError(f"unknown district {qc.district_id}")
            w, b = self.p[f"head_w_{qc.district_id}"], self.p[f"head_b_{qc.district_id}"]
        else:
            w, b = self.p["head_w_shared"], self.p["head_b_shared"]
        return ad.affine(self.tape, w, h_o, b)


def predict_one(model: ModelParameters, table: EventTable, qc: QueryContext) -> float:
    tape = Tape()
    return Forward(tape, model, table).predict(qc).item()


def batch_loss(tape: Tape, model: ModelParameters, table: EventTable,
               queries: list[QueryContext]) -> tuple[Tensor, list[Tensor]]:
    """Flat MSE over all labeled queries regardless of district."""
    if not queries:
        raise ValueError("empty batch")
    if any(qc.y_true is None for qc in queries):
        raise ValueError("batch_loss requires labeled queries")
    fw = Forward(tape, model, table)
    preds = [fw.predict(qc) for qc in queries]
    loss = ad.mse(tape, preds, np.array([qc.y_true for qc in queries]))
    return loss, preds


# ---------------------------------------------------------------------------
# Checkpoints

def save_checkpoint(path: str | Path, model: ModelParameters, hp: GraphHyperParams,
                    layout_hash: str, norm_mean: np.ndarray, norm_std: np.ndarray,
                    price_mean: float = 0.0, price_std: float = 1.0,
                    encode_base64: bool = True) -> None:
    params_out = {}
    for name, t in model.params.items():
        if encode_base64:
            payload = base64.b64encode(
                np.ascontiguousarray(t.data, dtype="<f8").tobytes()
            ).decode("ascii")
        else:
            payload = t.data.reshape(-1).tolist()
        params_out[name] = {"shape": list(t.data.shape), "data": payload,
                            "encoding": "base64" if encode_base64 else "decimal"}
    doc = {
        "version": CHECKPOINT_VERSION,
        "model_dims": model.dims.to_dict(),
        "hyperparams": hp.to_dict(),
        "ablation": model.ablation.to_dict(),
        "feature_layout_hash": layout_hash,
        "feature_dim": model.feature_dim,
        "n_communities": model.n_communities,
        "n_districts": model.n_districts,
        "normalization": {"mean": norm_mean.tolist(), "std": norm_std.tolist(),
                          "price_mean": price_mean, "price_std": price_std},
        "params": params_out,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[ModelParameters, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc['version']}")
    hp = GraphHyperParams.from_dict(doc["hyperparams"])
    dims = ModelDims.from_dict(doc["model_dims"])
    ablation = AblationConfig.from_dict(doc["ablation"])
    params: dict[str, Tensor] = {}
    for name, spec in doc["params"].items():
        shape = tuple(spec["shape"])
        if spec.get("encoding") == "base64":
            arr = np.frombuffer(base64.b64decode(spec["data"]), dtype="<f8").reshape(shape)
            arr = arr.astype(np.float64).copy()
        else:
            arr = np.array(spec["data"], dtype=np.float64).reshape(shape)
        params[name] = ad.parameter(arr)
    model = ModelParameters(
        params, dims, doc["feature_dim"], doc["n_communities"], doc["n_districts"],
        ablation, hp.l_e, hp.l_c,
    )
    meta = {
        "hyperparams": hp,
        "feature_layout_hash": doc["feature_layout_hash"],
        "norm_mean": np.array(doc["normalization"]["mean"]),
        "norm_std": np.array(doc["normalization"]["std"]),
        "price_mean": doc["normalization"].get("price_mean", 0.0),
        "price_std": doc["normalization"].get("price_std", 1.0),
        "version": doc["version"],
    }
    return model, meta
