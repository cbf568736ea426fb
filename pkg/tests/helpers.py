"""Shared test utilities: toy model instances and brute-force oracles.

Oracles here are written independently of the library code paths they check:
straight-line scans and direct evaluations of the connectivity/window/quantile
definitions.
"""

import math

import numpy as np

from mugrep.community_graph import IntraCommunityIndex, build_hetero_edges
from mugrep.data import TransactionEvent
from mugrep.event_graph import GraphHyperParams, build_event_graph
from mugrep.model import AblationConfig, EventTable, ModelDims, ModelParameters, QueryContext


def random_events(rng, n, n_com, extent=900.0, date_range=150):
    events = []
    for _ in range(n):
        events.append((
            float(rng.uniform(0, extent)), float(rng.uniform(0, extent)),
            int(rng.integers(0, date_range)), int(rng.integers(0, n_com)),
            float(rng.uniform(2, 8)),
        ))
    events.sort(key=lambda t: t[2])
    return [
        TransactionEvent(id=i, x_m=x, y_m=y, date=d, community_id=c,
                         raw_attributes={}, y=p)
        for i, (x, y, d, c, p) in enumerate(events)
    ]


def brute_force_adjacency(events, eps_d, eps_tau, n_e):
    """Direct O(n^2) evaluation of the connectivity constraint plus the
    per-community recency cap."""
    adj = {}
    for ev in events:
        per_com = {}
        for other in events:
            if other.id == ev.id:
                continue
            dt = ev.date - other.date
            dist = math.hypot(ev.x_m - other.x_m, ev.y_m - other.y_m)
            if 0 < dt <= eps_tau and dist <= eps_d:
                per_com.setdefault(other.community_id, []).append(other)
        preds = []
        for com, cands in per_com.items():
            cands.sort(key=lambda e: (e.date, e.id), reverse=True)
            preds.extend(e.id for e in cands[:n_e])
        adj[ev.id] = sorted(preds)
    return adj


def brute_force_active(events, community_id, t, n_c, eps_tau, before_date=None):
    """Direct evaluation of the dynamic intra-community window."""
    members = [e for e in events if e.community_id == community_id and e.date <= t]
    if before_date is not None:
        members = [e for e in members if e.date < before_date]
    if not members:
        return []
    members.sort(key=lambda e: (e.date, e.id))
    window = eps_tau
    if len(members) >= n_c:
        window = max(eps_tau, members[-1].date - members[-n_c].date)
    return sorted(e.id for e in members if 0 <= t - e.date <= window)


def brute_force_quantile_edges(vectors, ids, q):
    """Sort-and-index rank quantile, then the threshold filter."""
    n = len(ids)
    dists = []
    pairs = []
    for a in range(n):
        for b in range(a + 1, n):
            dists.append(float(np.linalg.norm(vectors[a] - vectors[b])))
            pairs.append((ids[a], ids[b]) if ids[a] < ids[b] else (ids[b], ids[a]))
    k = min(len(dists), max(1, math.floor(q * len(dists) + 0.5)))
    eps = sorted(dists)[k - 1]
    return {p for p, d in zip(pairs, dists) if d <= eps}, eps


def make_toy_instance(seed, n_events=12, n_com=5, n_districts=3, feat_dim=5,
                      l_e=2, l_c=1, ablation=None,
                      dims=None):
    """A small but structurally complete model instance: real graphs over
    random events, random features, and per-event query contexts."""
    rng = np.random.default_rng(seed)
    hp = GraphHyperParams(eps_d_m=500.0, eps_tau_days=90, n_e=3, l_e=l_e, n_c=3,
                          l_c=l_c, sim_quantile=0.15)
    events = random_events(rng, n_events, n_com)
    graph = build_event_graph(events, hp)
    intra = IntraCommunityIndex(events)
    sim = {t: rng.normal(size=(n_com, 3)) for t in "gvmp"}
    hetero = build_hetero_edges(sim, list(range(n_com)), hp.sim_quantile)
    x = rng.normal(size=(len(events), feat_dim))
    communities = np.array([e.community_id for e in events])
    prices = np.array([e.y for e in events])
    table = EventTable(x, communities, prices)
    districts = {c: c % n_districts for c in range(n_com)}

    def hetero_ball(cid, radius):
        closure, seen = {}, {cid}
        frontier = [cid]
        for _ in range(radius):
            nxt = []
            for c in frontier:
                entries = hetero.hetero_neighbors(c)
                closure[c] = entries
                for nbr, _ in entries:
                    if nbr not in seen:
                        seen.add(nbr)
                        nxt.append(nbr)
            frontier = nxt
        return closure, seen

    contexts = []
    for e in events:
        nbrs = graph.predecessors(e.id)
        nbr_preds = {}
        frontier = list(nbrs)
        for _ in range(1, hp.l_e):
            nxt = []
            for node in frontier:
                if node not in nbr_preds:
                    ps = graph.predecessors(node)
                    nbr_preds[node] = ps
                    nxt.extend(ps)
            frontier = nxt
        closure, seen = hetero_ball(e.community_id, hp.l_c)
        active = {
            cid: tuple(intra.active_events(cid, e.date, hp.n_c, hp.eps_tau_days,
                                           before_date=e.date))
            for cid in sorted(seen)
        }
        contexts.append(QueryContext(
            x=x[e.id], community_id=e.community_id,
            district_id=districts[e.community_id],
            neighbors=nbrs, nbr_preds=nbr_preds, hetero_closure=closure,
            active_by_cid=active, y_true=e.y,
        ))

    model_rng = np.random.default_rng(seed + 10_000)
    model = ModelParameters.init(
        model_rng, feat_dim, n_com, n_districts,
        ablation or AblationConfig(),
        dims or ModelDims(hidden=5, attn=4, fusion_hidden=6, embed=3),
        l_e, l_c,
    )
    return {
        "hp": hp, "events": events, "graph": graph, "intra": intra,
        "hetero": hetero, "table": table, "contexts": contexts, "model": model,
        "districts": districts, "feat_dim": feat_dim, "n_com": n_com,
        "n_districts": n_districts,
    }
