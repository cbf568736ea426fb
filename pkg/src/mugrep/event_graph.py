"""Evolving transaction-event graph.

Each new event links to earlier events within the distance threshold and a
strict trailing time window, keeping at most the N most recent qualifying
events per community. Candidate lookup goes through a uniform spatial hash
whose per-cell buckets are grouped by community and scanned newest-first, so
an insertion touches only the local recent past.
"""

from __future__ import annotations

import json
import math
import struct
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import TransactionEvent
from .spatial import euclid

GRAPH_FORMAT_VERSION = 1
_MAGIC = b"MGEG"


@dataclass
class GraphHyperParams:
    eps_d_m: float = 500.0
    eps_tau_days: int = 90
    n_e: int = 5
    l_e: int = 2
    n_c: int = 5
    l_c: int = 1
    sim_quantile: float = 0.001

    def validate(self) -> None:
        if min(self.eps_d_m, self.eps_tau_days, self.n_e, self.l_e, self.n_c, self.l_c) <= 0:
            raise ValueError("graph hyperparameters must be positive")
        if not 0.0 < self.sim_quantile < 1.0:
            raise ValueError("sim_quantile must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "eps_d_m": self.eps_d_m, "eps_tau_days": self.eps_tau_days,
            "n_e": self.n_e, "l_e": self.l_e, "n_c": self.n_c, "l_c": self.l_c,
            "sim_quantile": self.sim_quantile,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GraphHyperParams":
        hp = cls()
        for k, v in d.items():
            if not hasattr(hp, k):
                raise ValueError(f"unknown graph hyperparameter '{k}'")
            setattr(hp, k, type(getattr(hp, k))(v))
        hp.validate()
        return hp


@dataclass
class Subgraph:
    nodes: set[int]
    depth: dict[int, int]
    preds: dict[int, list[int]]  # induced predecessor lists


class EventGraph:
    """Directed acyclic graph over transaction events, edges old -> new,
    stored as predecessor lists on the newer node."""

    def __init__(self, hp: GraphHyperParams | None = None):
        self.hp = hp or GraphHyperParams()
        self.hp.validate()
        self.ids: list[int] = []
        self.xs: list[float] = []
        self.ys: list[float] = []
        self.dates: list[int] = []
        self.communities: list[int] = []
        self.in_edges: dict[int, list[int]] = {}
        self.per_community_recent: dict[int, deque] = {}
        self._pos: dict[int, int] = {}
        # cell -> community -> positions in chronological order
        self._grid: dict[tuple[int, int], dict[int, list[int]]] = {}
        self._frozen = False

    def __len__(self) -> int:
        return len(self.ids)

    def _cell(self, x: float, y: float) -> tuple[int, int]:
        c = self.hp.eps_d_m
        return (math.floor(x / c), math.floor(y / c))

    def _neighborhood(self, x: float, y: float, date: int) -> list[int]:
        """Event ids satisfying the connectivity constraint relative to a
        (possibly virtual) event at (x, y, date): distance <= eps_d and
        0 < date - T <= eps_tau, capped at the n_e most recent per community."""
        eps_d = self.hp.eps_d_m
        lo_date = date - self.hp.eps_tau_days
        cx, cy = self._cell(x, y)
        by_community: dict[int, list[int]] = {}
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                cell = self._grid.get((cx + dx, cy + dy))
                if not cell:
                    continue
                for com, positions in cell.items():
                    bucket = by_community.setdefault(com, [])
                    # Newest-first; dates are nondecreasing with position.
                    for pos in reversed(positions):
                        d = self.dates[pos]
                        if d >= date:
                            continue  # same-day or later: never connected
                        if d < lo_date:
                            break
                        if euclid(x, y, self.xs[pos], self.ys[pos]) <= eps_d:
                            bucket.append(pos)
        result: list[int] = []
        for com in by_community:
            qual = by_community[com]
            # Most recent qualifying first: larger (date, id) wins.
            qual.sort(key=lambda p: (self.dates[p], self.ids[p]), reverse=True)
            result.extend(self.ids[p] for p in qual[: self.hp.n_e])
        result.sort()
        return result

    def insert_event(self, event: TransactionEvent) -> list[int]:
        """Insert one event; returns its predecessor list."""
        if self._frozen:
            raise RuntimeError("graph is frozen")
        if self.ids and event.id <= self.ids[-1]:
            raise ValueError(f"event id {event.id} is not greater than all existing ids")
        preds = self._neighborhood(event.x_m, event.y_m, event.date)
        pos = len(self.ids)
        self.ids.append(event.id)
        self.xs.append(event.x_m)
        self.ys.append(event.y_m)
        self.dates.append(event.date)
        self.communities.append(event.community_id)
        self.in_edges[event.id] = preds
        self._pos[event.id] = pos
        self._grid.setdefault(self._cell(event.x_m, event.y_m), {}).setdefault(
            event.community_id, []
        ).append(pos)
        recent = self.per_community_recent.setdefault(
            event.community_id, deque(maxlen=self.hp.n_e)
        )
        recent.append(event.id)
        return preds

    def freeze(self) -> None:
        self._frozen = True

    @property
    def frozen(self) -> bool:
        return self._frozen

    def predecessors(self, node_id: int) -> list[int]:
        if node_id not in self.in_edges:
            raise KeyError(f"unknown event node {node_id}")
        return self.in_edges[node_id]

    def attach_virtual(self, location: tuple[float, float], date: int) -> list[int]:
        """Neighborhood a subject property at ``location`` valued on ``date``
        would have; the graph itself is not mutated."""
        return self._neighborhood(location[0], location[1], date)

    def khop_subgraph(self, roots: list[int], k: int) -> Subgraph:
        """Nodes reachable from the roots via <= k reverse hops, plus induced
        predecessor lists."""
        if k < 1:
            raise ValueError("k must be >= 1")
        depth: dict[int, int] = {}
        frontier = []
        for r in roots:
            if r not in self.in_edges:
                raise KeyError(f"unknown event node {r}")
            depth[r] = 0
            frontier.append(r)
        for level in range(1, k + 1):
            nxt = []
            for node in frontier:
                for p in self.in_edges[node]:
                    if p not in depth:
                        depth[p] = level
                        nxt.append(p)
            frontier = nxt
        nodes = set(depth)
        preds = {
            n: [p for p in self.in_edges[n] if p in nodes]
            for n in nodes
        }
        return Subgraph(nodes=nodes, depth=depth, preds=preds)

    # -- serialization ------------------------------------------------------

    def save(self, bin_path: str | Path, json_path: str | Path | None = None) -> None:
        bin_path = Path(bin_path)
        header = json.dumps({
            "version": GRAPH_FORMAT_VERSION,
            "hyperparams": self.hp.to_dict(),
            "n": len(self.ids),
        }, sort_keys=True).encode("utf-8")
        n = len(self.ids)
        indptr = np.zeros(n + 1, dtype=np.int64)
        indices: list[int] = []
        for i, node_id in enumerate(self.ids):
            ps = self.in_edges[node_id]
            indptr[i + 1] = indptr[i] + len(ps)
            indices.extend(ps)
        with bin_path.open("wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(np.asarray(self.ids, dtype=np.int64).tobytes())
            fh.write(np.asarray(self.dates, dtype=np.int64).tobytes())
            fh.write(np.asarray(self.communities, dtype=np.int64).tobytes())
            fh.write(np.asarray(self.xs, dtype=np.float64).tobytes())
            fh.write(np.asarray(self.ys, dtype=np.float64).tobytes())
            fh.write(indptr.tobytes())
            fh.write(np.asarray(indices, dtype=np.int64).tobytes())
        if json_path is not None:
            debug = {
                "version": GRAPH_FORMAT_VERSION,
                "hyperparams": self.hp.to_dict(),
                "n": n,
                "nodes": [
                    {"id": self.ids[i], "date": self.dates[i],
                     "community_id": self.communities[i],
                     "x_m": self.xs[i], "y_m": self.ys[i],
                     "preds": self.in_edges[self.ids[i]]}
                    for i in range(n)
                ],
            }
            Path(json_path).write_text(json.dumps(debug) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, bin_path: str | Path) -> "EventGraph":
        raw = Path(bin_path).read_bytes()
        if raw[:4] != _MAGIC:
            raise ValueError("not an event-graph dump")
        hlen = struct.unpack("<I", raw[4:8])[0]
        header = json.loads(raw[8:8 + hlen].decode("utf-8"))
        if header["version"] != GRAPH_FORMAT_VERSION:
            raise ValueError(f"unsupported graph format version {header['version']}")
        n = header["n"]
        off = 8 + hlen
        ids = np.frombuffer(raw, dtype=np.int64, count=n, offset=off); off += 8 * n
        dates = np.frombuffer(raw, dtype=np.int64, count=n, offset=off); off += 8 * n
        coms = np.frombuffer(raw, dtype=np.int64, count=n, offset=off); off += 8 * n
        xs = np.frombuffer(raw, dtype=np.float64, count=n, offset=off); off += 8 * n
        ys = np.frombuffer(raw, dtype=np.float64, count=n, offset=off); off += 8 * n
        indptr = np.frombuffer(raw, dtype=np.int64, count=n + 1, offset=off); off += 8 * (n + 1)
        nnz = int(indptr[-1])
        indices = np.frombuffer(raw, dtype=np.int64, count=nnz, offset=off)

        g = cls(GraphHyperParams.from_dict(header["hyperparams"]))
        for i in range(n):
            pos = len(g.ids)
            g.ids.append(int(ids[i]))
            g.xs.append(float(xs[i]))
            g.ys.append(float(ys[i]))
            g.dates.append(int(dates[i]))
            g.communities.append(int(coms[i]))
            g.in_edges[int(ids[i])] = [int(p) for p in indices[indptr[i]:indptr[i + 1]]]
            g._pos[int(ids[i])] = pos
            g._grid.setdefault(g._cell(float(xs[i]), float(ys[i])), {}).setdefault(
                int(coms[i]), []
            ).append(pos)
            recent = g.per_community_recent.setdefault(
                int(coms[i]), deque(maxlen=g.hp.n_e)
            )
            recent.append(int(ids[i]))
        g.freeze()
        return g


def build_event_graph(events: list[TransactionEvent], hp: GraphHyperParams | None = None,
                      freeze: bool = True) -> EventGraph:
    """Insert all events in id order and (by default) freeze the result."""
    g = EventGraph(hp)
    for ev in sorted(events, key=lambda e: e.id):
        g.insert_event(ev)
    if freeze:
        g.freeze()
    return g
