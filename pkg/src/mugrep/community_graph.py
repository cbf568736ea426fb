"""Hierarchical community graphs.

Per-community impact windows (how far back transactions still shape the
community representation) and the heterogeneous inter-community graph with
four similarity edge sets thresholded at an empirical quantile of all
pairwise distances.
"""

from __future__ import annotations

import bisect
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import TransactionEvent

EDGE_TYPES = ["g", "v", "m", "p"]
INTRA_FORMAT_VERSION = 1
_MAGIC = b"MGIX"


class IntraCommunityIndex:
    """Chronological (date, event id) lists per community."""

    def __init__(self, events: list[TransactionEvent]):
        self._dates: dict[int, list[int]] = {}
        self._ids: dict[int, list[int]] = {}
        for ev in sorted(events, key=lambda e: (e.date, e.id)):
            self._dates.setdefault(ev.community_id, []).append(ev.date)
            self._ids.setdefault(ev.community_id, []).append(ev.id)

    def communities(self) -> list[int]:
        return sorted(self._dates)

    def members(self, community_id: int) -> list[tuple[int, int]]:
        dates = self._dates.get(community_id, [])
        ids = self._ids.get(community_id, [])
        return list(zip(dates, ids))

    def active_events(self, community_id: int, t: int, n_c: int, eps_tau_days: int,
                      before_date: int | None = None) -> list[int]:
        """Event ids active at query time ``t``: members with
        0 <= t - date <= max(eps_tau, gap), where gap is the day span from the
        n_c-th most recent member to the latest member (members dated <= t).
        With fewer than n_c members the window degrades to eps_tau alone.
        ``before_date`` additionally restricts members to date < before_date
        (the strict-past view used when valuing a subject)."""
        dates = self._dates.get(community_id)
        if not dates:
            return []
        hi = bisect.bisect_right(dates, t)
        if before_date is not None:
            hi = min(hi, bisect.bisect_left(dates, before_date))
        if hi == 0:
            return []
        window = eps_tau_days
        if hi >= n_c:
            gap = dates[hi - 1] - dates[hi - n_c]
            window = max(eps_tau_days, gap)
        lo_date = t - window
        lo = bisect.bisect_left(dates, lo_date, 0, hi)
        return self._ids[community_id][lo:hi]

    def save(self, path: str | Path) -> None:
        path = Path(path)
        coms = self.communities()
        header = json.dumps({
            "version": INTRA_FORMAT_VERSION, "n_communities": len(coms),
        }).encode("utf-8")
        indptr = [0]
        com_arr, date_arr, id_arr = [], [], []
        for c in coms:
            com_arr.append(c)
            date_arr.extend(self._dates[c])
            id_arr.extend(self._ids[c])
            indptr.append(len(id_arr))
        with path.open("wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(np.asarray(com_arr, dtype=np.int64).tobytes())
            fh.write(np.asarray(indptr, dtype=np.int64).tobytes())
            fh.write(np.asarray(date_arr, dtype=np.int64).tobytes())
            fh.write(np.asarray(id_arr, dtype=np.int64).tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "IntraCommunityIndex":
        raw = Path(path).read_bytes()
        if raw[:4] != _MAGIC:
            raise ValueError("not an intra-community index dump")
        hlen = struct.unpack("<I", raw[4:8])[0]
        header = json.loads(raw[8:8 + hlen].decode("utf-8"))
        n = header["n_communities"]
        off = 8 + hlen
        coms = np.frombuffer(raw, dtype=np.int64, count=n, offset=off); off += 8 * n
        indptr = np.frombuffer(raw, dtype=np.int64, count=n + 1, offset=off); off += 8 * (n + 1)
        total = int(indptr[-1])
        dates = np.frombuffer(raw, dtype=np.int64, count=total, offset=off); off += 8 * total
        ids = np.frombuffer(raw, dtype=np.int64, count=total, offset=off)
        idx = cls([])
        for i, c in enumerate(coms):
            lo, hi = int(indptr[i]), int(indptr[i + 1])
            idx._dates[int(c)] = [int(d) for d in dates[lo:hi]]
            idx._ids[int(c)] = [int(e) for e in ids[lo:hi]]
        return idx


def pairwise_distance(f_i: np.ndarray, f_j: np.ndarray) -> float:
    f_i = np.asarray(f_i, dtype=np.float64)
    f_j = np.asarray(f_j, dtype=np.float64)
    if f_i.shape != f_j.shape:
        raise ValueError(f"dimension mismatch: {f_i.shape} vs {f_j.shape}")
    return float(np.linalg.norm(f_i - f_j))


def nearest_rank_quantile(values: list[float], q: float) -> float:
    """The k-th smallest value with k = round(q * N) (half up), clamped to
    [1, N]."""
    if not values:
        raise ValueError("quantile of empty list")
    n = len(values)
    k = min(n, max(1, math.floor(q * n + 0.5)))
    return sorted(values)[k - 1]


def zscore_rows(matrix: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Column-wise z-score over the community population."""
    mean = matrix.mean(axis=0)
    std = np.maximum(matrix.std(axis=0), floor)
    return (matrix - mean) / std


@dataclass
class HeteroCommunityEdges:
    community_ids: list[int]
    edge_sets: dict[str, set[tuple[int, int]]]  # type -> {(i, j) with i < j}
    thresholds: dict[str, float]

    def hetero_neighbors(self, community_id: int) -> list[tuple[int, np.ndarray]]:
        """Neighbors across all four sets, each with its edge-type one-hot.
        A pair connected by two types yields two entries."""
        if community_id not in self._id_set():
            raise KeyError(f"unknown community {community_id}")
        out: list[tuple[int, np.ndarray]] = []
        for ti, etype in enumerate(EDGE_TYPES):
            if etype not in self.edge_sets:
                continue
            nbrs = sorted(
                (j if i == community_id else i)
                for i, j in self.edge_sets[etype]
                if community_id in (i, j)
            )
            p = np.zeros(len(EDGE_TYPES))
            p[ti] = 1.0
            out.extend((n, p.copy()) for n in nbrs)
        return out

    def _id_set(self) -> set[int]:
        return set(self.community_ids)

    def save(self, path: str | Path) -> None:
        payload = {
            "community_ids": self.community_ids,
            "types": {
                t: {
                    "threshold": self.thresholds[t],
                    "pairs": sorted(list(p) for p in self.edge_sets[t]),
                }
                for t in self.edge_sets
            },
        }
        Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "HeteroCommunityEdges":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            community_ids=d["community_ids"],
            edge_sets={t: {tuple(p) for p in spec["pairs"]} for t, spec in d["types"].items()},
            thresholds={t: spec["threshold"] for t, spec in d["types"].items()},
        )


def build_hetero_edges(vectors_by_type: dict[str, np.ndarray], community_ids: list[int],
                       sim_quantile: float,
                       keep_types: frozenset[str] | None = None) -> HeteroCommunityEdges:
    """Per type: threshold = nearest-rank quantile of all n(n-1)/2 pairwise
    Euclidean distances; pairs at or below it become undirected edges.
    Vectors are used exactly as given (normalize beforehand if desired)."""
    n = len(community_ids)
    if n < 2:
        raise ValueError("need at least 2 communities to build similarity edges")
    edge_sets: dict[str, set[tuple[int, int]]] = {}
    thresholds: dict[str, float] = {}
    for etype in EDGE_TYPES:
        if keep_types is not None and etype not in keep_types:
            continue
        mat = np.asarray(vectors_by_type[etype], dtype=np.float64)
        if mat.shape[0] != n:
            raise ValueError(f"vector matrix for '{etype}' has {mat.shape[0]} rows, want {n}")
        dists = []
        pair_idx = []
        for a in range(n):
            diff = mat[a + 1:] - mat[a]
            if diff.size:
                row = np.sqrt((diff * diff).sum(axis=1))
                dists.extend(float(v) for v in row)
                pair_idx.extend((a, b) for b in range(a + 1, n))
        eps = nearest_rank_quantile(dists, sim_quantile)
        edges = {
            (community_ids[a], community_ids[b]) if community_ids[a] < community_ids[b]
            else (community_ids[b], community_ids[a])
            for (a, b), d in zip(pair_idx, dists)
            if d <= eps
        }
        edge_sets[etype] = edges
        thresholds[etype] = eps
    return HeteroCommunityEdges(
        community_ids=list(community_ids), edge_sets=edge_sets, thresholds=thresholds
    )
