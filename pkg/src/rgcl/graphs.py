"""Graph containers, induced subgraphs, disjoint-union batching, and a JSON
interchange format with a content hash.

Undirected graphs are stored with every edge duplicated in both directions,
which keeps message passing a plain gather/scatter. Constructors that read
external data symmetrize and sort edge lists into a canonical order so that
serialization (and therefore the dataset hash) is reproducible byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class GraphFormatError(ValueError):
    """A graph file or payload violates the expected format."""


def canonical_edges(edges, num_nodes: int, symmetrize: bool = True) -> np.ndarray:
    """Validate, optionally symmetrize, deduplicate, and sort an edge list."""
    arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if arr.size:
        if arr.min() < 0 or arr.max() >= num_nodes:
            raise GraphFormatError(
                f"edge endpoint out of range for {num_nodes} nodes"
            )
        if symmetrize:
            arr = np.concatenate([arr, arr[:, ::-1]], axis=0)
        arr = np.unique(arr, axis=0)
    return arr.reshape(-1, 2)


@dataclass(frozen=True)
class Graph:
    """One undirected graph: features [n, d], directed-duplicated edges [E, 2].

    ``rationale_mask`` (optional) marks ground-truth salient nodes for
    benchmarks that plant them.
    """

    node_features: np.ndarray
    edges: np.ndarray
    label: int | None = None
    rationale_mask: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.node_features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError(f"node_features must be [n>=1, d], got shape {x.shape}")
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= x.shape[0]):
            raise ValueError("edge endpoint out of range")
        object.__setattr__(self, "node_features", x)
        object.__setattr__(self, "edges", e)
        if self.rationale_mask is not None:
            m = np.asarray(self.rationale_mask, dtype=bool).reshape(-1)
            if m.shape[0] != x.shape[0]:
                raise ValueError("rationale_mask length must equal the node count")
            object.__setattr__(self, "rationale_mask", m)

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.node_features.shape[1]


@dataclass
class GraphDataset:
    """An ordered collection of graphs with a uniform feature dimension."""

    graphs: list[Graph]
    feature_dim: int
    num_classes: int | None = None

    def __post_init__(self):
        for i, g in enumerate(self.graphs):
            if g.feature_dim != self.feature_dim:
                raise ValueError(
                    f"graph {i} has feature dim {g.feature_dim}, expected {self.feature_dim}"
                )
            if self.num_classes is not None and g.label is not None:
                if not 0 <= g.label < self.num_classes:
                    raise ValueError(f"graph {i} label {g.label} out of range")

    def __len__(self) -> int:
        return len(self.graphs)

    def __getitem__(self, i: int) -> Graph:
        return self.graphs[i]

    def __iter__(self):
        return iter(self.graphs)

    def labels(self) -> np.ndarray:
        if any(g.label is None for g in self.graphs):
            raise ValueError("dataset has unlabeled graphs")
        return np.array([g.label for g in self.graphs], dtype=np.int64)


@dataclass
class GraphBatch:
    """Disjoint union of graphs: shifted node indices, per-node graph ids.

    Labels and masks ride along so that un-batching reproduces the inputs
    exactly.
    """

    node_features: np.ndarray
    edges: np.ndarray
    graph_id: np.ndarray
    sizes: np.ndarray
    labels: list = field(default_factory=list)
    rationale_masks: list = field(default_factory=list)

    @property
    def num_graphs(self) -> int:
        return len(self.sizes)

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]


def batch_graphs(graphs: list[Graph]) -> GraphBatch:
    """Merge graphs into one disjoint union, preserving node and edge order."""
    if not graphs:
        raise ValueError("cannot batch an empty list of graphs")
    dims = {g.feature_dim for g in graphs}
    if len(dims) != 1:
        raise ValueError(f"graphs have mixed feature dims {sorted(dims)}")
    sizes = np.array([g.num_nodes for g in graphs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    features = np.concatenate([g.node_features for g in graphs], axis=0)
    edge_parts = [g.edges + off for g, off in zip(graphs, offsets)]
    edges = (
        np.concatenate(edge_parts, axis=0)
        if edge_parts
        else np.zeros((0, 2), dtype=np.int64)
    )
    graph_id = np.repeat(np.arange(len(graphs), dtype=np.int64), sizes)
    return GraphBatch(
        node_features=features,
        edges=edges,
        graph_id=graph_id,
        sizes=sizes,
        labels=[g.label for g in graphs],
        rationale_masks=[g.rationale_mask for g in graphs],
    )


def unbatch_graphs(batch: GraphBatch) -> list[Graph]:
    """Invert ``batch_graphs`` exactly (features, edges, ordering)."""
    out = []
    offsets = np.concatenate([[0], np.cumsum(batch.sizes)])
    src = batch.edges[:, 0] if batch.edges.size else np.zeros(0, dtype=np.int64)
    edge_owner = (
        batch.graph_id[src] if batch.edges.size else np.zeros(0, dtype=np.int64)
    )
    for i in range(batch.num_graphs):
        lo, hi = offsets[i], offsets[i + 1]
        e = batch.edges[edge_owner == i] - lo
        out.append(
            Graph(
                node_features=batch.node_features[lo:hi].copy(),
                edges=e.copy(),
                label=batch.labels[i] if batch.labels else None,
                rationale_mask=(
                    batch.rationale_masks[i] if batch.rationale_masks else None
                ),
            )
        )
    return out


def induced_subgraph(g: Graph, keep) -> Graph:
    """Node-induced subgraph; kept nodes are re-indexed densely in ascending
    original order, and an edge survives iff both endpoints are kept."""
    keep = np.unique(np.asarray(keep, dtype=np.int64))
    if keep.size == 0:
        raise ValueError("induced_subgraph requires at least one node")
    if keep.min() < 0 or keep.max() >= g.num_nodes:
        raise ValueError("keep index out of range")
    remap = -np.ones(g.num_nodes, dtype=np.int64)
    remap[keep] = np.arange(keep.size)
    if g.edges.size:
        inside = (remap[g.edges[:, 0]] >= 0) & (remap[g.edges[:, 1]] >= 0)
        edges = remap[g.edges[inside]]
    else:
        edges = np.zeros((0, 2), dtype=np.int64)
    return Graph(
        node_features=g.node_features[keep].copy(),
        edges=edges,
        label=g.label,
        rationale_mask=None if g.rationale_mask is None else g.rationale_mask[keep].copy(),
    )


# ---------------------------------------------------------------------------
# JSON interchange


def dataset_to_json(ds: GraphDataset) -> dict:
    graphs = []
    for g in ds.graphs:
        item = {
            "x": [[float(v) for v in row] for row in g.node_features],
            "edges": [[int(u), int(v)] for u, v in g.edges],
        }
        if g.label is not None:
            item["y"] = int(g.label)
        if g.rationale_mask is not None:
            item["rationale"] = [bool(b) for b in g.rationale_mask]
        graphs.append(item)
    return {"graphs": graphs, "feature_dim": int(ds.feature_dim)}


def dataset_from_json(obj: dict) -> GraphDataset:
    if not isinstance(obj, dict) or "graphs" not in obj or "feature_dim" not in obj:
        raise GraphFormatError("payload must contain 'graphs' and 'feature_dim'")
    feature_dim = int(obj["feature_dim"])
    graphs = []
    for i, item in enumerate(obj["graphs"]):
        try:
            x = np.asarray(item["x"], dtype=np.float64)
            if x.ndim == 1:
                x = x.reshape(-1, 1)
            edges = canonical_edges(item.get("edges", []), x.shape[0])
            graphs.append(
                Graph(
                    node_features=x,
                    edges=edges,
                    label=int(item["y"]) if "y" in item else None,
                    rationale_mask=(
                        np.asarray(item["rationale"], dtype=bool)
                        if "rationale" in item
                        else None
                    ),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise GraphFormatError(f"graph {i}: {exc}") from exc
    labels = [g.label for g in graphs if g.label is not None]
    num_classes = (max(labels) + 1) if labels else None
    return GraphDataset(graphs=graphs, feature_dim=feature_dim, num_classes=num_classes)


def save_dataset_json(ds: GraphDataset, path) -> None:
    Path(path).write_text(
        json.dumps(dataset_to_json(ds), sort_keys=True, separators=(",", ":"))
    )


def load_dataset_json(path) -> GraphDataset:
    p = Path(path)
    if not p.exists():
        raise GraphFormatError(f"dataset file not found: {p}")
    try:
        obj = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"{p}: invalid JSON ({exc})") from exc
    return dataset_from_json(obj)


def dataset_hash(ds: GraphDataset) -> str:
    """sha256 over the canonical JSON serialization."""
    payload = json.dumps(dataset_to_json(ds), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
