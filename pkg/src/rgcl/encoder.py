"""Message-passing encoders (GIN and GCN) with segment pooling.

The same machinery serves two roles: the backbone that embeds whole graphs
(or sampled views, optionally weighted by per-node attribution before
pooling), and the GNN trunk of the attribution scorer, which additionally
carries a small per-node MLP head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graphs import GraphBatch
from .params import lift_params

GNN_TYPES = ("gin", "gcn")
POOLINGS = ("add", "mean")


@dataclass(frozen=True)
class EncoderConfig:
    gnn_type: str = "gin"
    layer_dims: tuple[int, ...] = (32, 32, 32)
    pooling: str = "add"
    # optional per-node scoring head (hidden width, output width)
    head_dims: tuple[int, int] | None = None

    def __post_init__(self):
        if self.gnn_type not in GNN_TYPES:
            raise ValueError(f"gnn_type must be one of {GNN_TYPES}, got {self.gnn_type!r}")
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        dims = tuple(int(d) for d in self.layer_dims)
        if not dims or any(d < 1 for d in dims):
            raise ValueError(f"layer_dims must be positive, got {self.layer_dims}")
        object.__setattr__(self, "layer_dims", dims)
        if self.head_dims is not None:
            hd = tuple(int(d) for d in self.head_dims)
            if len(hd) != 2 or any(d < 1 for d in hd):
                raise ValueError(f"head_dims must be (hidden, out), got {self.head_dims}")
            object.__setattr__(self, "head_dims", hd)

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]


@dataclass
class GinLayerParams:
    """Sum-aggregation layer: MLP((1 + eps) * h_v + sum of neighbor h_u)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    eps: np.ndarray  # learnable scalar, shape ()


@dataclass
class GcnLayerParams:
    w: np.ndarray
    b: np.ndarray


@dataclass
class MlpParams:
    """Two affine maps with one inner ReLU."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class EncoderParams:
    layers: list
    head: MlpParams | None = None


@dataclass
class PassCounter:
    """Counts encoder forward passes in units of graphs encoded."""

    graphs: int = 0
    calls: int = 0

    def add(self, num_graphs: int) -> None:
        self.graphs += int(num_graphs)
        self.calls += 1

    def reset(self) -> None:
        self.graphs = 0
        self.calls = 0


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(config: EncoderConfig, input_dim: int, seed: int) -> EncoderParams:
    """Glorot-uniform weights, zero biases, zero GIN epsilons; deterministic
    for a given seed."""
    if input_dim < 1:
        raise ValueError("input_dim must be >= 1")
    rng = np.random.default_rng(seed)
    layers = []
    d_prev = input_dim
    for d_out in config.layer_dims:
        if config.gnn_type == "gin":
            layers.append(
                GinLayerParams(
                    w1=glorot(rng, d_prev, d_out),
                    b1=np.zeros(d_out),
                    w2=glorot(rng, d_out, d_out),
                    b2=np.zeros(d_out),
                    eps=np.zeros(()),
                )
            )
        else:
            layers.append(GcnLayerParams(w=glorot(rng, d_prev, d_out), b=np.zeros(d_out)))
        d_prev = d_out
    head = None
    if config.head_dims is not None:
        hidden, out = config.head_dims
        head = MlpParams(
            w1=glorot(rng, d_prev, hidden),
            b1=np.zeros(hidden),
            w2=glorot(rng, hidden, out),
            b2=np.zeros(out),
        )
    return EncoderParams(layers=layers, head=head)


def mlp_forward(x: Tensor, p: MlpParams) -> Tensor:
    hidden = ad.relu(ad.add_bias(ad.matmul(x, p.w1), p.b1))
    return ad.add_bias(ad.matmul(hidden, p.w2), p.b2)


def gin_layer(batch: GraphBatch, h: Tensor, p: GinLayerParams) -> Tensor:
    """(1 + eps) * h_v plus the neighbor sum, pushed through the layer MLP."""
    n = h.shape[0]
    if batch.edges.size:
        msgs = ad.gather_rows(h, batch.edges[:, 0])
        agg = ad.segment_sum(msgs, batch.edges[:, 1], n)
    else:
        agg = ad.const(np.zeros((n, h.shape[1])))
    scaled = ad.mul(h, ad.add(p.eps, ad.const(1.0)))
    return mlp_forward(ad.add(scaled, agg), p)


def gcn_layer(batch: GraphBatch, h: Tensor, p: GcnLayerParams) -> Tensor:
    """ReLU(normalized-adjacency @ h @ w + b), self-loops added here.

    With edges duplicated per direction, the in-degree count plus the
    implicit self-loop gives the usual symmetric normalization.
    """
    n = h.shape[0]
    deg = np.ones(n)
    if batch.edges.size:
        deg += np.bincount(batch.edges[:, 1], minlength=n)
    inv_sqrt = 1.0 / np.sqrt(deg)
    self_term = ad.mul(h, ad.const((1.0 / deg)[:, None]))
    if batch.edges.size:
        src, dst = batch.edges[:, 0], batch.edges[:, 1]
        coef = (inv_sqrt[src] * inv_sqrt[dst])[:, None]
        msgs = ad.mul(ad.gather_rows(h, src), ad.const(coef))
        pre = ad.add(ad.segment_sum(msgs, dst, n), self_term)
    else:
        pre = self_term
    return ad.relu(ad.add_bias(ad.matmul(pre, p.w), p.b))


def node_embeddings(batch: GraphBatch, params: EncoderParams, config: EncoderConfig) -> Tensor:
    """Stacked message-passing layers; no pooling, no attribution."""
    if len(params.layers) != len(config.layer_dims):
        raise ValueError(
            f"params have {len(params.layers)} layers, config expects {len(config.layer_dims)}"
        )
    params = lift_params(params, None)  # no-op on already-lifted trees
    h = ad.const(batch.node_features)
    last = len(params.layers) - 1
    for i, layer in enumerate(params.layers):
        if config.gnn_type == "gin":
            h = gin_layer(batch, h, layer)
            if i < last:
                h = ad.relu(h)
        else:
            h = gcn_layer(batch, h, layer)
    return h


def encode_graph(
    batch: GraphBatch,
    params: EncoderParams,
    config: EncoderConfig,
    attribution: Tensor | None = None,
    counter: PassCounter | None = None,
) -> Tensor:
    """Per-graph embeddings [num_graphs, d].

    When ``attribution`` (an [num_nodes, 1] column aligned with the batch) is
    given, node embeddings are scaled by it before pooling; this is the only
    path through which attribution receives gradient. ``attribution=None``
    behaves exactly like an all-ones column.
    """
    h = node_embeddings(batch, params, config)
    if attribution is not None:
        if attribution.shape != (batch.num_nodes, 1):
            raise ValueError(
                f"attribution shape {attribution.shape} != ({batch.num_nodes}, 1)"
            )
        h = ad.mul(h, attribution)
    pool = ad.segment_sum if config.pooling == "add" else ad.segment_mean
    out = pool(h, batch.graph_id, batch.num_graphs)
    if counter is not None:
        counter.add(batch.num_graphs)
    return out
