"""Self-supervised pre-training: the three-tower step, Adam, checkpoints.

Each step processes a batch of N anchor graphs. Phase A (no gradients)
scores every anchor and draws the discrete node selections for two
rationale views and one complement view. Phase B rebuilds attribution under
tape-lifted parameters, encodes the three view batches (so the encoder runs
exactly 3N graph-passes per step; 2N when the complement tower is ablated),
projects, and evaluates the contrastive loss. One tape, one backward, one
joint Adam update over encoder, scorer, and projector.

Ablation variants:
* ``no_rationale_views``: flat attribution and uniform sampling; the scorer
  is bypassed entirely (it receives zero gradient and never moves).
* ``no_independence``: the complement tower is skipped and only the
  sufficiency term trains.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError
from .encoder import (
    EncoderConfig,
    EncoderParams,
    PassCounter,
    encode_graph,
    init_params,
)
from .graphs import Graph, GraphDataset, batch_graphs
from .losses import (
    BatchViews,
    LossReport,
    ProjectorParams,
    init_projector_params,
    project,
    rgcl_loss,
)
from .params import assign_arrays, lift_params, named_arrays, named_leaves
from .rationale import (
    attribute_nodes,
    complement_from_kept,
    gumbel_top_k,
    rationale_from_kept,
    uniform_scores,
    view_size,
)

CHECKPOINT_VERSION = 1
VARIANTS = ("full", "no_rationale_views", "no_independence")
_VARIANT_ALIASES = {"no_rv": "no_rationale_views", "no_i": "no_independence"}


class CheckpointFormatError(ValueError):
    """A checkpoint file is unreadable or inconsistent with the model."""


def normalize_variant(variant: str) -> str:
    v = _VARIANT_ALIASES.get(variant, variant)
    if v not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS} (or no_rv/no_i), got {variant!r}")
    return v


@dataclass(frozen=True)
class TrainConfig:
    """Everything that defines a pre-training run, minus the dataset."""

    batch_size: int = 32
    epochs: int = 20
    learning_rate: float = 0.01
    tau: float = 0.2
    lam: float = 0.1
    rho: float = 0.8
    seed: int = 0
    pooling: str = "add"
    encoder_gnn: str = "gin"
    encoder_dims: tuple[int, ...] = (32, 32, 32)
    generator_gnn: str = "gcn"
    generator_dims: tuple[int, ...] = (32, 32)
    generator_head: tuple[int, int] = (32, 1)
    projector_hidden: int = 32
    projector_dim: int = 32
    checkpoint_every: int = 100

    def __post_init__(self):
        def fail(field_name: str, constraint: str):
            raise ValueError(f"{field_name}: {constraint}")

        if self.batch_size < 2:
            fail("batch_size", "must be >= 2")
        if self.epochs < 0:
            fail("epochs", "must be >= 0")
        if self.learning_rate <= 0:
            fail("learning_rate", "must be > 0")
        if self.tau <= 0:
            fail("tau", "must be > 0")
        if self.lam < 0:
            fail("lam", "must be >= 0")
        if not 0.0 < self.rho <= 1.0:
            fail("rho", "must be in (0, 1]")
        if self.checkpoint_every < 1:
            fail("checkpoint_every", "must be >= 1")
        for name in ("encoder_dims", "generator_dims", "generator_head"):
            object.__setattr__(self, name, tuple(int(d) for d in getattr(self, name)))
        if self.generator_head[-1] != 1:
            fail("generator_head", "must end with an output width of 1")
        # these raise with a clear message if the combination is invalid
        self.encoder_config()
        self.generator_config()

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            gnn_type=self.encoder_gnn, layer_dims=self.encoder_dims, pooling=self.pooling
        )

    def generator_config(self) -> EncoderConfig:
        return EncoderConfig(
            gnn_type=self.generator_gnn,
            layer_dims=self.generator_dims,
            pooling=self.pooling,
            head_dims=self.generator_head,
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainState:
    encoder: EncoderParams
    generator: EncoderParams
    projector: ProjectorParams
    opt_m: dict[str, np.ndarray]
    opt_v: dict[str, np.ndarray]
    step: int
    rng: np.random.Generator
    epoch: int = 0
    epoch_cursor: int = 0
    epoch_perm_seed: int | None = None
    loss_history: list[float] = field(default_factory=list)
    encoder_passes: PassCounter = field(default_factory=PassCounter)
    anchors_seen: int = 0


def _named_params(state: TrainState) -> dict[str, np.ndarray]:
    out = {}
    out.update(named_arrays(state.encoder, "encoder"))
    out.update(named_arrays(state.generator, "generator"))
    out.update(named_arrays(state.projector, "projector"))
    return out


def _assign_params(state: TrainState, arrays: dict[str, np.ndarray]) -> None:
    for prefix, tree in (
        ("encoder", state.encoder),
        ("generator", state.generator),
        ("projector", state.projector),
    ):
        subset = {k: v for k, v in arrays.items() if k.startswith(prefix + ".")}
        assign_arrays(tree, subset, prefix)


def init_train_state(config: TrainConfig, input_dim: int) -> TrainState:
    """Fresh parameters and optimizer state, fully determined by the seed."""
    seeds = np.random.SeedSequence(config.seed).generate_state(4)
    encoder = init_params(config.encoder_config(), input_dim, int(seeds[0]))
    generator = init_params(config.generator_config(), input_dim, int(seeds[1]))
    projector = init_projector_params(
        config.encoder_dims[-1], config.projector_hidden, config.projector_dim, int(seeds[2])
    )
    state = TrainState(
        encoder=encoder,
        generator=generator,
        projector=projector,
        opt_m={},
        opt_v={},
        step=0,
        rng=np.random.default_rng(int(seeds[3])),
    )
    flat = _named_params(state)
    state.opt_m = {k: np.zeros_like(v) for k, v in flat.items()}
    state.opt_v = {k: np.zeros_like(v) for k, v in flat.items()}
    return state


def adam_update(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    m: dict[str, np.ndarray],
    v: dict[str, np.ndarray],
    lr: float,
    step: int,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """One bias-corrected Adam step (``step`` is 1-based); returns new dicts."""
    if step < 1:
        raise ValueError("adam step index is 1-based")
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        new_m[k] = beta1 * m[k] + (1.0 - beta1) * g
        new_v[k] = beta2 * v[k] + (1.0 - beta2) * g * g
        m_hat = new_m[k] / (1.0 - beta1**step)
        v_hat = new_v[k] / (1.0 - beta2**step)
        new_p[k] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_p, new_m, new_v


@dataclass
class FrozenSelection:
    """Discrete node choices for one anchor, fixed before the tape forward."""

    r1: np.ndarray
    r2: np.ndarray
    c: np.ndarray | None


def sample_selections(
    graphs: list[Graph],
    generator: EncoderParams,
    config: TrainConfig,
    rng: np.random.Generator,
    variant: str = "full",
) -> list[FrozenSelection]:
    """Phase A: draw all node selections for a batch.

    Each anchor gets its own child generator split from the supplied
    stream, so the draws are reproducible anchor by anchor.
    """
    gen_cfg = config.generator_config()
    out = []
    for g in graphs:
        child = np.random.default_rng(int(rng.integers(2**63)))
        if variant == "no_rationale_views":
            scores = uniform_scores(g)
        else:
            scores = attribute_nodes(g, generator, gen_cfg)
        p = scores.probs.values.reshape(-1)
        k = view_size(g.num_nodes, config.rho)
        r1 = gumbel_top_k(p, k, child)
        r2 = gumbel_top_k(p, k, child)
        c = None if variant == "no_independence" else gumbel_top_k(1.0 - p, k, child)
        out.append(FrozenSelection(r1=r1, r2=r2, c=c))
    return out


def encode_views(
    graphs: list[Graph],
    selections: list[FrozenSelection],
    encoder: EncoderParams,
    generator: EncoderParams,
    projector: ProjectorParams,
    config: TrainConfig,
    variant: str = "full",
    counter: PassCounter | None = None,
) -> BatchViews:
    """The differentiable view forward given frozen selections.

    Parameters may be raw arrays (value-only evaluation) or tape-lifted
    tensors (training).
    """
    gen_cfg = config.generator_config()
    enc_cfg = config.encoder_config()
    r1_views, r2_views, c_views = [], [], []
    for g, sel in zip(graphs, selections):
        if variant == "no_rationale_views":
            scores = uniform_scores(g)
        else:
            scores = attribute_nodes(g, generator, gen_cfg)
        r1_views.append(rationale_from_kept(g, scores, sel.r1))
        r2_views.append(rationale_from_kept(g, scores, sel.r2))
        if sel.c is not None:
            c_views.append(complement_from_kept(g, scores, sel.c))

    def tower(view_list):
        batch = batch_graphs([v.subgraph for v in view_list])
        attribution = ad.concat_rows([v.attribution for v in view_list])
        pooled = encode_graph(
            batch, encoder, enc_cfg, attribution=attribution, counter=counter
        )
        return project(pooled, projector)

    return BatchViews(
        r1=tower(r1_views),
        r2=tower(r2_views),
        c=tower(c_views) if c_views else None,
    )


def batch_views_loss(
    graphs: list[Graph],
    selections: list[FrozenSelection],
    encoder: EncoderParams,
    generator: EncoderParams,
    projector: ProjectorParams,
    config: TrainConfig,
    variant: str = "full",
    counter: PassCounter | None = None,
):
    """Phase B: ``encode_views`` plus the contrastive loss; returns
    ``(total, report, views)``."""
    views = encode_views(
        graphs, selections, encoder, generator, projector, config, variant, counter
    )
    total, report = rgcl_loss(views, config.tau, config.lam)
    return total, report, views


def train_step(
    state: TrainState,
    graphs: list[Graph],
    config: TrainConfig,
    variant: str = "full",
) -> tuple[TrainState, LossReport]:
    """One optimization step over a batch of anchor graphs (N >= 2)."""
    variant = normalize_variant(variant)
    if len(graphs) < 2:
        raise ValueError(f"train_step needs at least 2 graphs, got {len(graphs)}")
    selections = sample_selections(graphs, state.generator, config, state.rng, variant)

    tape = ad.Tape()
    enc_l = lift_params(state.encoder, tape)
    gen_l = lift_params(state.generator, tape)
    proj_l = lift_params(state.projector, tape)
    try:
        total, report, _ = batch_views_loss(
            graphs, selections, enc_l, gen_l, proj_l, config, variant,
            counter=state.encoder_passes,
        )
    except NumericError as exc:
        raise NumericError(f"step {state.step}: {exc}") from exc
    if not (
        np.isfinite(report.total) and np.isfinite(report.l_su) and np.isfinite(report.l_in)
    ):
        raise NumericError(
            f"non-finite loss at step {state.step}: "
            f"l_su={report.l_su} l_in={report.l_in} total={report.total}"
        )

    store = ad.backward(tape, total)
    leaves = {}
    leaves.update(named_leaves(enc_l, "encoder"))
    leaves.update(named_leaves(gen_l, "generator"))
    leaves.update(named_leaves(proj_l, "projector"))
    grads = {k: store[t] for k, t in leaves.items()}
    new_params, state.opt_m, state.opt_v = adam_update(
        _named_params(state), grads, state.opt_m, state.opt_v,
        config.learning_rate, state.step + 1,
    )
    _assign_params(state, new_params)
    state.step += 1
    state.anchors_seen += len(graphs)
    state.loss_history.append(report.total)
    return state, report


def pretrain(
    dataset: GraphDataset,
    config: TrainConfig,
    state: TrainState | None = None,
    output_dir=None,
    variant: str = "full",
) -> TrainState:
    """Run the full pre-training loop: ``epochs x ceil(M / batch_size)`` steps
    with a fresh shuffle per epoch.

    Passing a loaded ``state`` resumes exactly where it stopped (including
    mid-epoch); a resumed run reproduces the uninterrupted one step for
    step. With an ``output_dir``, per-step metrics go to ``metrics.jsonl``
    and checkpoints are written every ``checkpoint_every`` steps plus at the
    end.
    """
    variant = normalize_variant(variant)
    if len(dataset) == 0:
        raise ValueError("cannot pretrain on an empty dataset")
    if state is None:
        state = init_train_state(config, dataset.feature_dim)

    out = None
    writer = None
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        writer = open(out / "metrics.jsonl", "a" if state.step > 0 else "w")

    m_total = len(dataset)
    try:
        while state.epoch < config.epochs:
            if state.epoch_perm_seed is None:
                state.epoch_perm_seed = int(state.rng.integers(2**63))
                state.epoch_cursor = 0
            perm = np.random.default_rng(state.epoch_perm_seed).permutation(m_total)
            while state.epoch_cursor < m_total:
                idx = perm[state.epoch_cursor : state.epoch_cursor + config.batch_size]
                advance = len(idx)
                if len(idx) == 1:
                    # a trailing singleton cannot form a contrastive batch;
                    # borrow the epoch's first graph to pair it up
                    idx = np.concatenate([idx, perm[:1]])
                graphs = [dataset[int(i)] for i in idx]
                state, report = train_step(state, graphs, config, variant)
                if writer is not None:
                    writer.write(json.dumps(report.metrics_line(state.step)) + "\n")
                    writer.flush()
                state.epoch_cursor += advance
                if out is not None and state.step % config.checkpoint_every == 0:
                    save_checkpoint(state, out / f"ckpt_{state.step:06d}.json", config)
            state.epoch += 1
            state.epoch_cursor = 0
            state.epoch_perm_seed = None
        if out is not None:
            save_checkpoint(state, out / "ckpt_final.json", config)
    finally:
        if writer is not None:
            writer.close()
    return state


# ---------------------------------------------------------------------------
# checkpoints


def _pack_arrays(arrays: dict[str, np.ndarray]) -> dict:
    return {
        k: {"shape": list(v.shape), "values": v.reshape(-1).tolist()}
        for k, v in arrays.items()
    }


def _unpack_arrays(payload: dict, what: str) -> dict[str, np.ndarray]:
    out = {}
    for k, item in payload.items():
        try:
            arr = np.asarray(item["values"], dtype=np.float64).reshape(item["shape"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointFormatError(f"bad {what} entry {k!r}: {exc}") from exc
        out[k] = arr
    return out


def save_checkpoint(state: TrainState, path, config: TrainConfig) -> None:
    """Versioned JSON snapshot; float64 values survive the round trip bit
    for bit (shortest-repr decimal serialization)."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "step": state.step,
        "params": _pack_arrays(_named_params(state)),
        "opt": {
            "m": _pack_arrays(state.opt_m),
            "v": _pack_arrays(state.opt_v),
            "t": state.step,
        },
        "rng": {
            "master": state.rng.bit_generator.state,
            "epoch": state.epoch,
            "epoch_cursor": state.epoch_cursor,
            "epoch_perm_seed": state.epoch_perm_seed,
        },
    }
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path, expected_config: TrainConfig | None = None):
    """Rebuild ``(state, config)`` from a checkpoint file.

    When ``expected_config`` is given it overrides the stored one and every
    array shape is validated against it, so loading a checkpoint into a
    differently-sized model fails loudly. Errors leave no partial state
    behind.
    """
    p = Path(path)
    if not p.exists():
        raise CheckpointFormatError(f"checkpoint not found: {p}")
    try:
        payload = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(f"{p}: invalid JSON ({exc})") from exc
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointFormatError(
            f"unsupported checkpoint version {payload.get('format_version')!r}"
        )
    try:
        config = TrainConfig.from_dict(payload["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"bad checkpoint config: {exc}") from exc
    if expected_config is not None:
        config = expected_config

    params = _unpack_arrays(payload.get("params", {}), "parameter")
    first_key = (
        "encoder.layers.0.w1" if config.encoder_gnn == "gin" else "encoder.layers.0.w"
    )
    if first_key not in params:
        raise CheckpointFormatError(f"checkpoint is missing {first_key}")
    input_dim = int(params[first_key].shape[0])

    state = init_train_state(config, input_dim)
    try:
        _assign_params(state, params)
        opt = payload["opt"]
        m = _unpack_arrays(opt["m"], "optimizer-m")
        v = _unpack_arrays(opt["v"], "optimizer-v")
        if set(m) != set(params) or set(v) != set(params):
            raise ValueError("optimizer state does not cover the parameters")
        state.opt_m, state.opt_v = m, v
        state.step = int(payload["step"])
        rng_info = payload["rng"]
        state.rng.bit_generator.state = rng_info["master"]
        state.epoch = int(rng_info["epoch"])
        state.epoch_cursor = int(rng_info["epoch_cursor"])
        seed = rng_info["epoch_perm_seed"]
        state.epoch_perm_seed = None if seed is None else int(seed)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"{p}: {exc}") from exc
    return state, config
