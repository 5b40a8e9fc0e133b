"""Posterior estimator: a small pairwise-attention graph transformer in numpy.

The network maps a noisy graph plus positional encodings and a time embedding
to factorized class distributions over nodes and edges. Attention logits are
additively modulated by a learned projection of the pair stream, and the pair
stream is updated from projected node pairs each layer; edge logits are
symmetrized before the softmax, so edge outputs are symmetric by construction.

Everything runs in float64 with a hand-rolled reverse-mode tape; gradients
are validated against central finite differences in the test suite. Batches
are padded to the largest graph and masked, which keeps the matmuls large
enough for BLAS to be the bottleneck.
"""

from __future__ import annotations

import hashlib
import json
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .encodings import EncodingMatrix
from .errors import CheckpointError, ConfigurationError
from .flow import PosteriorPrediction
from .graphs import Graph

__all__ = [
    "ModelConfig",
    "Parameters",
    "AdamState",
    "Tape",
    "init_parameters",
    "forward",
    "forward_batch",
    "record_loss",
    "backward",
    "optimizer_step",
    "save_checkpoint",
    "load_checkpoint",
    "time_embedding",
    "config_for",
    "TIME_EMBED_DIM",
]

TIME_EMBED_DIM = 8
LN_EPS = 1e-8
NEG = -1e30


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters and input/output widths."""

    hidden_dim: int = 64
    num_layers: int = 3
    num_heads: int = 4
    node_in_dim: int = 25
    edge_in_dim: int = 2
    num_node_classes: int = 1
    num_edge_classes: int = 2

    def __post_init__(self):
        dims = (
            self.hidden_dim,
            self.num_layers,
            self.num_heads,
            self.node_in_dim,
            self.edge_in_dim,
            self.num_node_classes,
            self.num_edge_classes,
        )
        if any(d < 1 for d in dims):
            raise ConfigurationError("all model dimensions must be >= 1")
        if self.hidden_dim % self.num_heads != 0:
            raise ConfigurationError("hidden_dim must be divisible by num_heads")

    @property
    def pair_dim(self) -> int:
        return max(8, self.hidden_dim // 4)

    def to_json(self) -> dict:
        return {
            "hidden_dim": self.hidden_dim,
            "num_layers": self.num_layers,
            "num_heads": self.num_heads,
            "node_in_dim": self.node_in_dim,
            "edge_in_dim": self.edge_in_dim,
            "num_node_classes": self.num_node_classes,
            "num_edge_classes": self.num_edge_classes,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**{k: int(v) for k, v in obj.items()})


def config_for(encoding_node_dim: int, encoding_pair_dim: int, num_node_classes: int,
               num_edge_classes: int, hidden_dim: int = 64, num_layers: int = 3,
               num_heads: int = 4) -> ModelConfig:
    """Model config with input widths derived from the encoding and one-hots."""
    return ModelConfig(
        hidden_dim=hidden_dim,
        num_layers=num_layers,
        num_heads=num_heads,
        node_in_dim=num_node_classes + encoding_node_dim + TIME_EMBED_DIM,
        edge_in_dim=num_edge_classes + encoding_pair_dim,
        num_node_classes=num_node_classes,
        num_edge_classes=num_edge_classes,
    )


# ---------------------------------------------------------------------------
# Parameters: one flat float64 vector plus a name -> (offset, shape) layout.
# ---------------------------------------------------------------------------


@dataclass
class Parameters:
    vector: np.ndarray
    layout: dict[str, tuple[int, tuple[int, ...]]]

    def view(self, name: str) -> np.ndarray:
        off, shape = self.layout[name]
        size = int(np.prod(shape))
        return self.vector[off : off + size].reshape(shape)

    @property
    def size(self) -> int:
        return self.vector.size

    def copy(self) -> "Parameters":
        return Parameters(self.vector.copy(), self.layout)


def _layout_for(cfg: ModelConfig) -> dict[str, tuple[int, tuple[int, ...]]]:
    h, dp, heads = cfg.hidden_dim, cfg.pair_dim, cfg.num_heads
    names: list[tuple[str, tuple[int, ...]]] = [
        ("node_in.W", (cfg.node_in_dim, h)),
        ("node_in.b", (h,)),
        ("edge_in.W", (cfg.edge_in_dim, dp)),
        ("edge_in.b", (dp,)),
    ]
    for l in range(cfg.num_layers):
        p = f"layer{l}."
        names += [
            (p + "ln1.g", (h,)), (p + "ln1.b", (h,)),
            (p + "q.W", (h, h)), (p + "q.b", (h,)),
            (p + "k.W", (h, h)), (p + "k.b", (h,)),
            (p + "v.W", (h, h)), (p + "v.b", (h,)),
            (p + "lnp.g", (dp,)), (p + "lnp.b", (dp,)),
            (p + "bias.W", (dp, heads)), (p + "bias.b", (heads,)),
            (p + "o.W", (h, h)), (p + "o.b", (h,)),
            (p + "ln2.g", (h,)), (p + "ln2.b", (h,)),
            (p + "mlp1.W", (h, 2 * h)), (p + "mlp1.b", (2 * h,)),
            (p + "mlp2.W", (2 * h, h)), (p + "mlp2.b", (h,)),
            (p + "ln3.g", (h,)), (p + "ln3.b", (h,)),
            (p + "pa.W", (h, dp)), (p + "pa.b", (dp,)),
            (p + "pb.W", (h, dp)), (p + "pb.b", (dp,)),
            (p + "pe.W", (dp, dp)), (p + "pe.b", (dp,)),
            (p + "po.W", (dp, dp)), (p + "po.b", (dp,)),
        ]
    names += [
        ("lno.g", (h,)), ("lno.b", (h,)),
        ("node_out.W", (h, cfg.num_node_classes)), ("node_out.b", (cfg.num_node_classes,)),
        ("lnpo.g", (dp,)), ("lnpo.b", (dp,)),
        ("edge_out.W", (dp, cfg.num_edge_classes)), ("edge_out.b", (cfg.num_edge_classes,)),
    ]
    layout = {}
    off = 0
    for name, shape in names:
        layout[name] = (off, shape)
        off += int(np.prod(shape))
    return layout


def init_parameters(cfg: ModelConfig, rng: np.random.Generator) -> Parameters:
    """Glorot-uniform weights, zero biases, unit layernorm gains."""
    layout = _layout_for(cfg)
    total = sum(int(np.prod(shape)) for _, shape in layout.values())
    params = Parameters(np.zeros(total, dtype=np.float64), layout)
    for name, (off, shape) in layout.items():
        view = params.view(name)
        if name.endswith(".W"):
            fan_in, fan_out = shape[0], shape[1]
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            view[...] = rng.uniform(-bound, bound, size=shape)
        elif name.endswith(".g"):
            view[...] = 1.0
        # biases and layernorm shifts stay zero
    return params


# ---------------------------------------------------------------------------
# Primitive ops (forward + backward pieces)
# ---------------------------------------------------------------------------


def _layernorm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _layernorm_bwd(dy: np.ndarray, cache, g: np.ndarray):
    xhat, inv = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def _linear_bwd(x: np.ndarray, dy: np.ndarray, w: np.ndarray):
    fin, fout = w.shape
    x2 = x.reshape(-1, fin)
    dy2 = dy.reshape(-1, fout)
    dw = x2.T @ dy2
    db = dy2.sum(axis=0)
    dx = (dy2 @ w.T).reshape(x.shape)
    return dx, dw, db


def time_embedding(t: float) -> np.ndarray:
    """Sin/cos features of t at doubling frequencies on [0, 1]."""
    freqs = np.pi * 2.0 ** np.arange(TIME_EMBED_DIM // 2)
    out = np.empty(TIME_EMBED_DIM)
    out[0::2] = np.sin(freqs * t)
    out[1::2] = np.cos(freqs * t)
    return out


def _softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _build_inputs(graphs: list[Graph], ts: list[float], encs: list[EncodingMatrix], cfg: ModelConfig):
    bsz = len(graphs)
    m = max(g.num_nodes for g in graphs)
    xn = np.zeros((bsz, m, cfg.node_in_dim))
    xe = np.zeros((bsz, m, m, cfg.edge_in_dim))
    mask = np.zeros((bsz, m))
    x_cls, e_cls = cfg.num_node_classes, cfg.num_edge_classes
    for b, (g, t, enc) in enumerate(zip(graphs, ts, encs)):
        n = g.num_nodes
        if g.node_labels.max(initial=0) >= x_cls or g.edge_labels.max(initial=0) >= e_cls:
            raise ConfigurationError("graph labels exceed the configured class counts")
        feats = enc.node_features
        if feats.shape[0] != n:
            raise ConfigurationError("encoding row count does not match graph size")
        width = x_cls + feats.shape[1] + TIME_EMBED_DIM
        if width != cfg.node_in_dim:
            raise ConfigurationError(
                f"node input width {width} != configured node_in_dim {cfg.node_in_dim}"
            )
        xn[b, :n, :x_cls] = np.eye(x_cls)[g.node_labels]
        xn[b, :n, x_cls : x_cls + feats.shape[1]] = feats
        xn[b, :n, x_cls + feats.shape[1] :] = time_embedding(t)[None, :]

        pair_width = e_cls + (0 if enc.pair_features is None else enc.pair_features.shape[2])
        if pair_width != cfg.edge_in_dim:
            raise ConfigurationError(
                f"pair input width {pair_width} != configured edge_in_dim {cfg.edge_in_dim}"
            )
        xe[b, :n, :n, :e_cls] = np.eye(e_cls)[g.edge_labels]
        if enc.pair_features is not None:
            xe[b, :n, :n, e_cls:] = enc.pair_features
        mask[b, :n] = 1.0
    return xn, xe, mask


@dataclass
class Tape:
    """Recorded forward state; record_loss attaches output gradients."""

    cfg: ModelConfig
    params: "Parameters"
    graphs: list[Graph]
    xn: np.ndarray
    xe: np.ndarray
    mask: np.ndarray
    pairmask: np.ndarray
    layers: list[dict] = field(default_factory=list)
    final: dict = field(default_factory=dict)
    dnode_logits: np.ndarray | None = None
    dedge_logits: np.ndarray | None = None
    loss_value: float | None = None


def _heads_split(x: np.ndarray, heads: int) -> np.ndarray:
    b, m, h = x.shape
    return x.reshape(b, m, heads, h // heads).transpose(0, 2, 1, 3)


def _heads_merge(x: np.ndarray) -> np.ndarray:
    b, heads, m, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, m, heads * dh)


def forward_batch(
    graphs: list[Graph],
    ts: list[float],
    encs: list[EncodingMatrix],
    params: Parameters,
    cfg: ModelConfig,
    record: bool = False,
):
    """Run the network on a padded batch.

    Returns (predictions, tape); tape is None unless record=True.
    """
    xn, xe, mask = _build_inputs(graphs, ts, encs, cfg)
    bsz, m = mask.shape
    pairmask = mask[:, :, None] * mask[:, None, :]
    heads = cfg.num_heads
    dh = cfg.hidden_dim // heads
    scale = 1.0 / np.sqrt(dh)
    pv = params.view

    tape = Tape(cfg, params, list(graphs), xn, xe, mask, pairmask) if record else None

    h = (xn @ pv("node_in.W") + pv("node_in.b")) * mask[:, :, None]
    p = (xe @ pv("edge_in.W") + pv("edge_in.b")) * pairmask[:, :, :, None]

    attn_mask = np.where(mask[:, None, None, :] > 0, 0.0, NEG)  # (B,1,1,M) over j

    for l in range(cfg.num_layers):
        pre = f"layer{l}."
        rec: dict = {"H_in": h, "P_in": p}

        hn1, ln1c = _layernorm(h, pv(pre + "ln1.g"), pv(pre + "ln1.b"))
        q = _heads_split(hn1 @ pv(pre + "q.W") + pv(pre + "q.b"), heads)
        k = _heads_split(hn1 @ pv(pre + "k.W") + pv(pre + "k.b"), heads)
        v = _heads_split(hn1 @ pv(pre + "v.W") + pv(pre + "v.b"), heads)

        pn, lnpc = _layernorm(p, pv(pre + "lnp.g"), pv(pre + "lnp.b"))
        bias = pn @ pv(pre + "bias.W") + pv(pre + "bias.b")  # (B,M,M,heads)

        logits = q @ k.transpose(0, 1, 3, 2) * scale  # (B,heads,M,M)
        logits += bias.transpose(0, 3, 1, 2)
        logits += attn_mask
        alpha = _softmax(logits, axis=-1)
        ctx = alpha @ v  # (B,heads,M,dh)
        ctx_m = _heads_merge(ctx)
        out = ctx_m @ pv(pre + "o.W") + pv(pre + "o.b")
        h = h + out * mask[:, :, None]

        hn2, ln2c = _layernorm(h, pv(pre + "ln2.g"), pv(pre + "ln2.b"))
        mlp_pre = hn2 @ pv(pre + "mlp1.W") + pv(pre + "mlp1.b")
        mlp_act = np.maximum(mlp_pre, 0.0)
        mlp_out = mlp_act @ pv(pre + "mlp2.W") + pv(pre + "mlp2.b")
        h = h + mlp_out * mask[:, :, None]

        hn3, ln3c = _layernorm(h, pv(pre + "ln3.g"), pv(pre + "ln3.b"))
        an = hn3 @ pv(pre + "pa.W") + pv(pre + "pa.b")
        bn = hn3 @ pv(pre + "pb.W") + pv(pre + "pb.b")
        s_pre = pn @ pv(pre + "pe.W") + an[:, :, None, :] + bn[:, None, :, :] + pv(pre + "pe.b")
        s = np.maximum(s_pre, 0.0)
        p = p + (s @ pv(pre + "po.W") + pv(pre + "po.b")) * pairmask[:, :, :, None]

        if record:
            rec.update(
                ln1=ln1c, hn1=hn1, q=q, k=k, v=v, lnp=lnpc, pn=pn, alpha=alpha,
                ctx_m=ctx_m, ln2=ln2c, hn2=hn2, mlp_pre=mlp_pre, mlp_act=mlp_act,
                ln3=ln3c, hn3=hn3, s_pre=s_pre, s=s,
            )
            tape.layers.append(rec)

    hf, lnoc = _layernorm(h, pv("lno.g"), pv("lno.b"))
    node_logits = hf @ pv("node_out.W") + pv("node_out.b")
    pf, lnpoc = _layernorm(p, pv("lnpo.g"), pv("lnpo.b"))
    raw = pf @ pv("edge_out.W") + pv("edge_out.b")
    edge_logits = (raw + raw.transpose(0, 2, 1, 3)) / 2.0

    node_dists = _softmax(node_logits)
    edge_dists = _softmax(edge_logits)

    if record:
        tape.final.update(lno=lnoc, hf=hf, lnpo=lnpoc, pf=pf,
                          node_dists=node_dists, edge_dists=edge_dists)

    preds = []
    for b, g in enumerate(graphs):
        n = g.num_nodes
        preds.append(
            PosteriorPrediction(
                node_dists=node_dists[b, :n].copy(),
                edge_dists=edge_dists[b, :n, :n].copy(),
            )
        )
    return preds, tape


def forward(g_t: Graph, t: float, enc: EncodingMatrix, params: Parameters, cfg: ModelConfig) -> PosteriorPrediction:
    """Single-graph forward pass."""
    preds, _ = forward_batch([g_t], [t], [enc], params, cfg)
    return preds[0]


def record_loss(tape: Tape, clean: list[Graph], edge_weight: float) -> float:
    """Cross-entropy of the clean graphs under the recorded predictions,
    averaged over the batch; attaches output gradients to the tape."""
    if edge_weight <= 0:
        raise ValueError("edge_weight must be positive")
    node_dists = tape.final["node_dists"]
    edge_dists = tape.final["edge_dists"]
    bsz, m, x_cls = node_dists.shape
    e_cls = edge_dists.shape[-1]
    dnode = np.zeros_like(node_dists)
    dedge = np.zeros_like(edge_dists)
    total = 0.0
    for b, g1 in enumerate(clean):
        n = g1.num_nodes
        if n != tape.graphs[b].num_nodes:
            raise ValueError("clean graph size does not match the recorded batch")
        onehot_n = np.eye(x_cls)[g1.node_labels]
        p_n = node_dists[b, :n]
        total += -np.log(np.maximum((p_n * onehot_n).sum(axis=1), 1e-300)).sum()
        dnode[b, :n] = p_n - onehot_n

        onehot_e = np.eye(e_cls)[g1.edge_labels]
        p_e = edge_dists[b, :n, :n]
        logp = -np.log(np.maximum((p_e * onehot_e).sum(axis=2), 1e-300))
        np.fill_diagonal(logp, 0.0)
        total += edge_weight * logp.sum()
        de = edge_weight * (p_e - onehot_e)
        de[np.arange(n), np.arange(n), :] = 0.0
        dedge[b, :n, :n] = de
    tape.dnode_logits = dnode / bsz
    tape.dedge_logits = dedge / bsz
    tape.loss_value = total / bsz
    return tape.loss_value


def backward(tape: Tape) -> np.ndarray:
    """Gradient of the recorded loss with respect to the flat parameter
    vector (same layout as Parameters)."""
    if tape.dnode_logits is None:
        raise RuntimeError("no loss recorded on this tape; call record_loss first")
    cfg = tape.cfg
    heads = cfg.num_heads
    dh = cfg.hidden_dim // heads
    scale = 1.0 / np.sqrt(dh)
    mask = tape.mask
    pairmask = tape.pairmask

    # accumulate into a flat gradient with the same layout
    grads = Parameters(np.zeros(tape.params.size), tape.params.layout)

    def acc(name, value):
        grads.view(name)[...] += value

    # output heads
    f = tape.final
    dhf, dw, db = _linear_bwd(f["hf"], tape.dnode_logits, _pv(tape, "node_out.W"))
    acc("node_out.W", dw)
    acc("node_out.b", db)
    dH, dg, dbn = _layernorm_bwd(dhf, f["lno"], _pv(tape, "lno.g"))
    acc("lno.g", dg)
    acc("lno.b", dbn)

    # edge head: symmetrization spreads the gradient over both orders
    draw = (tape.dedge_logits + tape.dedge_logits.transpose(0, 2, 1, 3)) / 2.0
    dpf, dw, db = _linear_bwd(f["pf"], draw, _pv(tape, "edge_out.W"))
    acc("edge_out.W", dw)
    acc("edge_out.b", db)
    dpin, dg, dbn = _layernorm_bwd(dpf, f["lnpo"], _pv(tape, "lnpo.g"))
    acc("lnpo.g", dg)
    acc("lnpo.b", dbn)
    dP = dpin

    for l in reversed(range(cfg.num_layers)):
        pre = f"layer{l}."
        rec = tape.layers[l]

        # ---- pair update backward
        dupd = dP * pairmask[:, :, :, None]
        ds, dw, db = _linear_bwd(rec["s"], dupd, _pv(tape, pre + "po.W"))
        acc(pre + "po.W", dw)
        acc(pre + "po.b", db)
        ds_pre = ds * (rec["s_pre"] > 0)
        # s_pre = pn @ pe.W + an_i + bn_j + pe.b
        dpn_upd, dw, db = _linear_bwd(rec["pn"], ds_pre, _pv(tape, pre + "pe.W"))
        acc(pre + "pe.W", dw)
        acc(pre + "pe.b", db)
        dan = ds_pre.sum(axis=2)
        dbn_ = ds_pre.sum(axis=1)
        dhn3_a, dw, db = _linear_bwd(rec["hn3"], dan, _pv(tape, pre + "pa.W"))
        acc(pre + "pa.W", dw)
        acc(pre + "pa.b", db)
        dhn3_b, dw, db = _linear_bwd(rec["hn3"], dbn_, _pv(tape, pre + "pb.W"))
        acc(pre + "pb.W", dw)
        acc(pre + "pb.b", db)
        dhn3 = dhn3_a + dhn3_b
        dx, dg, dbeta = _layernorm_bwd(dhn3, rec["ln3"], _pv(tape, pre + "ln3.g"))
        acc(pre + "ln3.g", dg)
        acc(pre + "ln3.b", dbeta)
        dH = dH + dx

        # ---- node MLP backward
        dmlp_out = dH * mask[:, :, None]
        dact, dw, db = _linear_bwd(rec["mlp_act"], dmlp_out, _pv(tape, pre + "mlp2.W"))
        acc(pre + "mlp2.W", dw)
        acc(pre + "mlp2.b", db)
        dpre_ = dact * (rec["mlp_pre"] > 0)
        dhn2, dw, db = _linear_bwd(rec["hn2"], dpre_, _pv(tape, pre + "mlp1.W"))
        acc(pre + "mlp1.W", dw)
        acc(pre + "mlp1.b", db)
        dx, dg, dbeta = _layernorm_bwd(dhn2, rec["ln2"], _pv(tape, pre + "ln2.g"))
        acc(pre + "ln2.g", dg)
        acc(pre + "ln2.b", dbeta)
        dH = dH + dx

        # ---- attention backward
        dout = dH * mask[:, :, None]
        dctx_m, dw, db = _linear_bwd(rec["ctx_m"], dout, _pv(tape, pre + "o.W"))
        acc(pre + "o.W", dw)
        acc(pre + "o.b", db)
        bsz, m = mask.shape
        dctx = dctx_m.reshape(bsz, m, heads, dh).transpose(0, 2, 1, 3)
        alpha, v = rec["alpha"], rec["v"]
        dalpha = dctx @ v.transpose(0, 1, 3, 2)
        dv = alpha.transpose(0, 1, 3, 2) @ dctx
        dlogits = alpha * (dalpha - (alpha * dalpha).sum(axis=-1, keepdims=True))
        dq = dlogits @ rec["k"] * scale
        dk = dlogits.transpose(0, 1, 3, 2) @ rec["q"] * scale
        dbias = dlogits.transpose(0, 2, 3, 1)  # (B,M,M,heads)
        dpn_bias, dw, db = _linear_bwd(rec["pn"], dbias, _pv(tape, pre + "bias.W"))
        acc(pre + "bias.W", dw)
        acc(pre + "bias.b", db)

        dhn1 = np.zeros_like(rec["hn1"])
        for nm, dval in (("q", dq), ("k", dk), ("v", dv)):
            dmerged = _heads_merge(dval)
            dx, dw, db = _linear_bwd(rec["hn1"], dmerged, _pv(tape, pre + nm + ".W"))
            acc(pre + nm + ".W", dw)
            acc(pre + nm + ".b", db)
            dhn1 += dx
        dx, dg, dbeta = _layernorm_bwd(dhn1, rec["ln1"], _pv(tape, pre + "ln1.g"))
        acc(pre + "ln1.g", dg)
        acc(pre + "ln1.b", dbeta)
        dH = dH + dx

        # ---- pair layernorm backward (bias + update branches)
        dpn = dpn_upd + dpn_bias
        dx, dg, dbeta = _layernorm_bwd(dpn, rec["lnp"], _pv(tape, pre + "lnp.g"))
        acc(pre + "lnp.g", dg)
        acc(pre + "lnp.b", dbeta)
        dP = dP + dx

    # input embeddings
    dh0 = dH * mask[:, :, None]
    _, dw, db = _linear_bwd(tape.xn, dh0, _pv(tape, "node_in.W"))
    acc("node_in.W", dw)
    acc("node_in.b", db)
    dp0 = dP * pairmask[:, :, :, None]
    _, dw, db = _linear_bwd(tape.xe, dp0, _pv(tape, "edge_in.W"))
    acc("edge_in.W", dw)
    acc("edge_in.b", db)

    return grads.vector


def _pv(tape: Tape, name: str) -> np.ndarray:
    return tape.params.view(name)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def optimizer_step(params: Parameters, grads: np.ndarray, state: AdamState, lr: float):
    """In-place Adam update; a non-finite gradient skips the step."""
    if grads.shape != params.vector.shape:
        raise ValueError("gradient shape does not match parameters")
    if not np.all(np.isfinite(grads)):
        warnings.warn("non-finite gradient; optimizer step skipped", RuntimeWarning)
        return params, state
    state.step += 1
    state.m = ADAM_BETA1 * state.m + (1 - ADAM_BETA1) * grads
    state.v = ADAM_BETA2 * state.v + (1 - ADAM_BETA2) * grads * grads
    mhat = state.m / (1 - ADAM_BETA1**state.step)
    vhat = state.v / (1 - ADAM_BETA2**state.step)
    params.vector -= lr * mhat / (np.sqrt(vhat) + ADAM_EPS)
    return params, state


# ---------------------------------------------------------------------------
# Checkpoints: magic, version, JSON header, float64 payload, sha256 trailer.
# ---------------------------------------------------------------------------

_MAGIC = b"GFCP"
_VERSION = 1


def save_checkpoint(params: Parameters, cfg: ModelConfig, path, extra: dict | None = None) -> None:
    header = json.dumps({"model": cfg.to_json(), "extra": extra or {}}, sort_keys=True).encode()
    payload = np.ascontiguousarray(params.vector, dtype="<f8").tobytes()
    body = (
        _MAGIC
        + struct.pack("<II", _VERSION, len(header))
        + header
        + struct.pack("<Q", params.vector.size)
        + payload
    )
    digest = hashlib.sha256(body).digest()
    with open(path, "wb") as fh:
        fh.write(body + digest)


def load_checkpoint(path, expected: ModelConfig | None = None):
    """Returns (params, cfg, extra); raises CheckpointError on corruption and
    ConfigurationError when the embedded class counts contradict `expected`."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from exc
    if len(blob) < 48 or blob[:4] != _MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic or truncated)")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch (corrupt or truncated)")
    version, header_len = struct.unpack("<II", body[4:12])
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header_end = 12 + header_len
    try:
        header = json.loads(body[12:header_end].decode())
        cfg = ModelConfig.from_json(header["model"])
    except (ValueError, KeyError, ConfigurationError) as exc:
        raise CheckpointError(f"invalid checkpoint header: {exc}") from exc
    (count,) = struct.unpack("<Q", body[header_end : header_end + 8])
    payload = body[header_end + 8 :]
    if len(payload) != count * 8:
        raise CheckpointError("checkpoint payload length mismatch")
    vector = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    layout = _layout_for(cfg)
    expected_size = sum(int(np.prod(s)) for _, s in layout.values())
    if vector.size != expected_size:
        raise CheckpointError("parameter count does not match the embedded config")
    if expected is not None and (
        cfg.num_node_classes != expected.num_node_classes
        or cfg.num_edge_classes != expected.num_edge_classes
    ):
        raise ConfigurationError("checkpoint class counts do not match the expected config")
    return Parameters(vector, layout), cfg, header.get("extra", {})
