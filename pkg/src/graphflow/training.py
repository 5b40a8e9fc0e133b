"""Training loop with permutation schedules, modulated encodings, and
periodic sample-and-evaluate passes.

The permutation schedule relabels the stored training set (persistently, not
per batch) whenever it fires; the cadence is either never, every chi epochs,
or driven by the cumulative integral of a time-dependent frequency 1/chi(t)
(step, linear ramp, or cosine-eased smooth ramp families).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .datasets import DatasetSpec, DatasetSplit
from .encodings import EncodingConfig, encoding_dims, encoding_for
from .errors import ConfigurationError
from .evaluation import MetricConfig, avg_ratio, vun
from .flow import NoiseDistribution, RatePolicy, noise_graph, sample_many
from .graphs import Graph, Permutation, apply_permutation, compute_statistics
from .model import (
    TIME_EMBED_DIM,
    AdamState,
    ModelConfig,
    Parameters,
    backward,
    forward_batch,
    init_parameters,
    load_checkpoint,
    optimizer_step,
    record_loss,
    save_checkpoint,
)
from .rng import stream

__all__ = [
    "PermutationSchedule",
    "TrainConfig",
    "TrainResult",
    "schedule_due",
    "permute_training_set",
    "augment",
    "train",
    "sample_graphs",
    "expected_model_config",
    "METRICS_HEADER",
    "code_hash",
]

METRICS_HEADER = "epoch,loss,validity,uniqueness,novelty,vun,avg_ratio,permutation_events"

SCHEDULE_KINDS = ("never", "fixed", "step", "linear_ramp", "smooth_ramp")


@dataclass(frozen=True)
class PermutationSchedule:
    """When to relabel the training graphs.

    never: no events. fixed: every `chi` epochs. step: no events before
    `start_epoch`, then frequency 1/chi_final. linear_ramp / smooth_ramp:
    1/chi(t) rises from 0 at start_epoch to 1/chi_final at end_epoch
    (linearly or cosine-eased) and stays there; events fire whenever the
    cumulative integral of 1/chi crosses an integer.
    """

    kind: str = "never"
    chi: int = 10
    start_epoch: float = 0.0
    end_epoch: float = 0.0
    chi_final: float = 10.0

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigurationError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "fixed" and self.chi < 1:
            raise ConfigurationError("fixed schedule needs chi >= 1")
        if self.kind in ("step", "linear_ramp", "smooth_ramp") and self.chi_final <= 0:
            raise ConfigurationError("chi_final must be positive")
        if self.kind in ("linear_ramp", "smooth_ramp") and self.end_epoch <= self.start_epoch:
            raise ConfigurationError("ramp needs end_epoch > start_epoch")

    def rate(self, epoch: float) -> float:
        """Instantaneous permutation frequency 1/chi at a (continuous) epoch."""
        if self.kind == "never":
            return 0.0
        if self.kind == "fixed":
            return 1.0 / self.chi
        if self.kind == "step":
            return 0.0 if epoch < self.start_epoch else 1.0 / self.chi_final
        span = self.end_epoch - self.start_epoch
        u = min(max((epoch - self.start_epoch) / span, 0.0), 1.0)
        if self.kind == "linear_ramp":
            shape = u
        else:
            shape = (1.0 - math.cos(math.pi * u)) / 2.0
        return shape / self.chi_final

    def cumulative(self, epoch: float) -> float:
        """Exact integral of the frequency over [0, epoch]."""
        if self.kind in ("never", "fixed"):
            return 0.0 if self.kind == "never" else epoch / self.chi
        if self.kind == "step":
            return max(0.0, epoch - self.start_epoch) / self.chi_final
        span = self.end_epoch - self.start_epoch
        if epoch <= self.start_epoch:
            return 0.0
        u = min((epoch - self.start_epoch) / span, 1.0)
        if self.kind == "linear_ramp":
            ramp_part = span * u * u / 2.0
        else:
            ramp_part = span * (u / 2.0 - math.sin(math.pi * u) / (2.0 * math.pi))
        tail = max(0.0, epoch - self.end_epoch)
        return (ramp_part + tail) / self.chi_final

    def label(self) -> str:
        if self.kind == "never":
            return "never"
        if self.kind == "fixed":
            return f"chi{self.chi}"
        if self.kind == "step":
            return f"step@{self.start_epoch:g}:chi{self.chi_final:g}"
        tag = "lin" if self.kind == "linear_ramp" else "smooth"
        return f"{tag}@{self.start_epoch:g}-{self.end_epoch:g}:chi{self.chi_final:g}"

    def to_json(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "fixed":
            out["chi"] = self.chi
        elif self.kind == "step":
            out.update(start_epoch=self.start_epoch, chi_final=self.chi_final)
        elif self.kind in ("linear_ramp", "smooth_ramp"):
            out.update(start_epoch=self.start_epoch, end_epoch=self.end_epoch, chi_final=self.chi_final)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "PermutationSchedule":
        kind = obj["kind"]
        return cls(
            kind=kind,
            chi=int(obj.get("chi", 10)),
            start_epoch=float(obj.get("start_epoch", 0.0)),
            end_epoch=float(obj.get("end_epoch", 0.0)),
            chi_final=float(obj.get("chi_final", 10.0)),
        )


def schedule_due(epoch: int, schedule: PermutationSchedule) -> bool:
    """Whether a permutation event fires at this (1-based) epoch."""
    if epoch < 1:
        return False
    if schedule.kind == "never":
        return False
    if schedule.kind == "fixed":
        return epoch % schedule.chi == 0
    return math.floor(schedule.cumulative(epoch)) > math.floor(schedule.cumulative(epoch - 1))


def permute_training_set(data: list[Graph], rng: np.random.Generator) -> list[Graph]:
    """Fresh uniform relabeling of every graph; isomorphism classes unchanged."""
    return [apply_permutation(g, Permutation.random(g.num_nodes, rng)) for g in data]


def augment(data: list[Graph], factor: int, rng: np.random.Generator) -> list[Graph]:
    """Originals plus (factor - 1) independently permuted copies of each."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    out = list(data)
    for _ in range(factor - 1):
        out.extend(permute_training_set(data, rng))
    return out


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 8
    lr: float = 1e-3
    edge_loss_weight: float = 5.0
    encoding: EncodingConfig = field(default_factory=EncodingConfig)
    schedule: PermutationSchedule = field(default_factory=PermutationSchedule)
    augmentation_factor: int = 1
    eval_every: int = 50
    samples_per_eval: int = 32
    seed: int = 0
    policy: RatePolicy = field(default_factory=RatePolicy)
    noise: str = "marginal"

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.batch_size < 1 or self.eval_every < 1 or self.samples_per_eval < 1:
            raise ConfigurationError("batch_size, eval_every, samples_per_eval must be >= 1")
        if self.augmentation_factor < 1:
            raise ConfigurationError("augmentation_factor must be >= 1")
        if self.lr <= 0 or self.edge_loss_weight <= 0:
            raise ConfigurationError("lr and edge_loss_weight must be positive")
        # eval_every <= epochs is required for nonzero-length runs only
        if self.epochs > 0 and self.eval_every > self.epochs:
            raise ConfigurationError("eval_every must be <= epochs")
        if self.noise not in ("marginal", "uniform"):
            raise ConfigurationError("noise must be 'marginal' or 'uniform'")

    def to_json(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "edge_loss_weight": self.edge_loss_weight,
            "encoding": self.encoding.to_json(),
            "schedule": self.schedule.to_json(),
            "augmentation_factor": self.augmentation_factor,
            "eval_every": self.eval_every,
            "samples_per_eval": self.samples_per_eval,
            "seed": self.seed,
            "policy": self.policy.to_json(),
            "noise": self.noise,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        kw = dict(obj)
        kw["encoding"] = EncodingConfig.from_json(obj.get("encoding", {"kind": "rrwp"}))
        kw["schedule"] = PermutationSchedule.from_json(obj.get("schedule", {"kind": "never"}))
        kw["policy"] = RatePolicy.from_json(obj.get("policy", {}))
        return cls(**kw)


@dataclass
class TrainResult:
    params: Parameters
    model_cfg: ModelConfig
    metrics: list[dict]
    out_dir: Path
    csv_path: Path
    manifest_path: Path


def code_hash() -> str:
    """Git-style blob hash of the tool version string."""
    content = __version__.encode()
    return hashlib.sha1(b"blob %d\x00" % len(content) + content).hexdigest()


def _format_row(row: dict) -> str:
    def fmt(x):
        if isinstance(x, int):
            return str(x)
        return f"{x:.10g}"

    return ",".join(
        fmt(row[k])
        for k in ("epoch", "loss", "validity", "uniqueness", "novelty", "vun", "avg_ratio", "permutation_events")
    )


def _size_histogram(graphs: list[Graph]) -> np.ndarray:
    return np.array([g.num_nodes for g in graphs], dtype=np.int64)


def expected_model_config(run: TrainConfig, num_node_classes: int, num_edge_classes: int,
                          hidden_dim: int = 64, num_layers: int = 3, num_heads: int = 4) -> ModelConfig:
    node_dim, pair_dim = encoding_dims(run.encoding)
    return ModelConfig(
        hidden_dim=hidden_dim,
        num_layers=num_layers,
        num_heads=num_heads,
        node_in_dim=num_node_classes + node_dim + TIME_EMBED_DIM,
        edge_in_dim=num_edge_classes + pair_dim,
        num_node_classes=num_node_classes,
        num_edge_classes=num_edge_classes,
    )


def _check_dims(run: TrainConfig, model_cfg: ModelConfig) -> None:
    want = expected_model_config(
        run, model_cfg.num_node_classes, model_cfg.num_edge_classes,
        model_cfg.hidden_dim, model_cfg.num_layers, model_cfg.num_heads,
    )
    if want.node_in_dim != model_cfg.node_in_dim or want.edge_in_dim != model_cfg.edge_in_dim:
        raise ConfigurationError(
            f"model input widths ({model_cfg.node_in_dim}, {model_cfg.edge_in_dim}) do not match "
            f"the encoding ({want.node_in_dim}, {want.edge_in_dim})"
        )


def sample_graphs(
    params: Parameters,
    model_cfg: ModelConfig,
    enc_cfg: EncodingConfig,
    policy: RatePolicy,
    noise: NoiseDistribution,
    sizes,
    seed: int,
    tag: str = "sample",
) -> list[Graph]:
    """Sample len(sizes) graphs from the model, batched per Euler step.

    Per-graph randomness comes from streams (seed, tag, i), so the result is
    independent of how the batch is assembled.
    """
    enc_rng = stream(seed, tag + "-cov")
    rngs = [stream(seed, tag, i) for i in range(len(sizes))]

    def model_batch(graphs, ts):
        encs = [encoding_for(g, enc_cfg, enc_rng) for g in graphs]
        preds, _ = forward_batch(graphs, ts, encs, params, model_cfg)
        return preds

    return sample_many(model_batch, [int(s) for s in sizes], noise, policy, rngs)


def train(
    run: TrainConfig,
    data: DatasetSplit,
    model_cfg: ModelConfig,
    out_dir,
    dataset_spec: DatasetSpec | None = None,
    metric_cfg: MetricConfig | None = None,
    resume: bool = False,
    dataset_dir: str | None = None,
    log=None,
) -> TrainResult:
    """Run the training loop and emit metrics CSV, checkpoints, and manifest.

    Per epoch: fire the permutation schedule if due, then for every batch
    draw one t per graph, corrupt it, build encodings on the corrupted
    structure, and take an optimizer step on the cross-entropy. Every
    eval_every epochs, sample graphs (node counts from the training size
    distribution), score them, and append a metrics row.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _check_dims(run, model_cfg)
    if run.epochs >= run.eval_every and dataset_spec is None:
        raise ConfigurationError("dataset_spec is required once evaluation passes run")
    metric_cfg = metric_cfg or MetricConfig()
    seed = run.seed

    x_cls, e_cls = model_cfg.num_node_classes, model_cfg.num_edge_classes
    if run.noise == "marginal":
        noise = NoiseDistribution.marginal(data.train, x_cls, e_cls)
    else:
        noise = NoiseDistribution.uniform(x_cls, e_cls)

    train_set = augment(list(data.train), run.augmentation_factor, stream(seed, "augment"))
    size_pool = _size_histogram(data.train)

    csv_path = out_dir / "metrics.csv"
    manifest_path = out_dir / "manifest.json"

    params = init_parameters(model_cfg, stream(seed, "init"))
    adam = AdamState.zeros(params.size)
    start_epoch = 1
    perm_events = 0
    metrics_rows: list[dict] = []

    state_path = out_dir / "trainer_state.npz"
    if resume and state_path.exists():
        saved = np.load(state_path)
        last_epoch = int(saved["epoch"])
        ckpt = out_dir / f"checkpoint_{last_epoch:06d}.bin"
        params, loaded_cfg, _ = load_checkpoint(ckpt)
        if loaded_cfg != model_cfg:
            raise ConfigurationError("checkpoint model config does not match the run config")
        adam = AdamState(saved["adam_m"], saved["adam_v"], int(saved["adam_step"]))
        start_epoch = last_epoch + 1
        # replay permutation events so the training-set state matches
        for e in range(1, last_epoch + 1):
            if schedule_due(e, run.schedule):
                train_set = permute_training_set(train_set, stream(seed, "permute", e))
                perm_events += 1
    else:
        with open(csv_path, "w") as fh:
            fh.write(METRICS_HEADER + "\n")

    precomputed = {
        "train": [compute_statistics(g) for g in data.train],
        "test": [compute_statistics(g) for g in data.test],
    }

    n_data = len(train_set)
    for epoch in range(start_epoch, run.epochs + 1):
        if schedule_due(epoch, run.schedule):
            train_set = permute_training_set(train_set, stream(seed, "permute", epoch))
            perm_events += 1

        rng_e = stream(seed, "epoch", epoch)
        order = rng_e.permutation(n_data)
        loss_sum = 0.0
        n_batches = 0
        for lo in range(0, n_data, run.batch_size):
            chunk = order[lo : lo + run.batch_size]
            clean = [train_set[i] for i in chunk]
            ts = rng_e.uniform(0.0, 1.0, size=len(clean)).tolist()
            noisy = [noise_graph(g, t, noise, rng_e) for g, t in zip(clean, ts)]
            encs = [encoding_for(g, run.encoding, rng_e) for g in noisy]
            _, tape = forward_batch(noisy, ts, encs, params, model_cfg, record=True)
            value = record_loss(tape, clean, run.edge_loss_weight)
            if not math.isfinite(value):
                save_checkpoint(params, model_cfg, out_dir / f"diagnostic_{epoch:06d}.bin",
                                extra={"epoch": epoch, "reason": "non-finite loss"})
                raise RuntimeError(f"non-finite loss at epoch {epoch}; diagnostic checkpoint written")
            grads = backward(tape)
            optimizer_step(params, grads, adam, run.lr)
            loss_sum += value
            n_batches += 1

        if epoch % run.eval_every == 0:
            sizes = stream(seed, "evalsizes", epoch).choice(size_pool, size=run.samples_per_eval)
            samples = sample_graphs(params, model_cfg, run.encoding, run.policy, noise,
                                    sizes, seed, f"sample{epoch}")
            report = vun(samples, list(data.train), dataset_spec, metric_cfg)
            ratio = avg_ratio(samples, list(data.train), list(data.test), metric_cfg, precomputed)
            row = {
                "epoch": epoch,
                "loss": loss_sum / max(n_batches, 1),
                "validity": report.validity,
                "uniqueness": report.uniqueness,
                "novelty": report.novelty,
                "vun": report.vun,
                "avg_ratio": ratio.avg_ratio,
                "permutation_events": perm_events,
            }
            metrics_rows.append(row)
            with open(csv_path, "a") as fh:
                fh.write(_format_row(row) + "\n")
            extra = {
                "epoch": epoch,
                "encoding": run.encoding.to_json(),
                "noise": {"node": noise.node_probs.tolist(), "edge": noise.edge_probs.tolist()},
                "family": dataset_spec.to_json() if dataset_spec else None,
            }
            save_checkpoint(params, model_cfg, out_dir / f"checkpoint_{epoch:06d}.bin", extra=extra)
            np.savez(state_path, epoch=epoch, adam_m=adam.m, adam_v=adam.v, adam_step=adam.step)
            if log:
                log(f"epoch {epoch}: loss {row['loss']:.4f} V {row['validity']:.3f} "
                    f"U {row['uniqueness']:.3f} N {row['novelty']:.3f} vun {row['vun']:.3f}")

    manifest = {
        "kind": "train-manifest",
        "tool_version": __version__,
        "code_hash": code_hash(),
        "seed": seed,
        "config": {
            "train": run.to_json(),
            "model": model_cfg.to_json(),
            "dataset": dataset_spec.to_json() if dataset_spec else None,
            "dataset_dir": dataset_dir,
            "metrics": metric_cfg.to_json(),
        },
        "outputs": {
            "metrics_csv": csv_path.name,
            "checkpoints": sorted(p.name for p in out_dir.glob("checkpoint_*.bin")),
        },
    }
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")

    return TrainResult(params, model_cfg, metrics_rows, out_dir, csv_path, manifest_path)
