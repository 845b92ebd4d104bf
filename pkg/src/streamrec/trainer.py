"""Combined-loss training with dynamic chunk sampling on a synthetic task,
plus the checkpoint format (manifest + flat f64 blob), checkpoint averaging,
the inverse-sqrt warmup schedule, and feature masking augmentation.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numerics as nn
from .ctc import ctc_loss, min_frames_for
from .layers import TrainContext
from .masking import ChunkPolicy, sample_chunk_size
from .model import ModelConfig, TwoPassModel
from .numerics import Tensor


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class SpecAugmentConfig:
    num_freq_masks: int = 2
    freq_width: int = 10
    num_time_masks: int = 2
    time_width: int = 50


@dataclass
class TrainConfig:
    lambda_ctc: float = 0.3
    chunk_policy: ChunkPolicy = field(default_factory=ChunkPolicy.dynamic)
    warmup_steps: int = 500
    peak_scale: float = 1.0
    batch_size: int = 2
    accum_steps: int = 4
    epochs: int = 8
    seed: int = 0
    specaug: SpecAugmentConfig | None = field(default_factory=SpecAugmentConfig)
    dropout: float = 0.1
    label_smoothing: float = 0.1
    keep_best: int = 10

    def __post_init__(self):
        if not 0.0 <= self.lambda_ctc <= 1.0:
            raise ValueError("lambda_ctc must be in [0, 1]")
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be >= 1")


# ---------------------------------------------------------------------------
# schedule / augmentation / optimizer


def lr_schedule(step: int, d_model: int, warmup_steps: int, peak_scale: float = 1.0) -> float:
    """Inverse-sqrt transformer schedule: linear warmup, then step**-0.5 decay."""
    if step < 1:
        raise ValueError("step must be >= 1")
    return peak_scale * d_model ** -0.5 * min(step ** -0.5, step * warmup_steps ** -1.5)


def spec_augment(
    features: np.ndarray,
    config: SpecAugmentConfig | None,
    rng: np.random.Generator,
) -> np.ndarray:
    """Zero random frequency bands and time spans (widths sampled up to the max)."""
    if config is None:
        return features
    out = np.array(features, copy=True)
    frames, dims = out.shape
    for _ in range(config.num_freq_masks):
        width = min(int(rng.integers(0, config.freq_width + 1)), dims)
        if width == 0:
            continue
        start = int(rng.integers(0, dims - width + 1))
        out[:, start : start + width] = 0.0
    for _ in range(config.num_time_masks):
        width = min(int(rng.integers(0, config.time_width + 1)), frames)
        if width == 0:
            continue
        start = int(rng.integers(0, frames - width + 1))
        out[start : start + width, :] = 0.0
    return out


class Adam:
    """Adam with bias correction; gradients are zeroed after each step."""

    def __init__(
        self,
        params: dict[str, Tensor],
        beta1: float = 0.9,
        beta2: float = 0.98,
        eps: float = 1e-9,
    ):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, lr: float, grad_scale: float = 1.0) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad * grad_scale
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            p.data -= lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            p.zero_grad()


# ---------------------------------------------------------------------------
# losses


def label_smoothed_nll(logits: Tensor, targets: Sequence[int], alpha: float) -> Tensor:
    """Cross-entropy with mass ``alpha`` spread over the non-target tokens, summed
    over positions."""
    vocab = logits.shape[-1]
    logp = nn.log_softmax(logits)
    picked = nn.sum_all(nn.pick(logp, list(targets)))
    if alpha <= 0.0:
        return nn.scale(picked, -1.0)
    spread = alpha / (vocab - 1)
    total = nn.sum_all(logp)
    # -( (1-a) * picked + spread * (total - picked) )
    return nn.add(nn.scale(picked, -(1.0 - alpha) + spread), nn.scale(total, -spread))


def combined_loss(
    model: TwoPassModel,
    features: np.ndarray,
    tokens: Sequence[int],
    chunk_size: int,
    lambda_ctc: float,
    label_smoothing: float = 0.0,
    ctx: TrainContext | None = None,
) -> tuple[Tensor, float, float]:
    """lambda * CTC + (1 - lambda) * decoder cross-entropy over the
    chunk-masked encoder output; one backward pass reaches all shared weights.

    Returns (loss, ctc value, decoder value); an infeasible CTC target
    surfaces as +inf so the caller can skip the element.
    """
    tokens = [int(t) for t in tokens]
    states = model.encode(features, chunk_size, ctx)
    loss = None
    ctc_value = 0.0
    aed_value = 0.0
    if lambda_ctc > 0.0:
        l_ctc = ctc_loss(model.ctc_log_probs(states), tokens)
        ctc_value = l_ctc.item()
        loss = nn.scale(l_ctc, lambda_ctc)
    if lambda_ctc < 1.0:
        logits = model.decoder.forward(states, [model.sos] + tokens, ctx)
        l_aed = label_smoothed_nll(logits, tokens + [model.eos], label_smoothing)
        aed_value = l_aed.item()
        term = nn.scale(l_aed, 1.0 - lambda_ctc)
        loss = term if loss is None else nn.add(loss, term)
    return loss, ctc_value, aed_value


# ---------------------------------------------------------------------------
# synthetic task


@dataclass(frozen=True)
class SyntheticTask:
    """Desk-scale data: each payload token owns a fixed random feature
    prototype; an utterance is the prototypes repeated with additive noise.
    Generation is a pure function of (seed, transcript)."""

    vocab: int = 16
    feature_dim: int = 8
    frames_per_token: int = 8
    noise_sigma: float = 0.1
    min_len: int = 3
    max_len: int = 12
    seed: int = 0

    @property
    def vocab_size(self) -> int:
        return self.vocab + 2  # blank + payload + shared sos/eos

    def prototypes(self) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0xB10B]))
        return rng.standard_normal((self.vocab, self.feature_dim))

    def features_for(self, tokens: Sequence[int]) -> np.ndarray:
        tokens = [int(t) for t in tokens]
        if any(t < 1 or t > self.vocab for t in tokens):
            raise ValueError("token outside payload vocabulary")
        proto = self.prototypes()
        clean = np.repeat(proto[[t - 1 for t in tokens]], self.frames_per_token, axis=0)
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, len(tokens), *tokens]))
        return clean + self.noise_sigma * rng.standard_normal(clean.shape)

    def sample_transcript(self, rng: np.random.Generator) -> list[int]:
        length = int(rng.integers(self.min_len, self.max_len + 1))
        return [int(t) for t in rng.integers(1, self.vocab + 1, size=length)]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticTask":
        return cls(**d)


@dataclass
class Utterance:
    utt_id: str
    tokens: list[int]
    features: np.ndarray


def make_dataset(task: SyntheticTask, count: int, split_seed: int, prefix: str = "utt") -> list[Utterance]:
    rng = np.random.default_rng(np.random.SeedSequence([task.seed, split_seed]))
    utts = []
    for i in range(count):
        tokens = task.sample_transcript(rng)
        utts.append(Utterance(f"{prefix}-{i:05d}", tokens, task.features_for(tokens)))
    return utts


def write_dataset(path: str | Path, task: SyntheticTask, utts: Sequence[Utterance], sidecar: bool = False) -> None:
    """One line per utterance (id then transcript tokens) under a header that
    carries the generator so features can be rebuilt from the seed.  With
    ``sidecar=True`` the exact feature matrices go to ``<path>.feats.npz``."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"#task {json.dumps(task.to_dict(), sort_keys=True)}\n")
        for utt in utts:
            fh.write(f"{utt.utt_id} {' '.join(str(t) for t in utt.tokens)}\n")
    if sidecar:
        np.savez(str(path) + ".feats.npz", **{u.utt_id: u.features for u in utts})


def read_dataset(path: str | Path) -> tuple[SyntheticTask, list[Utterance]]:
    """Rebuild utterances from a dataset file, preferring the sidecar features."""
    path = Path(path)
    task = None
    rows: list[tuple[str, list[int]]] = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#task "):
            task = SyntheticTask.from_dict(json.loads(line[len("#task "):]))
            continue
        parts = line.split()
        rows.append((parts[0], [int(t) for t in parts[1:]]))
    if task is None:
        raise ValueError(f"{path} has no #task header")
    sidecar = Path(str(path) + ".feats.npz")
    feats = dict(np.load(sidecar)) if sidecar.exists() else None
    utts = []
    for utt_id, tokens in rows:
        if feats is not None and utt_id in feats:
            features = np.asarray(feats[utt_id], dtype=np.float64)
        else:
            features = task.features_for(tokens)
        utts.append(Utterance(utt_id, tokens, features))
    return task, utts


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = b"TPR1CKPT"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    config: dict
    params: dict[str, np.ndarray]
    step: int = 0
    dev_loss: float | None = None
    format_version: int = CHECKPOINT_VERSION


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Manifest (JSON) plus one blob of little-endian f64, bit-exact round trip."""
    names = sorted(ckpt.params)
    entries = []
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(ckpt.params[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    manifest = json.dumps(
        {
            "format_version": ckpt.format_version,
            "config": ckpt.config,
            "step": ckpt.step,
            "dev_loss": ckpt.dev_loss,
            "params": entries,
        },
        sort_keys=True,
    ).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    n = struct.unpack("<Q", raw[8:16])[0]
    manifest = json.loads(raw[16 : 16 + n].decode("utf-8"))
    blob = raw[16 + n :]
    params = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=start).reshape(shape)
        params[entry["name"]] = arr.astype(np.float64).copy()
    return Checkpoint(
        config=manifest["config"],
        params=params,
        step=manifest["step"],
        dev_loss=manifest["dev_loss"],
        format_version=manifest["format_version"],
    )


def _average(checkpoints: Sequence[Checkpoint]) -> Checkpoint:
    first = checkpoints[0]
    names = sorted(first.params)
    for other in checkpoints[1:]:
        if other.config != first.config or sorted(other.params) != names:
            raise ValueError("incompatible checkpoints")
        for name in names:
            if other.params[name].shape != first.params[name].shape:
                raise ValueError("incompatible checkpoints")
    k = len(checkpoints)
    averaged = {}
    for name in names:
        stack = np.stack([c.params[name] for c in checkpoints])
        # canonical per-element summation order makes the mean exactly
        # permutation-invariant
        stack.sort(axis=0)
        averaged[name] = np.add.reduce(stack, axis=0) / k
    return Checkpoint(config=first.config, params=averaged, step=max(c.step for c in checkpoints))


def average_checkpoints(paths: Sequence[str | Path]) -> Checkpoint:
    """Elementwise mean of every parameter across the listed checkpoint files."""
    if not paths:
        raise ValueError("no checkpoints to average")
    return _average([load_checkpoint(p) for p in paths])


def checkpoint_from_model(model: TwoPassModel, step: int = 0, dev_loss: float | None = None) -> Checkpoint:
    return Checkpoint(
        config=model.config.to_dict(),
        params={name: p.data.copy() for name, p in model.parameters().items()},
        step=step,
        dev_loss=dev_loss,
    )


def model_from_checkpoint(ckpt: Checkpoint) -> TwoPassModel:
    model = TwoPassModel(ModelConfig.from_dict(ckpt.config))
    model.load_parameters(ckpt.params)
    return model


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    final: Checkpoint
    metrics: list[dict]
    epoch_records: list[dict]
    skipped: int


def evaluate_dev_loss(model: TwoPassModel, utts: Sequence[Utterance], cfg: TrainConfig) -> float:
    """Mean combined loss over the dev set, full-context, no dropout/augment."""
    total = 0.0
    with nn.no_grad():
        for utt in utts:
            frames = model.encoder.subsample(utt.features)
            loss, _, _ = combined_loss(
                model, utt.features, utt.tokens, frames.shape[0],
                cfg.lambda_ctc, cfg.label_smoothing,
            )
            total += loss.item()
    return total / max(1, len(utts))


def train(
    model_config: ModelConfig,
    train_utts: Sequence[Utterance],
    dev_utts: Sequence[Utterance],
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
    log: Callable[[str], None] | None = None,
) -> TrainResult:
    """Train from scratch with per-batch chunk sampling and grad accumulation.

    A metrics record is emitted per batch ("step"); the optimizer applies
    every ``accum_steps`` batches with the warmup schedule indexed by update
    count.  Deterministic for a fixed seed and config.
    """
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    rng_init, rng_order, rng_chunk, rng_model = (np.random.default_rng(s) for s in seeds)
    model = TwoPassModel(model_config, rng_init)
    params = model.parameters()
    opt = Adam(params)

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    metrics: list[dict] = []
    epoch_records: list[dict] = []
    kept: list[tuple[float, Checkpoint, Path | None]] = []
    skipped = 0
    step = 0
    updates = 0
    pending = 0

    def flush(scale_count: int) -> None:
        nonlocal updates, pending
        if scale_count == 0:
            return
        updates += 1
        lr = lr_schedule(updates, model_config.d_model, cfg.warmup_steps, cfg.peak_scale)
        opt.step(lr, grad_scale=1.0 / scale_count)
        pending = 0

    for epoch in range(1, cfg.epochs + 1):
        order = rng_order.permutation(len(train_utts))
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_utts[i] for i in order[start : start + cfg.batch_size]]
            sub_lens = [model.encoder.cfg.subsampled_length(u.features.shape[0]) for u in batch]
            u, v = rng_chunk.random(), rng_chunk.random()
            chunk = sample_chunk_size(max(sub_lens), cfg.chunk_policy, u, v)

            ctx = TrainContext(cfg.dropout, rng_model) if cfg.dropout > 0.0 else None
            batch_loss = batch_ctc = batch_aed = 0.0
            used = 0
            for utt, sub_len in zip(batch, sub_lens):
                if cfg.lambda_ctc > 0.0 and sub_len < min_frames_for(utt.tokens):
                    skipped += 1
                    continue
                feats = spec_augment(utt.features, cfg.specaug, rng_model)
                loss, ctc_val, aed_val = combined_loss(
                    model, feats, utt.tokens, chunk,
                    cfg.lambda_ctc, cfg.label_smoothing, ctx,
                )
                value = loss.item()
                if not math.isfinite(value):
                    raise RuntimeError(
                        f"non-finite loss at epoch {epoch} step {step + 1} (chunk {chunk})"
                    )
                loss.backward(np.asarray(1.0 / len(batch)))
                batch_loss += value / len(batch)
                batch_ctc += ctc_val / len(batch)
                batch_aed += aed_val / len(batch)
                used += 1

            step += 1
            pending += 1
            lr_next = lr_schedule(updates + 1, model_config.d_model, cfg.warmup_steps, cfg.peak_scale)
            metrics.append(
                {
                    "step": step,
                    "loss": batch_loss,
                    "ctc_loss": batch_ctc,
                    "aed_loss": batch_aed,
                    "chunk_size": chunk,
                    "lr": lr_next,
                }
            )
            if used and pending >= cfg.accum_steps:
                flush(pending)
        flush(pending)

        dev_loss = evaluate_dev_loss(model, dev_utts, cfg)
        ckpt = checkpoint_from_model(model, step=updates, dev_loss=dev_loss)
        ckpt_path = None
        if out_path is not None:
            ckpt_path = out_path / f"epoch-{epoch:03d}.ckpt"
            save_checkpoint(ckpt, ckpt_path)
        kept.append((dev_loss, ckpt, ckpt_path))
        epoch_records.append({"epoch": epoch, "dev_loss": dev_loss, "path": str(ckpt_path) if ckpt_path else None})
        if log:
            log(f"epoch {epoch}: dev_loss={dev_loss:.4f} chunk_policy={cfg.chunk_policy.mode}")

    kept.sort(key=lambda item: item[0])
    best = kept[: cfg.keep_best]
    final = _average([c for _, c, _ in best])
    final.step = updates
    final.dev_loss = best[0][0]
    if out_path is not None:
        save_checkpoint(final, out_path / "final.ckpt")
        with (out_path / "metrics.jsonl").open("w") as fh:
            for record in metrics:
                fh.write(json.dumps(record) + "\n")
    return TrainResult(final=final, metrics=metrics, epoch_records=epoch_records, skipped=skipped)
