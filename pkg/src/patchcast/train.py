"""Training loops and checkpoint persistence.

One loop serves all four modes: dual-head self-supervised pretraining
(forecast weighted 0.6, reconstruction 0.4), the two frozen-encoder
fine-tuning variants, and from-scratch target training.  Freezing is
structural — frozen tensors are simply never handed to the optimizer, and
the encoder runs in infer mode so batch-norm running statistics stay put.

Checkpoints are a little-endian binary format: magic ``OMGA``, a version
word, the model config as key=value text, named float32 tensors (parameters
plus batch-norm running statistics), and the training step count.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import TimeSeries, make_batch
from .errors import (
    CheckpointCorruptError,
    CheckpointFormatError,
    CheckpointVersionError,
    ConfigError,
    NumericError,
    TrainingDiverged,
)
from .model import Model, ModelConfig, decode_forecast, decode_reconstruct, encode, init_params
from .numerics import (
    AdamWConfig,
    AdamWState,
    Tape,
    Tensor,
    adamw_step,
    add,
    backward,
    mse,
    scale,
    zero_grads,
)

log = logging.getLogger("patchcast.train")

TARGET_MODES = ("pretrain", "finetune_forecast", "finetune_reconstruct", "target_train")

MAGIC = b"OMGA"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    lr: float = 1e-3
    loss_weight_forecast: float = 0.6
    seed: int = 0
    eval_every: int = 200
    target_mode: str = "pretrain"
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ConfigError("steps, batch_size and eval_every must be positive")
        if self.lr < 0:  # zero is allowed: it must be an exact no-op
            raise ConfigError(f"lr must be non-negative, got {self.lr}")
        if not 0.0 <= self.loss_weight_forecast <= 1.0:
            raise ConfigError(
                f"loss_weight_forecast must be in [0, 1], got {self.loss_weight_forecast}"
            )
        if self.target_mode not in TARGET_MODES:
            raise ConfigError(f"target_mode must be one of {TARGET_MODES}")

    @property
    def loss_weight_reconstruct(self) -> float:
        return 1.0 - self.loss_weight_forecast

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "loss_weight_forecast": self.loss_weight_forecast,
            "seed": self.seed,
            "eval_every": self.eval_every,
            "target_mode": self.target_mode,
            "weight_decay": self.weight_decay,
        }


@dataclass(frozen=True)
class LossRecord:
    step: int
    total: float
    forecast_mse: float
    reconstruct_mse: float


@dataclass
class TrainResult:
    model: Model
    curve: list  # of LossRecord
    snapshots: list  # of (step, {name: ndarray}) for the trainable set


def _snapshot(params: dict, model: Model) -> dict:
    """Copy the trainable tensors plus every running statistic.

    Statistics ride along even when the encoder is frozen (they are then
    constant) so a snapshot is always restorable on its own.
    """
    snap = {name: p.data.copy() for name, p in params.items()}
    for name, st in model.named_running_stats().items():
        snap[name + ".running_mean"] = st.running_mean.copy()
        snap[name + ".running_var"] = st.running_var.copy()
    return snap


def restore_snapshot(model: Model, snapshot: dict) -> None:
    """Write a snapshot back into the matching parameters and statistics."""
    params = model.named_parameters()
    stats = model.named_running_stats()
    for name, values in snapshot.items():
        if name.endswith((".running_mean", ".running_var")):
            base, _, kind = name.rpartition(".running_")
            if base not in stats:
                raise ConfigError(f"snapshot names unknown statistic {name!r}")
            target = stats[base].running_mean if kind == "mean" else stats[base].running_var
            target[...] = values
        elif name in params:
            params[name].data[...] = values
        else:
            raise ConfigError(f"snapshot names unknown parameter {name!r}")


def clone_model(model: Model) -> Model:
    """A structurally fresh model carrying bitwise-identical values."""
    twin = init_params(model.config, dtype=model.dtype)
    for name, p in twin.named_parameters().items():
        p.data[...] = model.named_parameters()[name].data
    src_stats = model.named_running_stats()
    for name, st in twin.named_running_stats().items():
        st.running_mean[...] = src_stats[name].running_mean
        st.running_var[...] = src_stats[name].running_var
    return twin


def _run_loop(
    model: Model,
    pool: Sequence[TimeSeries],
    cfg: TrainConfig,
    trainable: dict,
    encoder_mode: str,
    loss_heads: str,  # "dual" | "forecast" | "reconstruct"
) -> TrainResult:
    mc = model.config
    opt = AdamWState.initial(
        trainable, AdamWConfig(lr=cfg.lr, weight_decay=cfg.weight_decay)
    )
    rng = np.random.default_rng(cfg.seed)
    wf, wr = cfg.loss_weight_forecast, cfg.loss_weight_reconstruct
    curve: list = []
    snapshots: list = []
    last_finite: Optional[dict] = None

    for step in range(cfg.steps):
        batch = make_batch(
            pool, cfg.batch_size, mc.context_length, mc.l_pred, mc.l_patch, rng
        )
        try:
            with Tape() as tape:
                _, z = encode(Tensor(batch.inputs), model, mode=encoder_mode)
                f_loss = mse(decode_forecast(z, model.forecast), Tensor(batch.forecast_targets))
                r_loss = mse(
                    decode_reconstruct(z, model.reconstruct), Tensor(batch.reconstruction_targets)
                )
                if loss_heads == "dual":
                    total = add(scale(f_loss, wf), scale(r_loss, wr))
                elif loss_heads == "forecast":
                    total = f_loss
                else:
                    total = r_loss
                f_v, r_v, t_v = f_loss.item(), r_loss.item(), total.item()
                if not np.isfinite(t_v):
                    raise NumericError(f"non-finite loss at step {step}")
                last_finite = _snapshot(trainable, model)
                backward(tape, total)
        except NumericError as exc:
            # non-finite values anywhere in the step mean the run is lost;
            # hand back the last parameters that still produced a finite loss
            raise TrainingDiverged(
                f"training diverged at step {step}: {exc}",
                step=step,
                last_finite_params=last_finite,
                curve=curve,
            ) from exc
        adamw_step(trainable, opt)
        zero_grads(trainable)
        curve.append(LossRecord(step, t_v, f_v, r_v))
        if (step + 1) % cfg.eval_every == 0 or step == cfg.steps - 1:
            if not snapshots or snapshots[-1][0] != step:
                snapshots.append((step, _snapshot(trainable, model)))
        if (step + 1) % max(1, cfg.steps // 10) == 0:
            log.info("step %d/%d loss %.6f", step + 1, cfg.steps, t_v)
    return TrainResult(model=model, curve=curve, snapshots=snapshots)


def pretrain(
    pool: Sequence[TimeSeries],
    model_config: ModelConfig,
    train_config: TrainConfig,
) -> TrainResult:
    """Dual-head self-supervised pretraining over a series pool."""
    if train_config.target_mode != "pretrain":
        raise ConfigError(f"pretrain called with target_mode={train_config.target_mode!r}")
    model = init_params(model_config)
    return _run_loop(
        model, pool, train_config,
        trainable=model.named_parameters(),
        encoder_mode="train",
        loss_heads="dual",
    )


def _train_segment(series: TimeSeries, mc: ModelConfig) -> TimeSeries:
    # the earliest 80% only; the split itself is owned by the eval module
    from .eval import split_series  # local import: eval builds on this module

    train_seg, _, _ = split_series(series, mc.context_length, mc.l_pred)
    return train_seg


def finetune(
    model: Model,
    target: TimeSeries,
    train_config: TrainConfig,
) -> TrainResult:
    """Train one decoder head on the target's earliest 80%; encoder frozen.

    The encoder runs in infer mode (running statistics untouched) and its
    tensors are excluded from the optimizer, so freezing holds bitwise.
    """
    if train_config.target_mode not in ("finetune_forecast", "finetune_reconstruct"):
        raise ConfigError(
            f"finetune requires a finetune target_mode, got {train_config.target_mode!r}"
        )
    head = "forecast" if train_config.target_mode.endswith("forecast") else "reconstruct"
    decoder = model.forecast if head == "forecast" else model.reconstruct
    trainable = {
        f"dec_{head}.norm.gain": decoder.norm_gain,
        f"dec_{head}.norm.bias": decoder.norm_bias,
        f"dec_{head}.w1": decoder.w1,
        f"dec_{head}.b1": decoder.b1,
        f"dec_{head}.w2": decoder.w2,
        f"dec_{head}.b2": decoder.b2,
    }
    return _run_loop(
        model, [_train_segment(target, model.config)], train_config,
        trainable=trainable,
        encoder_mode="infer",
        loss_heads=head,
    )


def target_train(
    target: TimeSeries,
    model_config: ModelConfig,
    train_config: TrainConfig,
) -> TrainResult:
    """Train a fresh model end-to-end on the target's earliest 80% only."""
    if train_config.target_mode != "target_train":
        raise ConfigError(
            f"target_train requires target_mode='target_train', got {train_config.target_mode!r}"
        )
    model = init_params(model_config)
    return _run_loop(
        model, [_train_segment(target, model.config)], train_config,
        trainable=model.named_parameters(),
        encoder_mode="train",
        loss_heads="dual",
    )


def write_curve_csv(path, curve: Sequence[LossRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,total,forecast_mse,reconstruct_mse\n")
        for rec in curve:
            fh.write(f"{rec.step},{rec.total!r},{rec.forecast_mse!r},{rec.reconstruct_mse!r}\n")


# ---------------------------------------------------------------------------
# checkpoint format


def _checkpoint_tensors(model: Model) -> dict:
    tensors = {name: p.data for name, p in model.named_parameters().items()}
    for name, state in model.named_running_stats().items():
        tensors[f"{name}.running_mean"] = state.running_mean
        tensors[f"{name}.running_var"] = state.running_var
    return tensors


def save_checkpoint(model: Model, path, step: int = 0) -> None:
    """Serialize parameters, running statistics, config, and step count."""
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", FORMAT_VERSION)
    config_block = "".join(
        f"{k}={v}\n" for k, v in model.config.to_dict().items()
    ).encode("utf-8")
    out += struct.pack("<I", len(config_block))
    out += config_block
    tensors = _checkpoint_tensors(model)
    out += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        encoded = name.encode("utf-8")
        out += struct.pack("<H", len(encoded))
        out += encoded
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    out += struct.pack("<Q", step)
    with open(path, "wb") as fh:
        fh.write(bytes(out))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointCorruptError(f"checkpoint truncated while reading {what}")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_checkpoint(path, expect_config: Optional[ModelConfig] = None):
    """Read a checkpoint; returns (model, step).

    Validates magic, version, and that the stored tensors enumerate exactly
    the parameter-and-statistics set the embedded config implies, with
    matching shapes.  ``expect_config`` additionally pins the caller's
    geometry.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf)
    if len(buf) < 8 or bytes(r.take(4, "magic")) != MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic)")
    (version,) = r.unpack("<I", "version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, expected {FORMAT_VERSION}"
        )
    (config_len,) = r.unpack("<I", "config length")
    try:
        config_text = r.take(config_len, "config block").decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointCorruptError(f"config block is not valid UTF-8: {exc}") from exc
    config_dict = {}
    for line in config_text.splitlines():
        line = line.strip()
        if not line:
            continue
        if "=" not in line:
            raise CheckpointCorruptError(f"malformed config line {line!r}")
        key, _, value = line.partition("=")
        config_dict[key] = value
    try:
        config = ModelConfig.from_dict(config_dict)
    except (ConfigError, ValueError) as exc:
        raise CheckpointCorruptError(f"embedded config invalid: {exc}") from exc
    if expect_config is not None and config != expect_config:
        theirs, ours = config.to_dict(), expect_config.to_dict()
        diff = [k for k in ours if theirs.get(k) != ours[k]]
        raise CheckpointCorruptError(
            f"checkpoint config does not match the requested one (differs in {diff})"
        )

    model = init_params(config)
    expected = _checkpoint_tensors(model)
    (count,) = r.unpack("<I", "tensor count")
    if count != len(expected):
        raise CheckpointCorruptError(
            f"checkpoint holds {count} tensors, config implies {len(expected)}"
        )
    seen = set()
    for _ in range(count):
        (name_len,) = r.unpack("<H", "tensor name length")
        name = r.take(name_len, "tensor name").decode("utf-8")
        if name in seen:
            raise CheckpointCorruptError(f"duplicate tensor {name!r}")
        seen.add(name)
        if name not in expected:
            raise CheckpointCorruptError(f"unexpected tensor {name!r}")
        (rank,) = r.unpack("<B", f"rank of {name}")
        shape = tuple(r.unpack(f"<{rank}I", f"dims of {name}")) if rank else ()
        want = expected[name].shape
        if shape != want:
            raise CheckpointCorruptError(
                f"tensor {name!r} has shape {shape}, config implies {want}"
            )
        n_items = int(np.prod(shape, dtype=np.int64)) if rank else 1
        payload = r.take(4 * n_items, f"payload of {name}")
        values = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
        if not np.all(np.isfinite(values)):
            raise CheckpointCorruptError(f"tensor {name!r} holds non-finite values")
        expected[name][...] = values
    (step,) = r.unpack("<Q", "step counter")
    if r.pos != len(buf):
        raise CheckpointCorruptError(
            f"{len(buf) - r.pos} trailing bytes after the step counter"
        )
    return model, step
