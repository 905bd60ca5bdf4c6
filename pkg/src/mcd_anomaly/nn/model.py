"""Encoder-decoder completion network.

The inpainter takes a 2-channel input (intensity image with the hole
zeroed, plus a binary hole mask), downsamples through strided convolutions
and decodes back to a single channel through nearest-neighbor upsampling,
ending in a tanh that saturates into [-1, 1]. Channel dropout can be
injected after eligible stages at inference time to make the output
stochastic; training never uses dropout.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import CheckpointFormatError, ConfigError, UsageError
from ..rng import RandomStream, as_generator
from . import ops

CHECKPOINT_MAGIC = b"PICN"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class StageSpec:
    """One network stage: optional nearest upsample, then conv + nonlinearity."""

    in_ch: int
    out_ch: int
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    upsample: int = 1  # nearest-neighbor factor applied before the conv
    activation: str = "lrelu"  # lrelu | tanh | none
    dropout_eligible: bool = False

    def to_json_dict(self) -> dict:
        return {
            "in_ch": self.in_ch, "out_ch": self.out_ch, "kernel": self.kernel,
            "stride": self.stride, "padding": self.padding, "upsample": self.upsample,
            "activation": self.activation, "dropout_eligible": self.dropout_eligible,
        }


@dataclass
class InpainterModel:
    """Stage descriptors plus their parameter tensors.

    Treated as immutable by inference code; only the training loop mutates
    the parameter arrays, single-writer.
    """

    stages: tuple[StageSpec, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    patch_size: int
    mask_size: int
    leaky_slope: float = 0.2
    _tape: "Tape | None" = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.stages:
            raise ConfigError("model needs at least one stage")
        if self.stages[0].dropout_eligible or self.stages[-1].dropout_eligible:
            raise ConfigError("first and last convolutional stages must not be dropout-eligible")
        if len(self.weights) != len(self.stages) or len(self.biases) != len(self.stages):
            raise ConfigError("parameter list length must match stage count")
        down = 1
        for s in self.stages:
            down = down * s.stride // s.upsample
        if down != 1:
            raise ConfigError("stage strides/upsamples must return output to input resolution")
        if self.patch_size % self.total_downsample() != 0:
            raise ConfigError(
                f"patch size {self.patch_size} not divisible by downsample factor {self.total_downsample()}"
            )

    def total_downsample(self) -> int:
        f = 1
        for s in self.stages:
            f *= s.stride
        return f

    @property
    def dtype(self):
        return self.weights[0].dtype

    def astype(self, dtype) -> "InpainterModel":
        return InpainterModel(
            stages=self.stages,
            weights=[w.astype(dtype) for w in self.weights],
            biases=[b.astype(dtype) for b in self.biases],
            patch_size=self.patch_size,
            mask_size=self.mask_size,
            leaky_slope=self.leaky_slope,
        )

    def parameters_finite(self) -> bool:
        return all(np.isfinite(w).all() for w in self.weights) and all(
            np.isfinite(b).all() for b in self.biases
        )

    def eligible_stage_indices(self) -> list[int]:
        return [i for i, s in enumerate(self.stages) if s.dropout_eligible]

    def encoder_prefix_length(self) -> int:
        """Number of leading stages before the first upsampling stage."""
        for i, s in enumerate(self.stages):
            if s.upsample > 1:
                return i
        return len(self.stages)


@dataclass
class Tape:
    """Intermediates retained by a training forward pass."""

    x: np.ndarray
    stage_inputs: list[np.ndarray]     # input to each stage's conv (post-upsample)
    conv_caches: list[dict]
    pre_act: list[np.ndarray]
    outputs: list[np.ndarray]


def default_stage_plan(in_channels: int = 2, enc_channels: tuple[int, ...] = (16, 32, 64, 64),
                       kernel: int = 3) -> tuple[StageSpec, ...]:
    """Standard desk-scale plan: strided encoder, mirrored upsampling decoder.

    Dropout is allowed on the inner encoder stages and the first decoder
    stage; the first conv, the decoder tail and the output conv stay
    deterministic to avoid degenerate all-noise completions.
    """
    pad = kernel // 2
    chans = list(enc_channels)
    stages: list[StageSpec] = []
    prev = in_channels
    for i, ch in enumerate(chans):
        stages.append(StageSpec(prev, ch, kernel, stride=2, padding=pad,
                                activation="lrelu", dropout_eligible=(i > 0)))
        prev = ch
    dec_out = list(reversed(chans[:-1])) + [1]
    for j, ch in enumerate(dec_out):
        last = j == len(dec_out) - 1
        stages.append(StageSpec(prev, ch, kernel, stride=1, padding=pad, upsample=2,
                                activation="tanh" if last else "lrelu",
                                dropout_eligible=(j == 0)))
        prev = ch
    return tuple(stages)


def build_inpainter(patch_size: int = 64, mask_size: int = 32,
                    enc_channels: tuple[int, ...] = (16, 32, 64, 64), kernel: int = 3,
                    stream: RandomStream | None = None, dtype=np.float32) -> InpainterModel:
    """Construct a freshly initialized model (He-normal weights, zero bias)."""
    if mask_size >= patch_size:
        raise ConfigError(f"mask size {mask_size} must be smaller than patch size {patch_size}")
    if (patch_size - mask_size) % 2 != 0:
        raise ConfigError("patch size minus mask size must be even for a centered hole")
    stages = default_stage_plan(2, enc_channels, kernel)
    gen = (stream or RandomStream(0)).generator()
    weights, biases = [], []
    for s in stages:
        fan_in = s.in_ch * s.kernel * s.kernel
        w = gen.normal(0.0, np.sqrt(2.0 / fan_in), size=(s.out_ch, s.in_ch, s.kernel, s.kernel))
        weights.append(w.astype(dtype))
        biases.append(np.zeros(s.out_ch, dtype=dtype))
    return InpainterModel(stages=stages, weights=weights, biases=biases,
                          patch_size=patch_size, mask_size=mask_size)


def make_dropout_masks(model: InpainterModel, p_drop: float,
                       streams: list[RandomStream]) -> list[np.ndarray]:
    """Per-sample channel masks for a batched stochastic forward.

    Row i of every returned mask is drawn from streams[i] in stage order,
    so a batch of size M reproduces exactly the masks that M independent
    single-sample forwards would draw from the same streams.
    """
    gens = [s.generator() for s in streams]
    masks = []
    for idx in model.eligible_stage_indices():
        c = model.stages[idx].out_ch
        rows = [ops.channel_dropout_mask(1, c, p_drop, g) for g in gens]
        masks.append(np.concatenate(rows, axis=0))
    return masks


def forward(model: InpainterModel, x: np.ndarray, p_drop: float = 0.0, rng=None,
            dropout_masks: list[np.ndarray] | None = None,
            retain_tape: bool = False) -> np.ndarray:
    """Run the network. With p_drop > 0 channel dropout follows each
    eligible stage, fed either by `rng` or by precomputed `dropout_masks`.
    """
    ops.require_tensor4(x, "network input")
    if x.shape[1] != model.stages[0].in_ch:
        raise ConfigError(f"input has {x.shape[1]} channels, model expects {model.stages[0].in_ch}")
    if p_drop > 0.0 and rng is None and dropout_masks is None:
        raise UsageError("stochastic forward needs an rng or precomputed dropout masks")
    gen = as_generator(rng) if (p_drop > 0.0 and dropout_masks is None) else None

    tape = Tape(x=x, stage_inputs=[], conv_caches=[], pre_act=[], outputs=[]) if retain_tape else None
    h = x.astype(model.dtype, copy=False)
    mask_i = 0
    for i, s in enumerate(model.stages):
        if s.upsample > 1:
            h = ops.upsample_nearest(h, s.upsample)
        cache: dict | None = {} if retain_tape else None
        if retain_tape:
            tape.stage_inputs.append(h)
        z = ops.conv2d_forward(h, model.weights[i], model.biases[i], s.stride, s.padding, cache)
        if retain_tape:
            tape.conv_caches.append(cache)
            tape.pre_act.append(z)
        if s.activation == "lrelu":
            h = ops.leaky_relu(z, model.leaky_slope)
        elif s.activation == "tanh":
            h = ops.tanh(z)
        elif s.activation == "none":
            h = z
        else:
            raise ConfigError(f"unknown activation {s.activation!r}")
        if s.dropout_eligible and p_drop > 0.0:
            if dropout_masks is not None:
                m = dropout_masks[mask_i]
                if m.shape != (h.shape[0], h.shape[1]):
                    raise ConfigError(
                        f"dropout mask {mask_i} has shape {m.shape}, expected {(h.shape[0], h.shape[1])}"
                    )
                h = h * m[:, :, None, None].astype(h.dtype)
            else:
                h = ops.channel_dropout(h, p_drop, gen)
            mask_i += 1
        if retain_tape:
            tape.outputs.append(h)
    if retain_tape:
        model._tape = tape
    return h


def inpaint_forward(model: InpainterModel, masked: np.ndarray, p_drop: float = 0.0,
                    rng=None, dropout_masks: list[np.ndarray] | None = None) -> np.ndarray:
    """Complete a masked patch batch; output keeps the full patch extent.

    `masked` is (B, 2, d_p, d_p): hole pixels zeroed in channel 0, the hole
    mask in channel 1. With p_drop = 0 the result is a pure function of
    (model, masked).
    """
    ops.require_tensor4(masked, "masked input")
    if masked.shape[2] != model.patch_size or masked.shape[3] != model.patch_size:
        raise ConfigError(
            f"input spatial size {masked.shape[2]}x{masked.shape[3]} does not match "
            f"model patch size {model.patch_size}"
        )
    return forward(model, masked, p_drop=p_drop, rng=rng, dropout_masks=dropout_masks)


def backward_pass(model: InpainterModel, x: np.ndarray, loss_grad: np.ndarray):
    """Backpropagate loss_grad (d loss / d output) through the retained
    forward pass for x; returns [(dW, dbias), ...] aligned with stages.
    """
    tape = model._tape
    if tape is None:
        raise UsageError("backward_pass requires a prior forward with retain_tape=True")
    if tape.x is not x and not (tape.x.shape == x.shape and np.array_equal(tape.x, x)):
        raise UsageError("retained forward pass does not match this input")
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(model.stages)  # type: ignore
    dy = loss_grad.astype(model.dtype, copy=False)
    for i in range(len(model.stages) - 1, -1, -1):
        s = model.stages[i]
        if s.activation == "lrelu":
            dy = ops.leaky_relu_backward(dy, tape.pre_act[i], model.leaky_slope)
        elif s.activation == "tanh":
            dy = ops.tanh_backward(dy, np.tanh(tape.pre_act[i]))
        dx, dw, db = ops.conv2d_backward(dy, model.weights[i], tape.conv_caches[i])
        grads[i] = (dw, db)
        dy = dx
        if s.upsample > 1:
            dy = ops.upsample_nearest_backward(dy, s.upsample)
    return grads


def save_checkpoint(model: InpainterModel, path) -> None:
    """Write magic, version, architecture descriptor, then raw float32
    parameters in declaration order (weights then bias per stage).
    """
    arch = {
        "patch_size": model.patch_size,
        "mask_size": model.mask_size,
        "leaky_slope": model.leaky_slope,
        "stages": [s.to_json_dict() for s in model.stages],
    }
    blob = json.dumps(arch, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    for w, b in zip(model.weights, model.biases):
        buf.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
        buf.write(np.ascontiguousarray(b, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> InpainterModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"bad magic {data[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    (blob_len,) = struct.unpack_from("<I", data, 8)
    arch = json.loads(data[12 : 12 + blob_len].decode("utf-8"))
    stages = tuple(StageSpec(**d) for d in arch["stages"])
    offset = 12 + blob_len
    weights, biases = [], []
    for s in stages:
        n_w = s.out_ch * s.in_ch * s.kernel * s.kernel
        w = np.frombuffer(data, dtype="<f4", count=n_w, offset=offset).reshape(
            s.out_ch, s.in_ch, s.kernel, s.kernel
        )
        offset += 4 * n_w
        b = np.frombuffer(data, dtype="<f4", count=s.out_ch, offset=offset)
        offset += 4 * s.out_ch
        weights.append(w.copy())
        biases.append(b.copy())
    if offset != len(data):
        raise CheckpointFormatError(f"{len(data) - offset} trailing bytes after parameters")
    return InpainterModel(stages=stages, weights=weights, biases=biases,
                          patch_size=arch["patch_size"], mask_size=arch["mask_size"],
                          leaky_slope=arch["leaky_slope"])
