"""Training loop for the completion network.

The network learns to fill random rectangular holes in normal patches,
minimizing mean absolute error over the hole pixels. Dropout is never
active during training; stochasticity at inference comes from applying
channel dropout to this deterministically trained network.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import TrainingDivergedError, UsageError
from ..rng import RandomStream
from .model import InpainterModel, backward_pass, build_inpainter, forward


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    max_iters: int = 1200
    patience: int = 10          # evaluations without improvement before stopping
    eval_every: int = 25        # iterations between held-in reconstruction evals
    mask_side_range: tuple[int, int] | None = None  # defaults to [mask_size/2, mask_size]
    seed: int = 1337

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")


@dataclass
class TrainHistory:
    batch_losses: list[float] = field(default_factory=list)
    evals: list[tuple[int, float]] = field(default_factory=list)  # (iteration, masked L1)

    @property
    def initial_loss(self) -> float:
        return self.evals[0][1]

    @property
    def final_loss(self) -> float:
        return self.evals[-1][1]


class _Adam:
    """Adaptive-moment optimizer over a flat parameter list, in place."""

    def __init__(self, params: list[np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p, dtype=np.float32) for p in params]
        self.v = [np.zeros_like(p, dtype=np.float32) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = g.astype(np.float32, copy=False)
            m += (1 - b1) * (g - m)
            v += (1 - b2) * (g * g - v)
            p -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


def hole_input(patches: np.ndarray, hole_masks: np.ndarray) -> np.ndarray:
    """Stack (patch with hole zeroed, hole mask) into the 2-channel input."""
    holed = patches * (1.0 - hole_masks)
    return np.stack([holed, hole_masks], axis=1).astype(np.float32)


def _random_rect_masks(n: int, patch_size: int, side_range: tuple[int, int], gen) -> np.ndarray:
    lo, hi = side_range
    masks = np.zeros((n, patch_size, patch_size), dtype=np.float32)
    for i in range(n):
        h = int(gen.integers(lo, hi + 1))
        w = int(gen.integers(lo, hi + 1))
        top = int(gen.integers(0, patch_size - h + 1))
        left = int(gen.integers(0, patch_size - w + 1))
        masks[i, top : top + h, left : left + w] = 1.0
    return masks


def _centered_square_masks(n: int, patch_size: int, mask_size: int) -> np.ndarray:
    off = (patch_size - mask_size) // 2
    masks = np.zeros((n, patch_size, patch_size), dtype=np.float32)
    masks[:, off : off + mask_size, off : off + mask_size] = 1.0
    return masks


def masked_l1(output: np.ndarray, target: np.ndarray, hole_masks: np.ndarray) -> float:
    diff = np.abs(output[:, 0] - target) * hole_masks
    return float(diff.sum() / hole_masks.sum())


def _validate_corpus(corpus: np.ndarray) -> np.ndarray:
    corpus = np.asarray(corpus, dtype=np.float32)
    if corpus.ndim != 3 or corpus.shape[0] == 0:
        raise UsageError(f"corpus must be a non-empty (N, H, W) array, got shape {corpus.shape}")
    if corpus.shape[1] != corpus.shape[2]:
        raise UsageError(f"patches must be square, got {corpus.shape[1]}x{corpus.shape[2]}")
    if not np.isfinite(corpus).all():
        raise UsageError("corpus contains non-finite values")
    if corpus.min() < -1.000001 or corpus.max() > 1.000001:
        raise UsageError("corpus must be normalized to [-1, 1]")
    return corpus


def train_inpainter(corpus: np.ndarray, config: TrainConfig,
                    stream: RandomStream | None = None, mask_size: int | None = None,
                    enc_channels: tuple[int, ...] = (16, 32, 64, 64),
                    ) -> tuple[InpainterModel, TrainHistory]:
    """Train a fresh inpainter on a corpus of patches normalized to [-1, 1].

    Returns the model and the loss history. Evaluation uses a fixed probe
    subset with the centered square hole, matching how the model is applied
    at inference; training halts early once the probe L1 stops improving
    for `config.patience` consecutive evaluations.
    """
    corpus = _validate_corpus(corpus)
    patch_size = corpus.shape[1]
    if mask_size is None:
        mask_size = patch_size // 2
    stream = stream if stream is not None else RandomStream(config.seed)
    side_range = config.mask_side_range or (mask_size // 2, mask_size)

    model = build_inpainter(patch_size, mask_size, enc_channels, stream=stream.child(0))
    history = TrainHistory()
    if config.max_iters == 0:
        return model, history

    batch_gen = stream.child(1).generator()
    mask_gen = stream.child(2).generator()

    n = corpus.shape[0]
    probe = corpus[: min(128, n)]
    probe_masks = _centered_square_masks(probe.shape[0], patch_size, mask_size)
    probe_input = hole_input(probe, probe_masks)

    params: list[np.ndarray] = []
    for w, b in zip(model.weights, model.biases):
        params.extend((w, b))
    opt = _Adam(params, config.learning_rate)

    def evaluate() -> float:
        out = forward(model, probe_input)
        return masked_l1(out, probe, probe_masks)

    best = np.inf
    stale = 0
    for it in range(config.max_iters):
        idx = batch_gen.integers(0, n, size=config.batch_size)
        batch = corpus[idx]
        masks = _random_rect_masks(config.batch_size, patch_size, side_range, mask_gen)
        x = hole_input(batch, masks)
        out = forward(model, x, retain_tape=True)

        diff = out[:, 0] - batch
        denom = masks.sum()
        loss = float((np.abs(diff) * masks).sum() / denom)
        if not np.isfinite(loss):
            raise TrainingDivergedError(it)
        history.batch_losses.append(loss)

        grad_out = np.zeros_like(out)
        grad_out[:, 0] = np.sign(diff) * masks / denom
        grads_per_stage = backward_pass(model, x, grad_out)
        flat_grads: list[np.ndarray] = []
        for dw, db in grads_per_stage:
            flat_grads.extend((dw, db))
        opt.step(flat_grads)
        if not model.parameters_finite():
            raise TrainingDivergedError(it, f"non-finite parameters after step {it}")

        if it % config.eval_every == 0 or it == config.max_iters - 1:
            eval_loss = evaluate()
            history.evals.append((it, eval_loss))
            if eval_loss < best - 1e-6:
                best = eval_loss
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    model._tape = None
    return model, history


def gradient_check(model: InpainterModel, x: np.ndarray, loss_grad: np.ndarray,
                   step: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    The scalar objective is sum(loss_grad * output), so the analytic
    gradient is exactly what backward_pass produces for this seed. Runs the
    model in 64-bit; intended for small test networks only (cost is two
    forwards per parameter entry).
    """
    m = model.astype(np.float64)
    x = np.asarray(x, dtype=np.float64)
    loss_grad = np.asarray(loss_grad, dtype=np.float64)
    forward(m, x, retain_tape=True)
    analytic = backward_pass(m, x, loss_grad)

    def objective() -> float:
        return float(np.sum(loss_grad * forward(m, x)))

    worst = 0.0
    for i in range(len(m.stages)):
        for arr, grad in ((m.weights[i], analytic[i][0]), (m.biases[i], analytic[i][1])):
            flat, gfla = arr.ravel(), grad.ravel()
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + step
                jp = objective()
                flat[j] = orig - step
                jm = objective()
                flat[j] = orig
                fd = (jp - jm) / (2.0 * step)
                rel = abs(gfla[j] - fd) / max(1.0, abs(gfla[j]), abs(fd))
                worst = max(worst, rel)
    return worst
