import numpy as np
import pytest

from mcd_anomaly.nn.model import InpainterModel, StageSpec
from mcd_anomaly.rng import RandomStream


def reference_conv2d(x, w, b, stride, padding):
    """Nested-loop cross-correlation, independent of the im2col path."""
    n_b, c_in, h, width = x.shape
    c_out, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (width + 2 * padding - k) // stride + 1
    out = np.zeros((n_b, c_out, h_out, w_out))
    for n in range(n_b):
        for o in range(c_out):
            for i in range(h_out):
                for j in range(w_out):
                    acc = b[o]
                    for c in range(c_in):
                        for u in range(k):
                            for v in range(k):
                                acc += xp[n, c, i * stride + u, j * stride + v] * w[o, c, u, v]
                    out[n, o, i, j] = acc
    return out


def make_model(stages, stream, patch_size, mask_size, weight_scale=0.5):
    """Build a model with random weights for the given stage plan."""
    gen = stream.generator()
    weights, biases = [], []
    for s in stages:
        weights.append(gen.normal(0.0, weight_scale, size=(s.out_ch, s.in_ch, s.kernel, s.kernel))
                       .astype(np.float32))
        biases.append(gen.normal(0.0, 0.1, size=s.out_ch).astype(np.float32))
    return InpainterModel(stages=tuple(stages), weights=weights, biases=biases,
                          patch_size=patch_size, mask_size=mask_size)


def random_small_model(stream, max_stages=3):
    """Resolution-preserving random stage stack for gradient checks.

    Stays within 2 input channels, 4 feature channels and 8x8 tensors so a
    full finite-difference sweep is cheap.
    """
    gen = stream.generator()
    n_stages = int(gen.integers(1, max_stages + 1))
    in_ch = int(gen.integers(1, 3))
    acts = ["lrelu", "tanh", "none"]
    stages = []
    prev = in_ch
    downsampled = False
    for i in range(n_stages):
        last = i == n_stages - 1
        out = int(gen.integers(1, 5))
        kernel = int(gen.choice([1, 3]))
        act = str(gen.choice(acts))
        if not downsampled and not last and gen.random() < 0.5:
            stages.append(StageSpec(prev, out, kernel, stride=2, padding=kernel // 2,
                                    activation=act))
            downsampled = True
        elif downsampled:
            stages.append(StageSpec(prev, out, kernel, stride=1, padding=kernel // 2,
                                    upsample=2, activation=act))
            downsampled = False
        else:
            stages.append(StageSpec(prev, out, kernel, stride=1, padding=kernel // 2,
                                    activation=act))
        prev = out
    if downsampled:
        stages.append(StageSpec(prev, 1, 3, stride=1, padding=1, upsample=2, activation="none"))
    model = make_model(stages, stream.child(99), patch_size=8, mask_size=4)
    x = stream.child(98).generator().normal(size=(1, in_ch, 8, 8))
    return model, x


@pytest.fixture
def stream():
    return RandomStream(1337)
