"""Feed-forward instance scorers with hand-rolled backprop and optimizers.

The scorer maps a feature vector to t = log p(y = 1) through ReLU hidden
layers and a log-sigmoid output. Logits are clamped to +-30 before the
log-sigmoid, which keeps t inside roughly (-30.1, -9e-14): strictly negative
and finite, so downstream count computations never see a saturated
probability. All updates are deterministic functions of (seed, inputs).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

LOGIT_CLAMP = 30.0

_CHECKPOINT_MAGIC = b"COUNTSUPCKPT1\n"


def logsigmoid(z):
    """Stable log(sigmoid(z)) for scalars or arrays."""
    return -np.logaddexp(0.0, -np.asarray(z, dtype=np.float64))


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths from input dimension down to the single output logit."""

    layer_widths: tuple

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2:
            raise ValueError("need at least an input dimension and an output width")
        if any(w <= 0 for w in widths):
            raise ValueError("layer widths must be positive")
        if widths[-1] != 1:
            raise ValueError("final layer width must be 1 (a single logit)")
        object.__setattr__(self, "layer_widths", widths)

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]


@dataclass
class Mlp:
    spec: MlpSpec
    weights: list
    biases: list
    seed: int

    @classmethod
    def initialize(cls, spec: MlpSpec, seed: int) -> "Mlp":
        """Kaiming-style uniform init, fan-in scaled, biases at zero."""
        rng = np.random.default_rng(seed)
        weights = []
        biases = []
        for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
            bound = math.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(spec=spec, weights=weights, biases=biases, seed=int(seed))

    def clone(self) -> "Mlp":
        return Mlp(
            spec=self.spec,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            seed=self.seed,
        )

    def parameters(self):
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b


def forward(model: Mlp, features):
    """Score features; returns (t, cache) with t = logsigmoid(clamped logit).

    Accepts a single feature vector or a (n, d) batch; t is then a scalar
    or a length-n vector. The cache feeds :func:`backward`.
    """
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.spec.input_dim:
        raise ValueError(
            f"features must have dimension {model.spec.input_dim}, got shape {x.shape}"
        )
    inputs = []
    pre_activations = []
    h = x
    last = len(model.weights) - 1
    for layer, (w, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(h)
        z = h @ w + b
        if layer < last:
            pre_activations.append(z)
            h = np.maximum(z, 0.0)
        else:
            logits = z[:, 0]
    clamped = np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP)
    t = logsigmoid(clamped)
    cache = (inputs, pre_activations, logits, t, single)
    if single:
        return float(t[0]), cache
    return t, cache


def backward(model: Mlp, cache, d_t):
    """Exact gradients of sum_i d_t[i] * t_i with respect to every parameter.

    The output stage differentiates as dt/dlogit = 1 - exp(t), computed as
    -expm1(t) to survive t near 0; clamped logits pass zero gradient. ReLU
    uses subgradient 0 at 0. Returns [(dW, db), ...] matching the layers.
    """
    inputs, pre_activations, logits, t, single = cache
    d = np.asarray(d_t, dtype=np.float64)
    if single:
        d = d.reshape(1)
    if d.shape != t.shape:
        raise ValueError(f"d_t shape {d.shape} does not match outputs {t.shape}")
    pass_through = np.abs(logits) <= LOGIT_CLAMP
    dz = d * -np.expm1(t) * pass_through
    grads = [None] * len(model.weights)
    delta = dz[:, None]
    for layer in range(len(model.weights) - 1, -1, -1):
        h = inputs[layer]
        grads[layer] = (h.T @ delta, delta.sum(axis=0))
        if layer > 0:
            delta = (delta @ model.weights[layer].T) * (pre_activations[layer - 1] > 0.0)
    return grads


@dataclass
class OptimState:
    """SGD or Adam with weight decay and L1 folded into the raw gradient."""

    kind: str
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    l1: float = 0.0
    step_count: int = 0
    moment1: list = field(default_factory=list)
    moment2: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate < 0.0:
            raise ValueError("learning_rate must be non-negative")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("betas must lie in (0, 1)")
        if self.weight_decay < 0.0 or self.l1 < 0.0:
            raise ValueError("regularizer strengths must be non-negative")

    @classmethod
    def sgd(cls, learning_rate: float, weight_decay: float = 0.0, l1: float = 0.0):
        return cls(kind="sgd", learning_rate=learning_rate,
                   weight_decay=weight_decay, l1=l1)

    @classmethod
    def adam(cls, model: Mlp, learning_rate: float, beta1: float = 0.9,
             beta2: float = 0.999, weight_decay: float = 0.0, l1: float = 0.0):
        state = cls(kind="adam", learning_rate=learning_rate, beta1=beta1,
                    beta2=beta2, weight_decay=weight_decay, l1=l1)
        state.moment1 = [np.zeros_like(p) for p in model.parameters()]
        state.moment2 = [np.zeros_like(p) for p in model.parameters()]
        return state


def step(model: Mlp, grads, opt: OptimState) -> None:
    """Apply one optimizer step in place.

    The effective gradient is g + weight_decay * theta + l1 * sign(theta);
    Adam then applies bias-corrected moments, so the first step moves by
    about lr * g / (|g| + eps).
    """
    flat_grads = []
    for dw, db in grads:
        flat_grads.append(dw)
        flat_grads.append(db)
    params = list(model.parameters())
    if len(flat_grads) != len(params):
        raise ValueError("gradient structure does not match parameters")
    opt.step_count += 1
    lr = opt.learning_rate
    for idx, (theta, g) in enumerate(zip(params, flat_grads)):
        if g.shape != theta.shape:
            raise ValueError("gradient shape mismatch")
        g_eff = g
        if opt.weight_decay != 0.0:
            g_eff = g_eff + opt.weight_decay * theta
        if opt.l1 != 0.0:
            g_eff = g_eff + opt.l1 * np.sign(theta)
        if opt.kind == "sgd":
            theta -= lr * g_eff
        else:
            m = opt.moment1[idx]
            v = opt.moment2[idx]
            m *= opt.beta1
            m += (1.0 - opt.beta1) * g_eff
            v *= opt.beta2
            v += (1.0 - opt.beta2) * np.square(g_eff)
            m_hat = m / (1.0 - opt.beta1 ** opt.step_count)
            v_hat = v / (1.0 - opt.beta2 ** opt.step_count)
            theta -= lr * m_hat / (np.sqrt(v_hat) + opt.eps)


def save_checkpoint(model: Mlp, path, extra: dict | None = None) -> None:
    """Write a versioned binary checkpoint: a JSON header plus raw float64 data.

    The format is byte-stable for identical models and round-trips exactly.
    """
    arrays = []
    names = []
    for layer, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays.extend([w, b])
        names.extend([f"w{layer}", f"b{layer}"])
    header = {
        "format": 1,
        "layer_widths": list(model.spec.layer_widths),
        "seed": model.seed,
        "arrays": [
            {"name": n, "shape": list(a.shape)} for n, a in zip(names, arrays)
        ],
        "extra": extra or {},
    }
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint written by :func:`save_checkpoint`.

    Returns (model, extra).
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(_CHECKPOINT_MAGIC))
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a countsup checkpoint")
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format") != 1:
            raise ValueError(f"{path}: unsupported checkpoint format {header.get('format')!r}")
        spec = MlpSpec(tuple(header["layer_widths"]))
        arrays = []
        for meta in header["arrays"]:
            shape = tuple(meta["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"{path}: truncated checkpoint")
            arrays.append(np.frombuffer(buf, dtype="<f8").reshape(shape).copy())
    weights = arrays[0::2]
    biases = arrays[1::2]
    model = Mlp(spec=spec, weights=weights, biases=biases, seed=int(header["seed"]))
    return model, header.get("extra", {})
