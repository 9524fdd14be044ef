"""Small multilayer perceptrons with hand-written reverse-mode gradients.

Networks are stored as a :class:`ParamSet` (ordered weight/bias pairs with
rectifier hidden activations and a linear output layer).  :func:`forward`
records a :class:`Tape` that :func:`backward` consumes to produce a
:class:`GradSet`.  Inputs may be a single vector or a batch (rows are
samples); gradients from a batch are summed over rows, so losses that
average over a batch should pass an already-averaged ``output_grad``.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgument, InvalidState

FORMAT_TAG = "mpac-paramset-v1"


@dataclass
class ParamSet:
    weights: list
    biases: list
    activation: str = "relu"
    seed: int = 0
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise InvalidArgument("weights and biases must be non-empty and paired")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise InvalidArgument(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise InvalidArgument(f"layer {i} input {w.shape[1]} does not chain")

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_in(self):
        return self.weights[0].shape[1]

    @property
    def n_out(self):
        return self.weights[-1].shape[0]

    def named(self):
        """Yield ``(name, array)`` pairs in a fixed order."""
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"W{i}", w
            yield f"b{i}", b

    def arrays(self):
        return [a for _, a in self.named()]

    def copy(self):
        return ParamSet([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                        self.activation, self.seed)

    def touch(self):
        """Mark the parameters as modified; tapes recorded earlier become stale."""
        self.version += 1

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def set_flat(self, vec):
        vec = np.asarray(vec, dtype=float)
        offset = 0
        for a in self.arrays():
            a[...] = vec[offset:offset + a.size].reshape(a.shape)
            offset += a.size
        if offset != vec.size:
            raise InvalidArgument(f"flat vector has {vec.size} entries, expected {offset}")
        self.touch()

    def all_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass
class GradSet:
    """Partial derivatives with the same layout as a :class:`ParamSet`."""

    weights: list
    biases: list

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(w) for w in params.weights],
                   [np.zeros_like(b) for b in params.biases])

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def __add__(self, other):
        return GradSet([a + b for a, b in zip(self.weights, other.weights)],
                       [a + b for a, b in zip(self.biases, other.biases)])

    def scaled(self, k):
        return GradSet([k * w for w in self.weights], [k * b for b in self.biases])

    def zero_(self):
        for a in self.arrays():
            a[...] = 0.0

    def all_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass
class Tape:
    """Activation cache recorded by :func:`forward`."""

    inputs: list        # input to each layer, shape (batch, fan_in)
    pre: list           # pre-activation of each hidden layer
    masks: list         # dropout multiplier per hidden layer, or None
    params_id: int
    params_version: int
    squeeze: bool


def init_mlp(layer_sizes, seed=0):
    """Create an MLP with N(0, 1/fan_in) weights and zero biases.

    Parameters
    ----------
    layer_sizes : sequence of int
        Input width followed by the width of every layer, e.g. ``[3, 64, 64, 9]``.
    seed : int
        Seed for the weight stream; equal inputs give bit-identical parameters.
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise InvalidArgument(f"need at least two positive layer sizes, got {list(layer_sizes)}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in))
        biases.append(np.zeros(fan_out))
    return ParamSet(weights, biases, "relu", int(seed))


def forward(params, x, training=False, dropout_rate=0.0, rng=None):
    """Evaluate the network on ``x`` (vector or batch of row vectors).

    Dropout with inverted scaling is applied to hidden activations only when
    ``training`` is set and ``dropout_rate > 0``; it then needs ``rng``.
    """
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.ndim != 2 or h.shape[1] != params.n_in:
        raise InvalidArgument(f"input shape {x.shape} does not match network input {params.n_in}")
    use_dropout = training and dropout_rate > 0.0
    if use_dropout and rng is None:
        raise InvalidArgument("dropout during training needs an rng")
    if not 0.0 <= dropout_rate < 1.0:
        raise InvalidArgument(f"dropout_rate must be in [0, 1), got {dropout_rate}")

    inputs, pre, masks = [], [], []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w.T + b
        if i == last:
            h = z
            break
        pre.append(z)
        h = np.maximum(z, 0.0)
        if use_dropout:
            keep = rng.random(h.shape) >= dropout_rate
            mask = keep / (1.0 - dropout_rate)
            h = h * mask
            masks.append(mask)
        else:
            masks.append(None)
    tape = Tape(inputs, pre, masks, id(params), params.version, squeeze)
    return (h[0] if squeeze else h), tape


def backward(params, tape, output_grad):
    """Gradient of a loss w.r.t. every parameter, given d(loss)/d(output)."""
    if tape.params_id != id(params) or tape.params_version != params.version:
        raise InvalidState("tape was recorded for different or since-modified parameters")
    g = np.asarray(output_grad, dtype=float)
    if tape.squeeze:
        g = g[None, :]
    if g.shape != (tape.inputs[0].shape[0], params.n_out):
        raise InvalidArgument(f"output_grad shape {np.shape(output_grad)} does not match output")

    n = len(params.weights)
    gw, gb = [None] * n, [None] * n
    for i in range(n - 1, -1, -1):
        gw[i] = g.T @ tape.inputs[i]
        gb[i] = g.sum(axis=0)
        if i == 0:
            break
        g = g @ params.weights[i]
        if tape.masks[i - 1] is not None:
            g = g * tape.masks[i - 1]
        g = g * (tape.pre[i - 1] > 0.0)
    return GradSet(gw, gb)


@dataclass
class OptimizerState:
    kind: str
    lr: float
    m: list = None
    v: list = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0


def make_optimizer(params, kind="adam", lr=1e-4, **kwargs):
    if kind not in ("adam", "sgd"):
        raise InvalidArgument(f"unknown optimizer kind {kind!r}")
    if not lr > 0:
        raise InvalidArgument(f"learning rate must be positive, got {lr}")
    opt = OptimizerState(kind, float(lr), **kwargs)
    if kind == "adam":
        opt.m = [np.zeros_like(a) for a in params.arrays()]
        opt.v = [np.zeros_like(a) for a in params.arrays()]
    return opt


def apply_step(params, grads, opt):
    """Update ``params`` in place from ``grads``; returns ``(params, opt)``.

    Non-finite gradients reject the step with :class:`InvalidState` and
    leave both the parameters and the optimizer untouched.
    """
    p_arrays, g_arrays = params.arrays(), grads.arrays()
    if len(p_arrays) != len(g_arrays) or any(p.shape != g.shape for p, g in zip(p_arrays, g_arrays)):
        raise InvalidArgument("gradients are not shape-congruent with parameters")
    if not grads.all_finite():
        raise InvalidState("non-finite gradient entries; step rejected")

    if opt.kind == "sgd":
        deltas = [opt.lr * g for g in g_arrays]
    else:
        if opt.m is None or any(m.shape != p.shape for m, p in zip(opt.m, p_arrays)):
            raise InvalidArgument("optimizer moments are not shape-congruent with parameters")
        squares = [g * g for g in g_arrays]
        if not all(np.all(np.isfinite(s)) for s in squares):
            raise InvalidState("squared gradients overflow; step rejected")
        t = opt.t + 1
        c1 = 1 - opt.beta1 ** t
        c2 = 1 - opt.beta2 ** t
        deltas = []
        for m, v, g, sq in zip(opt.m, opt.v, g_arrays, squares):
            m *= opt.beta1
            m += (1 - opt.beta1) * g
            v *= opt.beta2
            sq *= 1 - opt.beta2
            v += sq
            denom = np.sqrt(v / c2)
            denom += opt.eps
            delta = m * (opt.lr / c1)
            delta /= denom
            deltas.append(delta)
    for p, d in zip(p_arrays, deltas):
        p -= d
    opt.t += 1
    params.touch()
    return params, opt


def save_params(params, path):
    """Write ``params`` as an ``.npz`` archive (float64 values, exact round-trip)."""
    payload = {"format": np.array(FORMAT_TAG), "activation": np.array(params.activation),
               "seed": np.array(params.seed, dtype=np.int64)}
    payload.update(dict(params.named()))
    with open(path, "wb") as fh:
        np.savez(fh, **payload)
    return Path(path)


def load_params(path):
    with np.load(path, allow_pickle=False) as data:
        if "format" not in data or str(data["format"]) != FORMAT_TAG:
            raise InvalidArgument(f"{path}: not a {FORMAT_TAG} archive")
        n = sum(1 for k in data.files if k.startswith("W"))
        weights = [data[f"W{i}"].copy() for i in range(n)]
        biases = [data[f"b{i}"].copy() for i in range(n)]
        return ParamSet(weights, biases, str(data["activation"]), int(data["seed"]))
