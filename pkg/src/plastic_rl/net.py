"""Feed-forward network engine with hand-derived backpropagation.

Layers operate on batches shaped (n, width). Every layer applies an affine or
normalization transform followed by an optional activation; the forward pass
caches whatever its backward needs. Gradients accumulate into per-layer
storage that callers zero before each accumulation pass.

No autodiff anywhere: each layer kind carries its own exact reverse-mode
rule, which is what the finite-difference test batteries pin down.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import linalg

ACTIVATIONS = ("tanh", "relu", "mish", "crelu", "maxmin", "identity")

_LN_EPS = 1e-5


def activation_out_width(tag: str, width: int) -> int:
    if tag == "crelu":
        return 2 * width
    if tag == "maxmin" and width % 2 != 0:
        raise ValueError(f"maxmin needs an even width, got {width}")
    return width


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z):
    # Branch keeps exp() from overflowing; exact to double precision.
    out = np.where(z > 20.0, z, np.log1p(np.exp(np.minimum(z, 20.0))))
    return out


def activation_forward(tag: str, z: np.ndarray) -> np.ndarray:
    if tag == "identity":
        return z
    if tag == "tanh":
        return np.tanh(z)
    if tag == "relu":
        return np.maximum(z, 0.0)
    if tag == "mish":
        return z * np.tanh(_softplus(z))
    if tag == "crelu":
        return np.concatenate([np.maximum(z, 0.0), np.maximum(-z, 0.0)], axis=1)
    if tag == "maxmin":
        n, d = z.shape
        pairs = z.reshape(n, d // 2, 2)
        out = np.empty_like(pairs)
        out[:, :, 0] = pairs.max(axis=2)
        out[:, :, 1] = pairs.min(axis=2)
        return out.reshape(n, d)
    raise ValueError(f"unknown activation {tag!r}")


def activation_backward(tag: str, z: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    if tag == "identity":
        return upstream
    if tag == "tanh":
        t = np.tanh(z)
        return upstream * (1.0 - t * t)
    if tag == "relu":
        return upstream * (z > 0.0)
    if tag == "mish":
        sp = _softplus(z)
        t = np.tanh(sp)
        return upstream * (t + z * (1.0 - t * t) * _sigmoid(z))
    if tag == "crelu":
        d = z.shape[1]
        return upstream[:, :d] * (z > 0.0) - upstream[:, d:] * (z < 0.0)
    if tag == "maxmin":
        n, d = z.shape
        pairs = z.reshape(n, d // 2, 2)
        up = upstream.reshape(n, d // 2, 2)
        first_is_max = pairs[:, :, 0] >= pairs[:, :, 1]
        dz = np.empty_like(pairs)
        dz[:, :, 0] = np.where(first_is_max, up[:, :, 0], up[:, :, 1])
        dz[:, :, 1] = np.where(first_is_max, up[:, :, 1], up[:, :, 0])
        return dz.reshape(n, d)
    raise ValueError(f"unknown activation {tag!r}")


@dataclass
class InitSpec:
    """How to draw a dense weight matrix.

    scheme "orthogonal" uses gain * qr_haar; "xavier" draws Gaussians with
    variance 2 / (fan_in + fan_out). rank_cap projects the rows onto a random
    subspace of that dimension and rescales each row to its original length
    times (1 + eps), eps uniform in [-jitter_eps, +jitter_eps].
    """

    scheme: str = "orthogonal"
    gain: float = float(np.sqrt(2.0))
    rank_cap: Optional[int] = None
    jitter_eps: float = 0.01

    def validate(self) -> None:
        if self.scheme not in ("orthogonal", "xavier"):
            raise ValueError(f"unknown init scheme {self.scheme!r}")
        if self.gain <= 0:
            raise ValueError("init gain must be positive")
        if self.rank_cap is not None and self.rank_cap <= 0:
            raise ValueError("rank_cap must be a positive count")


def init_dense(shape: tuple[int, int], spec: InitSpec, rng: np.random.Generator) -> np.ndarray:
    spec.validate()
    rows, cols = shape
    if spec.scheme == "orthogonal":
        w = spec.gain * linalg.qr_haar(rows, cols, rng)
    else:
        std = np.sqrt(2.0 / (rows + cols))
        w = rng.normal(0.0, std, size=(rows, cols))
    if spec.rank_cap is not None:
        m = spec.rank_cap
        if m > min(rows, cols):
            raise ValueError(
                f"rank_cap {m} exceeds min dimension of {rows}x{cols} matrix"
            )
        basis = linalg.qr_haar(cols, cols, rng)[:m]
        proj = basis.T @ basis
        lengths = np.sqrt(np.sum(w * w, axis=1))
        w = w @ proj
        new_lengths = np.sqrt(np.sum(w * w, axis=1))
        if np.any(new_lengths == 0.0):
            raise ValueError("rank_cap projection annihilated a row")
        eps = rng.uniform(-spec.jitter_eps, spec.jitter_eps, size=rows)
        w *= (lengths * (1.0 + eps) / new_lengths)[:, None]
    return w


class DenseLayer:
    kind = "dense"

    def __init__(self, w: np.ndarray, b: Optional[np.ndarray] = None, activation: str = "identity"):
        self.w = np.ascontiguousarray(w, dtype=np.float64)
        self.b = np.zeros(self.w.shape[0]) if b is None else np.asarray(b, dtype=np.float64)
        if self.b.shape != (self.w.shape[0],):
            raise ValueError("dense bias length must equal the row count of W")
        self.activation = activation
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)

    @property
    def in_width(self) -> int:
        return self.w.shape[1]

    def out_width(self) -> int:
        return activation_out_width(self.activation, self.w.shape[0])

    def forward(self, x):
        z = x @ self.w.T + self.b
        return activation_forward(self.activation, z), (x, z)

    def backward(self, upstream, cache, accumulate=True):
        x, z = cache
        dz = activation_backward(self.activation, z, upstream)
        if accumulate:
            self.gw += dz.T @ x
            self.gb += dz.sum(axis=0)
        return dz @ self.w

    def params(self):
        return [("w", self.w, self.gw), ("b", self.b, self.gb)]


class DiagonalLayer:
    """Per-feature learnable scale and bias: d .* x + b."""

    kind = "diagonal"

    def __init__(self, width: int, activation: str = "identity"):
        self.d = np.ones(width)
        self.b = np.zeros(width)
        self.activation = activation

        self.gd = np.zeros_like(self.d)
        self.gb = np.zeros_like(self.b)

    @property
    def in_width(self) -> int:
        return self.d.shape[0]

    def out_width(self) -> int:
        return activation_out_width(self.activation, self.d.shape[0])

    def forward(self, x):
        z = x * self.d + self.b
        return activation_forward(self.activation, z), (x, z)

    def backward(self, upstream, cache, accumulate=True):
        x, z = cache
        dz = activation_backward(self.activation, z, upstream)
        if accumulate:
            self.gd += np.sum(dz * x, axis=0)
            self.gb += dz.sum(axis=0)
        return dz * self.d

    def params(self):
        return [("d", self.d, self.gd), ("b", self.b, self.gb)]


class LayerNormLayer:
    """Per-sample normalization over the feature axis with learnable gain/bias."""

    kind = "layer_norm"

    def __init__(self, width: int, activation: str = "identity"):
        self.g = np.ones(width)
        self.b = np.zeros(width)
        self.activation = activation
        self.gg = np.zeros_like(self.g)
        self.gb = np.zeros_like(self.b)

    @property
    def in_width(self) -> int:
        return self.g.shape[0]

    def out_width(self) -> int:
        return activation_out_width(self.activation, self.g.shape[0])

    def forward(self, x):
        mu = x.mean(axis=1, keepdims=True)
        xc = x - mu
        var = np.mean(xc * xc, axis=1, keepdims=True)
        inv = 1.0 / np.sqrt(var + _LN_EPS)
        xhat = xc * inv
        z = xhat * self.g + self.b
        return activation_forward(self.activation, z), (xhat, inv, z)

    def backward(self, upstream, cache, accumulate=True):
        xhat, inv, z = cache
        dz = activation_backward(self.activation, z, upstream)
        if accumulate:
            self.gg += np.sum(dz * xhat, axis=0)
            self.gb += dz.sum(axis=0)
        dxhat = dz * self.g
        m1 = dxhat.mean(axis=1, keepdims=True)
        m2 = np.mean(dxhat * xhat, axis=1, keepdims=True)
        return inv * (dxhat - m1 - xhat * m2)

    def params(self):
        return [("g", self.g, self.gg), ("b", self.b, self.gb)]


class InputScaleLayer:
    """Single learnable scalar multiplying every input entry."""

    kind = "input_scale"

    def __init__(self, width: int, activation: str = "identity"):
        self.c = np.ones(1)
        self.activation = activation
        self.gc = np.zeros(1)
        self._width = width

    @property
    def in_width(self) -> int:
        return self._width

    def out_width(self) -> int:
        return activation_out_width(self.activation, self._width)

    def forward(self, x):
        z = self.c[0] * x
        return activation_forward(self.activation, z), (x, z)

    def backward(self, upstream, cache, accumulate=True):
        x, z = cache
        dz = activation_backward(self.activation, z, upstream)
        if accumulate:
            self.gc[0] += np.sum(dz * x)
        return dz * self.c[0]

    def params(self):
        return [("c", self.c, self.gc)]


class Mlp:
    """Ordered layer stack with parallel gradient storage."""

    def __init__(self, layers):
        self.layers = list(layers)
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_width() != nxt.in_width:
                raise ValueError(
                    f"layer width mismatch: {prev.kind} outputs {prev.out_width()} "
                    f"but {nxt.kind} expects {nxt.in_width}"
                )

    @property
    def in_width(self) -> int:
        return self.layers[0].in_width

    @property
    def out_width(self) -> int:
        return self.layers[-1].out_width()

    @property
    def param_count(self) -> int:
        return sum(p.size for _, p, _ in self.parameters())

    def parameters(self):
        """Yield (name, param, grad) triples in layer order."""
        for i, layer in enumerate(self.layers):
            for name, p, g in layer.params():
                yield f"layer{i}.{name}", p, g

    def dense_layers(self):
        return [l for l in self.layers if l.kind == "dense"]

    def hidden_dense_weights(self):
        """Weight matrices of all dense layers except the output one."""
        dense = self.dense_layers()
        return [l.w for l in dense[:-1]]

    def zero_grads(self) -> None:
        for _, _, g in self.parameters():
            g[:] = 0.0

    def forward(self, x: np.ndarray):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.in_width:
            raise ValueError(
                f"input width {x.shape[1]} does not match network input width "
                f"{self.in_width}"
            )
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, caches, upstream: np.ndarray, accumulate: bool = True) -> np.ndarray:
        if len(caches) != len(self.layers):
            raise ValueError("cache does not match network layer count")
        grad = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            grad = layer.backward(grad, cache, accumulate=accumulate)
        return grad


def input_output_jacobian(net: Mlp, x: np.ndarray) -> np.ndarray:
    """J[i, j] = d output_i / d input_j for a single input vector."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    y, caches = net.forward(x)
    out_dim = y.shape[1]
    jac = np.empty((out_dim, x.shape[1]))
    for i in range(out_dim):
        onehot = np.zeros((1, out_dim))
        onehot[0, i] = 1.0
        jac[i] = net.backward(caches, onehot, accumulate=False)[0]
    return jac


def batch_jacobians(net: Mlp, xs: np.ndarray) -> np.ndarray:
    """Jacobians for a batch of inputs, shape (n, out, in).

    Same math as input_output_jacobian, vectorized over samples: one forward
    plus out_dim backward passes for the whole batch.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    y, caches = net.forward(xs)
    n, out_dim = y.shape
    jac = np.empty((n, out_dim, xs.shape[1]))
    for i in range(out_dim):
        onehot = np.zeros((n, out_dim))
        onehot[:, i] = 1.0
        jac[:, i, :] = net.backward(caches, onehot, accumulate=False)
    return jac


@dataclass
class ArchSpec:
    """Network architecture shared by the actor and critic trunks."""

    width: int = 64
    hidden_layers: int = 2
    activation: str = "tanh"
    init: InitSpec = field(default_factory=InitSpec)
    diagonal_layers: bool = False
    input_scale: bool = False
    layer_norm: bool = False

    def validate(self) -> None:
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.width < 1 or self.hidden_layers < 1:
            raise ValueError("width and hidden_layers must be positive")
        if self.activation == "maxmin" and self.width % 2 != 0:
            raise ValueError("maxmin activation needs an even width")
        self.init.validate()


def build_mlp(
    arch: ArchSpec,
    in_width: int,
    out_width: int,
    rng: np.random.Generator,
    out_gain: float = 1.0,
) -> Mlp:
    """Assemble a trunk of hidden layers plus a linear output layer.

    Hidden dense layers carry no activation of their own when a diagonal or
    layer-norm stage follows; the activation then sits on the last stage of
    the hidden block, matching "dense -> (norm) -> (diagonal scale) ->
    nonlinearity" ordering. The output layer is always plain linear and is
    never followed by extra stages.
    """
    arch.validate()
    layers: list = []
    if arch.input_scale:
        layers.append(InputScaleLayer(in_width))
    cur = in_width
    for _ in range(arch.hidden_layers):
        stages: list = [DenseLayer(init_dense((arch.width, cur), arch.init, rng))]
        if arch.layer_norm:
            stages.append(LayerNormLayer(arch.width))
        if arch.diagonal_layers:
            stages.append(DiagonalLayer(arch.width))
        stages[-1].activation = arch.activation
        layers.extend(stages)
        cur = activation_out_width(arch.activation, arch.width)
    head_init = InitSpec(scheme=arch.init.scheme, gain=out_gain)
    if arch.init.scheme == "xavier":
        head_init = InitSpec(scheme="xavier")
    layers.append(DenseLayer(init_dense((out_width, cur), head_init, rng)))
    return Mlp(layers)


# --- Checkpoint format -------------------------------------------------------
#
# Flat binary container: a one-line JSON header describing layer kinds,
# activations and array shapes in layer order, then the raw little-endian
# float64 bytes of every array in that same order. Write -> read -> write is
# bit-identical.

_CKPT_MAGIC = b"PRLCKPT1"


def _net_structure(net: Mlp):
    desc = []
    for layer in net.layers:
        entry = {"kind": layer.kind, "activation": layer.activation}
        if layer.kind == "input_scale":
            entry["width"] = layer.in_width
        entry["arrays"] = [[name, list(p.shape)] for name, p, _ in layer.params()]
        desc.append(entry)
    return desc


def _net_arrays(net: Mlp):
    for layer in net.layers:
        for _, p, _ in layer.params():
            yield p


def save_checkpoint(path, nets: dict[str, Mlp], extras: Optional[dict[str, np.ndarray]] = None,
                    meta: Optional[dict] = None) -> None:
    import json

    extras = extras or {}
    header = {
        "version": 1,
        "meta": meta or {},
        "nets": {name: _net_structure(net) for name, net in nets.items()},
        "extras": {name: list(np.asarray(a).shape) for name, a in extras.items()},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(len(blob).to_bytes(8, "little"))
        f.write(blob)
        for name in sorted(nets):
            for arr in _net_arrays(nets[name]):
                f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        for name in sorted(extras):
            f.write(np.ascontiguousarray(extras[name], dtype="<f8").tobytes())


def _layer_from_desc(entry):
    kind = entry["kind"]
    act = entry["activation"]
    shapes = {name: tuple(shape) for name, shape in entry["arrays"]}
    if kind == "dense":
        return DenseLayer(np.zeros(shapes["w"]), np.zeros(shapes["b"]), act)
    if kind == "diagonal":
        return DiagonalLayer(shapes["d"][0], act)
    if kind == "layer_norm":
        return LayerNormLayer(shapes["g"][0], act)
    if kind == "input_scale":
        return InputScaleLayer(entry["width"], act)
    raise ValueError(f"unknown layer kind {kind!r} in checkpoint")


def load_checkpoint(path):
    import json

    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != _CKPT_MAGIC:
            raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
        size = int.from_bytes(f.read(8), "little")
        header = json.loads(f.read(size).decode())
        nets = {}
        for name in sorted(header["nets"]):
            layers = [_layer_from_desc(e) for e in header["nets"][name]]
            net = Mlp(layers)
            for _, p, _ in net.parameters():
                raw = f.read(p.size * 8)
                p[:] = np.frombuffer(raw, dtype="<f8").reshape(p.shape)
            nets[name] = net
        extras = {}
        for name in sorted(header["extras"]):
            shape = tuple(header["extras"][name])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * 8)
            extras[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return nets, extras, header["meta"]
