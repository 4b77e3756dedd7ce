"""Feed-forward fully-connected ReLU networks: loading, evaluation and bounds."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np


class NetworkError(ValueError):
    """Malformed network description (bad JSON, shape mismatch, non-finite entry)."""

    def __init__(self, message: str, layer: int | None = None):
        self.layer = layer
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)


class Activation(str, enum.Enum):
    RELU = "relu"
    LINEAR = "linear"


@dataclass(frozen=True, eq=False)
class Layer:
    """One affine map followed by an activation.

    ``weights[i, j]`` multiplies input ``j`` for neuron ``i``.
    """

    weights: np.ndarray
    biases: np.ndarray
    activation: Activation = Activation.RELU

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        b = np.array(self.biases, dtype=float).reshape(-1)
        if w.ndim != 2:
            raise NetworkError("weights must be a 2-d matrix")
        if w.shape[0] != b.shape[0]:
            raise NetworkError(f"{w.shape[0]} weight rows but {b.shape[0]} biases")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise NetworkError("non-finite weight or bias")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)
        object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


class Network:
    """Immutable stack of layers; layer ``k`` feeds layer ``k + 1``."""

    def __init__(self, layers: Sequence[Layer], input_dim: int | None = None):
        layers = tuple(layers)
        if not layers:
            raise NetworkError("network needs at least one layer")
        if input_dim is None:
            input_dim = layers[0].in_dim
        if input_dim < 1:
            raise NetworkError("input_dim must be positive")
        width = input_dim
        for k, layer in enumerate(layers, start=1):
            if layer.in_dim != width:
                raise NetworkError(
                    f"weight matrix has {layer.in_dim} columns but previous layer "
                    f"has {width} outputs",
                    layer=k,
                )
            width = layer.out_dim
        self._layers = layers
        self._input_dim = int(input_dim)

    @property
    def layers(self) -> tuple[Layer, ...]:
        return self._layers

    @property
    def input_dim(self) -> int:
        return self._input_dim

    @property
    def output_dim(self) -> int:
        return self._layers[-1].out_dim

    @property
    def shape(self) -> list[int]:
        return [self._input_dim] + [layer.out_dim for layer in self._layers]

    def __len__(self):
        return len(self._layers)

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        if self.input_dim != other.input_dim or len(self) != len(other):
            return False
        return all(
            a.activation == b.activation
            and np.array_equal(a.weights, b.weights)
            and np.array_equal(a.biases, b.biases)
            for a, b in zip(self.layers, other.layers)
        )

    def __hash__(self):
        return id(self)

    def __repr__(self):
        acts = ",".join(layer.activation.value for layer in self._layers)
        return f"Network(shape={self.shape}, activations=[{acts}])"

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "layers": [
                {
                    "weights": layer.weights.tolist(),
                    "biases": layer.biases.tolist(),
                    "activation": layer.activation.value,
                }
                for layer in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Network":
        if not isinstance(data, dict) or "layers" not in data:
            raise NetworkError("expected an object with a 'layers' list")
        layers = []
        for k, raw in enumerate(data["layers"], start=1):
            try:
                act = Activation(raw.get("activation", "relu"))
            except ValueError:
                raise NetworkError(f"unknown activation {raw.get('activation')!r}", layer=k)
            try:
                w = np.array(raw["weights"], dtype=float)
                b = np.array(raw["biases"], dtype=float)
            except (KeyError, TypeError, ValueError) as exc:
                raise NetworkError(f"bad weights/biases ({exc})", layer=k)
            try:
                layers.append(Layer(w, b, act))
            except NetworkError as exc:
                raise NetworkError(str(exc), layer=k)
        input_dim = data.get("input_dim")
        return cls(layers, None if input_dim is None else int(input_dim))


def load_network(source: IO | str | bytes) -> Network:
    """Parse a network from a JSON stream, string or bytes."""
    if hasattr(source, "read"):
        source = source.read()
    try:
        data = json.loads(source)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise NetworkError(f"cannot parse network JSON: {exc}")
    return Network.from_dict(data)


def save_network(net: Network, sink: IO | None = None) -> str:
    text = json.dumps(net.to_dict(), separators=(",", ":"))
    if sink is not None:
        sink.write(text)
    return text


def _as_input(net: Network, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.input_dim:
        raise NetworkError(f"input has length {x.shape[-1]}, network expects {net.input_dim}")
    return x


def forward_trace(net: Network, x) -> list[tuple[np.ndarray, np.ndarray]]:
    """(pre-activation, post-activation) for every layer.

    ``x`` may be a single vector or a batch of shape ``(n, input_dim)``.
    """
    a = _as_input(net, x)
    trace = []
    for layer in net.layers:
        z = a @ layer.weights.T + layer.biases
        a = np.maximum(z, 0.0) if layer.activation is Activation.RELU else z
        trace.append((z, a))
    return trace


def forward(net: Network, x) -> np.ndarray:
    return forward_trace(net, x)[-1][1]


def relu_layers(net: Network) -> list[int]:
    return [k for k, layer in enumerate(net.layers) if layer.activation is Activation.RELU]


def activation_pattern(net: Network, x) -> np.ndarray:
    """1 for every ReLU neuron whose pre-activation is strictly negative.

    Neurons are ordered layer by layer; a pre-activation of exactly 0 counts as active (0).
    """
    trace = forward_trace(net, x)
    parts = [(trace[k][0] < 0).astype(int) for k in relu_layers(net)]
    if not parts:
        return np.zeros(np.shape(x)[:-1] + (0,), dtype=int)
    return np.concatenate(parts, axis=-1)


@dataclass(frozen=True)
class IntervalBox:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lo, dtype=float).reshape(-1)
        hi = np.array(self.hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError("lo and hi differ in length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo > hi):
            raise ValueError("box has lo > hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def __len__(self):
        return len(self.lo)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(n, len(self)))


def _check_box(net: Network, box: IntervalBox):
    if len(box) != net.input_dim:
        raise NetworkError(f"box has {len(box)} dimensions, network expects {net.input_dim}")


def _affine_interval(w, b, lo, hi):
    wp, wn = np.maximum(w, 0.0), np.minimum(w, 0.0)
    return wp @ lo + wn @ hi + b, wp @ hi + wn @ lo + b


def interval_bounds(net: Network, box: IntervalBox) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-layer (lo, hi) pre-activation bounds by plain interval arithmetic."""
    _check_box(net, box)
    lo, hi = box.lo, box.hi
    out = []
    for layer in net.layers:
        zlo, zhi = _affine_interval(layer.weights, layer.biases, lo, hi)
        out.append((zlo, zhi))
        if layer.activation is Activation.RELU:
            lo, hi = np.maximum(zlo, 0.0), np.maximum(zhi, 0.0)
        else:
            lo, hi = zlo, zhi
    return out


def _relu_relaxation(lo, hi):
    """Slopes/intercepts of linear lower and upper envelopes of ReLU over [lo, hi]."""
    n = len(lo)
    up_slope, up_icpt = np.zeros(n), np.zeros(n)
    low_slope = np.zeros(n)
    active = lo >= 0
    up_slope[active] = 1.0
    low_slope[active] = 1.0
    cross = (lo < 0) & (hi > 0)
    lc, hc = lo[cross], hi[cross]
    up_slope[cross] = hc / (hc - lc)
    up_icpt[cross] = -lc * hc / (hc - lc)
    low_slope[cross] = (hc > -lc).astype(float)
    return low_slope, up_slope, up_icpt


def linear_bounds(net: Network, box: IntervalBox) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pre-activation bounds by back-substituting linear ReLU envelopes to the input box.

    Never looser than :func:`interval_bounds` (results are intersected with it).
    """
    _check_box(net, box)
    ibp = interval_bounds(net, box)
    bounds: list[tuple[np.ndarray, np.ndarray]] = []
    relax: list[tuple[np.ndarray, np.ndarray, np.ndarray] | None] = []
    for k, layer in enumerate(net.layers):
        if k == 0:
            lo, hi = ibp[0]
        else:
            lo = _backsub(net, k, relax, box, upper=False)
            hi = _backsub(net, k, relax, box, upper=True)
            lo = np.maximum(lo, ibp[k][0])
            hi = np.minimum(hi, ibp[k][1])
            hi = np.maximum(hi, lo)
        bounds.append((lo, hi))
        if layer.activation is Activation.RELU:
            relax.append(_relu_relaxation(lo, hi))
        else:
            relax.append(None)
    return bounds


def _backsub(net, k, relax, box, upper):
    a = np.array(net.layers[k].weights)
    const = np.array(net.layers[k].biases)
    for j in range(k - 1, -1, -1):
        r = relax[j]
        if r is not None:
            low_slope, up_slope, up_icpt = r
            pos, neg = np.maximum(a, 0.0), np.minimum(a, 0.0)
            if upper:
                const = const + pos @ up_icpt
                a = pos * up_slope + neg * low_slope
            else:
                const = const + neg @ up_icpt
                a = pos * low_slope + neg * up_slope
        layer = net.layers[j]
        const = const + a @ layer.biases
        a = a @ layer.weights
    pos, neg = np.maximum(a, 0.0), np.minimum(a, 0.0)
    if upper:
        return pos @ box.hi + neg @ box.lo + const
    return pos @ box.lo + neg @ box.hi + const


def random_network(widths: Sequence[int], seed: int, final: Activation | str = Activation.RELU) -> Network:
    """Seeded fixture net: weights uniform in [-1, 1], biases in [-0.5, 0.5]."""
    widths = [int(w) for w in widths]
    if len(widths) < 2 or min(widths) < 1:
        raise NetworkError(f"layer widths must be >= 1 and at least two given, got {widths}")
    rng = np.random.default_rng(seed)
    layers = []
    for k in range(1, len(widths)):
        w = rng.uniform(-1.0, 1.0, size=(widths[k], widths[k - 1]))
        b = rng.uniform(-0.5, 0.5, size=widths[k])
        act = Activation(final) if k == len(widths) - 1 else Activation.RELU
        layers.append(Layer(w, b, act))
    return Network(layers, widths[0])
