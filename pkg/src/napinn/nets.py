"""Dense tanh MLPs with exact input-space jets and parameter gradients.

Everything runs in float64 on flat parameter vectors. A network is evaluated
either plainly (``forward``) or with per-coordinate second-order jets
(``record_jets``): for each requested input coordinate k the jet carries the
value, first derivative and pure second derivative of every output along that
coordinate, propagated layer by layer. Parameter gradients of scalar losses
built from jet outputs are obtained by reverse accumulation over the recorded
jet computation (``JetTape.backprop``), so losses containing second
derivatives still yield exact gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NetworkShape:
    input_dim: int
    output_dim: int
    hidden_layers: int
    hidden_width: int
    activation: str = "tanh"

    def __post_init__(self):
        if self.hidden_layers < 1:
            raise ValueError("need at least one hidden layer")
        if min(self.input_dim, self.output_dim, self.hidden_width) < 1:
            raise ValueError("all widths must be >= 1")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation: {self.activation}")

    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per layer, input to output."""
        dims = [self.input_dim] + [self.hidden_width] * self.hidden_layers
        dims.append(self.output_dim)
        return list(zip(dims[:-1], dims[1:]))

    @property
    def n_params(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_dims())


@dataclass
class NetworkParams:
    """Flat parameter vector; canonical order is per layer W (row-major,
    fan_out x fan_in) followed by b."""

    shape: NetworkShape
    flat: np.ndarray

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.shape != (self.shape.n_params,):
            raise ValueError(
                f"expected {self.shape.n_params} parameters, got {self.flat.shape}"
            )

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views (W, b) into the flat vector, no copies."""
        out = []
        offset = 0
        for fi, fo in self.shape.layer_dims():
            w = self.flat[offset : offset + fi * fo].reshape(fo, fi)
            offset += fi * fo
            b = self.flat[offset : offset + fo]
            offset += fo
            out.append((w, b))
        return out

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.shape, self.flat.copy())


def init_xavier(shape: NetworkShape, seed) -> NetworkParams:
    """Xavier-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases."""
    rng = np.random.default_rng(seed)
    flat = np.empty(shape.n_params)
    offset = 0
    for fi, fo in shape.layer_dims():
        bound = np.sqrt(6.0 / (fi + fo))
        flat[offset : offset + fi * fo] = rng.uniform(-bound, bound, size=fi * fo)
        offset += fi * fo
        flat[offset : offset + fo] = 0.0
        offset += fo
    return NetworkParams(shape, flat)


def forward(params: NetworkParams, inputs: np.ndarray) -> np.ndarray:
    """Plain MLP evaluation, [batch x input_dim] -> [batch x output_dim]."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.shape.input_dim:
        raise ValueError(
            f"inputs must be [batch x {params.shape.input_dim}], got {x.shape}"
        )
    layers = params.layers()
    z = x
    for w, b in layers[:-1]:
        z = np.tanh(z @ w.T + b)
    w, b = layers[-1]
    return z @ w.T + b


@dataclass
class Jet2Batch:
    """Network outputs with derivatives along requested input coordinates.

    values: [batch x output_dim]
    d1, d2: [batch x output_dim x n_dirs]; d2 holds pure second derivatives
    along each direction (no mixed partials).
    """

    values: np.ndarray
    d1: np.ndarray | None = None
    d2: np.ndarray | None = None
    directions: tuple[int, ...] = ()


# Jet blocks are stored components-first, [(1+2K) x batch x width], so each
# component group (value, first, second derivatives) is a contiguous slice:
# component 0 = value, 1..K = first derivatives, K+1..2K = second derivatives.


class JetTape:
    """Recorded jet computation supporting reverse-mode parameter gradients."""

    def __init__(self, params: NetworkParams, directions: tuple[int, ...],
                 affine_inputs: list[np.ndarray], preacts: list[np.ndarray],
                 acts: list[np.ndarray], out: np.ndarray):
        self.params = params
        self.directions = directions
        self._affine_inputs = affine_inputs  # jet block entering each affine
        self._preacts = preacts              # pre-activation jet blocks, hidden layers
        self._acts = acts                    # tanh(value component), hidden layers
        self._out = out

    def jets(self) -> Jet2Batch:
        k = len(self.directions)
        vals = self._out[0]
        if k == 0:
            return Jet2Batch(vals, None, None, ())
        d1 = np.moveaxis(self._out[1 : 1 + k], 0, 2).copy()
        d2 = np.moveaxis(self._out[1 + k :], 0, 2).copy()
        return Jet2Batch(vals, d1, d2, self.directions)

    def backprop(self, bar_values: np.ndarray, bar_d1: np.ndarray | None = None,
                 bar_d2: np.ndarray | None = None) -> np.ndarray:
        """Accumulate d(loss)/d(params) for a scalar loss with the given
        cotangents on the jet outputs. Returns a flat gradient vector."""
        k = len(self.directions)
        batch, out_dim = bar_values.shape
        comps = 1 + 2 * k
        bar = np.zeros((comps, batch, out_dim))
        bar[0] = bar_values
        if k:
            if bar_d1 is not None:
                bar[1 : 1 + k] = np.moveaxis(bar_d1, 2, 0)
            if bar_d2 is not None:
                bar[1 + k :] = np.moveaxis(bar_d2, 2, 0)

        layers = self.params.layers()
        grad = np.zeros_like(self.params.flat)
        grad_views = NetworkParams(self.params.shape, grad).layers()

        for idx in range(len(layers) - 1, -1, -1):
            if idx < len(layers) - 1:
                bar = self._tanh_backward(bar, self._preacts[idx], self._acts[idx], k)
            w, _ = layers[idx]
            gw, gb = grad_views[idx]
            j_in = self._affine_inputs[idx]
            bar2 = bar.reshape(comps * batch, -1)
            gw += bar2.T @ j_in.reshape(comps * batch, -1)
            gb += bar[0].sum(axis=0)
            if idx:  # cotangent on the layer input, skipped at the bottom
                bar = (bar2 @ w).reshape(comps, batch, -1)
        return grad

    @staticmethod
    def _tanh_backward(bar_y: np.ndarray, u: np.ndarray, y0: np.ndarray, k: int):
        s = 1.0 - y0 * y0                  # tanh'
        bar_u = np.empty_like(bar_y)
        np.multiply(bar_y[0], s, out=bar_u[0])
        if k:
            bn = -2.0 * y0 * s                 # tanh''
            cn = (6.0 * y0 * y0 - 2.0) * s     # d(tanh'')/du
            u1 = u[1 : 1 + k]
            u2 = u[1 + k :]
            by1 = bar_y[1 : 1 + k]
            by2 = bar_y[1 + k :]
            bar_u[0] += np.einsum("kbn,kbn->bn", by1, u1) * bn
            bar_u[0] += np.einsum("kbn,kbn->bn", by2, u2) * bn
            bar_u[0] += np.einsum("kbn,kbn,kbn->bn", by2, u1, u1) * cn
            bar_u[1 : 1 + k] = by1 * s + by2 * (2.0 * bn) * u1
            bar_u[1 + k :] = by2 * s
        return bar_u


def record_jets(params: NetworkParams, inputs: np.ndarray,
                directions: tuple[int, ...] = ()) -> JetTape:
    """Forward jet propagation, keeping intermediates for backprop.

    With empty ``directions`` this is a plain recorded forward pass.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.shape.input_dim:
        raise ValueError(
            f"inputs must be [batch x {params.shape.input_dim}], got {x.shape}"
        )
    if any(d < 0 or d >= params.shape.input_dim for d in directions):
        raise ValueError(f"direction index out of range: {directions}")

    batch = x.shape[0]
    k = len(directions)
    comps = 1 + 2 * k
    j = np.zeros((comps, batch, params.shape.input_dim))
    j[0] = x
    for i, d in enumerate(directions):
        j[1 + i, :, d] = 1.0

    layers = params.layers()
    affine_inputs, preacts, acts = [], [], []
    for idx, (w, b) in enumerate(layers):
        affine_inputs.append(j)
        # single large GEMM instead of `batch` small batched matmuls
        u = (j.reshape(comps * batch, -1) @ w.T).reshape(comps, batch, -1)
        u[0] += b
        if idx == len(layers) - 1:
            j = u
            break
        y0 = np.tanh(u[0])
        y = np.empty_like(u)
        y[0] = y0
        if k:
            s = 1.0 - y0 * y0
            u1 = u[1 : 1 + k]
            np.multiply(u[1 + k :], s, out=y[1 + k :])
            y[1 + k :] -= (2.0 * y0 * s) * u1 * u1
            np.multiply(u1, s, out=y[1 : 1 + k])
        preacts.append(u)
        acts.append(y0)
        j = y
    return JetTape(params, tuple(directions), affine_inputs, preacts, acts, j)


def forward_jet2(params: NetworkParams, inputs: np.ndarray,
                 directions: tuple[int, ...]) -> Jet2Batch:
    """Values plus first/second derivatives along the given coordinates."""
    return record_jets(params, inputs, directions).jets()


@dataclass
class ScaledMlp:
    """MLP composed with an affine input map x -> (x - shift) * scale.

    Used to keep raw physical coordinates outside tanh saturation; jets and
    their cotangents are rescaled by the chain rule (scale, scale^2), so all
    derivatives are reported in physical units.
    """

    params: NetworkParams
    shift: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        self.shift = np.asarray(self.shift, dtype=np.float64)
        self.scale = np.asarray(self.scale, dtype=np.float64)

    @classmethod
    def for_box(cls, params: NetworkParams, lo, hi) -> "ScaledMlp":
        """Map the box [lo, hi] onto [-1, 1] per coordinate."""
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        return cls(params, (lo + hi) / 2.0, 2.0 / (hi - lo))

    def forward(self, x: np.ndarray) -> np.ndarray:
        return forward(self.params, (np.asarray(x) - self.shift) * self.scale)

    def record(self, x: np.ndarray, directions: tuple[int, ...] = ()) -> "ScaledTape":
        tape = record_jets(self.params, (np.asarray(x) - self.shift) * self.scale,
                           directions)
        return ScaledTape(tape, self.scale[list(directions)] if directions else None)


class ScaledTape:
    def __init__(self, tape: JetTape, dir_scale: np.ndarray | None):
        self._tape = tape
        self._s = dir_scale

    def jets(self) -> Jet2Batch:
        jets = self._tape.jets()
        if self._s is not None:
            jets.d1 = jets.d1 * self._s
            jets.d2 = jets.d2 * self._s**2
        return jets

    def backprop(self, bar_values, bar_d1=None, bar_d2=None) -> np.ndarray:
        if self._s is not None:
            if bar_d1 is not None:
                bar_d1 = bar_d1 * self._s
            if bar_d2 is not None:
                bar_d2 = bar_d2 * self._s**2
        return self._tape.backprop(bar_values, bar_d1, bar_d2)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(flat: np.ndarray, grad: np.ndarray, state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> np.ndarray:
    """One Adam update; mutates ``state``, returns the new parameter vector."""
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    mhat = state.m / (1.0 - beta1**state.step)
    vhat = state.v / (1.0 - beta2**state.step)
    return flat - lr * mhat / (np.sqrt(vhat) + eps)


def save_params(path, params: NetworkParams) -> None:
    """Checkpoint: shape descriptor plus flat vector, bit-exact round trip."""
    np.savez(
        path,
        layout_version=1,
        input_dim=params.shape.input_dim,
        output_dim=params.shape.output_dim,
        hidden_layers=params.shape.hidden_layers,
        hidden_width=params.shape.hidden_width,
        activation=params.shape.activation,
        flat=params.flat,
    )


def load_params(path) -> NetworkParams:
    with np.load(path, allow_pickle=False) as data:
        shape = NetworkShape(
            input_dim=int(data["input_dim"]),
            output_dim=int(data["output_dim"]),
            hidden_layers=int(data["hidden_layers"]),
            hidden_width=int(data["hidden_width"]),
            activation=str(data["activation"]),
        )
        return NetworkParams(shape, data["flat"].copy())
