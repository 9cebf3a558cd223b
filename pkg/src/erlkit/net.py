"""Small MLPs over flat parameter vectors, with hand-written backprop.

Parameters live in one flat float64 vector whose layout is a pure function
of the :class:`MlpSpec`. Stacks of vectors (shape ``(m, P)``) evaluate ``m``
networks at once, which is how populations are batched.

Two dense kernels exist. The default one accumulates ``x[i] * W[i]`` over
inputs in a fixed order, so each output row is bitwise independent of the
batch it sits in. ``exact=False`` switches to BLAS matmul, which is faster
for training minibatches but may change low-order bits with the batch shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numba
import numpy as np

from erlkit.env import NumericFault
from erlkit.exec import rng

HEADS = ("linear", "tanh", "gaussian", "categorical")
LN_EPS = 1e-5


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int
    head: str = "linear"
    layer_norm: bool = False
    scale: float = 1.0  # tanh head output scale
    min_logstd: float = -20.0
    max_logstd: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.hidden:
            raise ValueError("hidden must contain at least one layer")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if self.head == "tanh" and not self.scale > 0:
            raise ValueError("tanh head scale must be positive")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)


class Segment(NamedTuple):
    layer: int
    name: str
    offset: int
    shape: tuple[int, ...]
    size: int


@lru_cache(maxsize=None)
def layout(spec: MlpSpec) -> tuple[Segment, ...]:
    """Ordered segment table: layer order, weights before biases, gain before offset."""
    segs = []
    offset = 0

    def add(layer, name, shape):
        nonlocal offset
        size = int(np.prod(shape))
        segs.append(Segment(layer, name, offset, shape, size))
        offset += size

    widths = spec.widths
    n_layers = len(widths) - 1
    for layer in range(n_layers):
        fan_in, fan_out = widths[layer], widths[layer + 1]
        add(layer, "W", (fan_in, fan_out))
        add(layer, "b", (fan_out,))
        if spec.layer_norm and layer < n_layers - 1:
            add(layer, "gain", (fan_out,))
            add(layer, "offset", (fan_out,))
    if spec.head == "gaussian":
        add(n_layers, "logstd", (spec.output_dim,))
    return tuple(segs)


def param_count(spec: MlpSpec) -> int:
    last = layout(spec)[-1]
    return last.offset + last.size


def unflatten(spec: MlpSpec, params: np.ndarray) -> list[dict[str, np.ndarray]]:
    """Per-layer views into ``params`` (leading stack axes are kept)."""
    params = np.asarray(params)
    if params.shape[-1] != param_count(spec):
        raise ValueError(f"expected {param_count(spec)} parameters, got {params.shape[-1]}")
    lead = params.shape[:-1]
    layers: list[dict[str, np.ndarray]] = [dict() for _ in range(len(spec.widths))]
    for seg in layout(spec):
        layers[seg.layer][seg.name] = params[..., seg.offset : seg.offset + seg.size].reshape(lead + seg.shape)
    return layers[: len(spec.widths) - 1] + ([layers[-1]] if layers[-1] else [])


def flatten(spec: MlpSpec, layers: list[dict[str, np.ndarray]]) -> np.ndarray:
    pieces = []
    lead = None
    for seg in layout(spec):
        arr = np.asarray(layers[seg.layer][seg.name], dtype=np.float64)
        this_lead = arr.shape[: arr.ndim - len(seg.shape)]
        if arr.shape[len(this_lead) :] != seg.shape:
            raise ValueError(f"segment {seg.layer}.{seg.name}: expected shape {seg.shape}, got {arr.shape}")
        lead = this_lead if lead is None else lead
        pieces.append(arr.reshape(lead + (seg.size,)))
    return np.concatenate(pieces, axis=-1)


def init_params(spec: MlpSpec, key) -> np.ndarray:
    """Glorot-uniform weights, zero biases, unit layer-norm gains."""
    gen = rng.generator(key)
    out = np.zeros(param_count(spec))
    for seg in layout(spec):
        view = out[seg.offset : seg.offset + seg.size]
        if seg.name == "W":
            limit = np.sqrt(6.0 / (seg.shape[0] + seg.shape[1]))
            view[:] = gen.uniform(-limit, limit, size=seg.size)
        elif seg.name == "gain":
            view[:] = 1.0
    return out


def dense_reference(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``x @ W + b`` accumulated over inputs in a fixed order (numpy broadcasting).

    x: (*lead, batch, fan_in); W: (*lead, fan_in, fan_out); b: (*lead, fan_out).
    """
    out = x[..., 0:1] * W[..., None, 0, :]
    for i in range(1, W.shape[-2]):
        out += x[..., i : i + 1] * W[..., None, i, :]
    out += b[..., None, :]
    return out


@numba.njit(cache=True)
def _dense_kernel(x, W, b, out):
    # Same operation order as dense_reference: x0*W0, then += xi*Wi, then += b.
    M, B, I = x.shape
    O = W.shape[2]
    for m in range(M):
        for r in range(B):
            for o in range(O):
                out[m, r, o] = x[m, r, 0] * W[m, 0, o]
            for i in range(1, I):
                xi = x[m, r, i]
                for o in range(O):
                    out[m, r, o] += xi * W[m, i, o]
            for o in range(O):
                out[m, r, o] += b[m, o]


def dense(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Compiled :func:`dense_reference`; bitwise identical, row results never depend on the batch."""
    I, O = W.shape[-2:]
    if W.ndim == 2:
        lead = x.shape[:-1]
        x3 = np.ascontiguousarray(x, dtype=np.float64).reshape(1, -1, I)
        W3, b3 = W[None], b[None]
    elif x.shape[:-2] == W.shape[:-2]:
        lead = x.shape[:-1]
        x3 = np.ascontiguousarray(x, dtype=np.float64).reshape(-1, x.shape[-2], I)
        W3, b3 = W.reshape(-1, I, O), b.reshape(-1, O)
    else:
        return dense_reference(x, W, b)
    out = np.empty(x3.shape[:2] + (O,))
    _dense_kernel(x3, W3, b3, out)
    return out.reshape(lead + (O,))


def _dense_blas(x, W, b):
    return np.matmul(x, W) + b[..., None, :]


@dataclass
class GradTape:
    """Layer inputs and intermediates of one forward pass; single use."""

    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    norm: list = field(default_factory=list)
    head: dict = field(default_factory=dict)
    batch_shape: tuple = ()
    consumed: bool = False


def _check_finite(a, layer):
    if not np.all(np.isfinite(a)):
        raise NumericFault("non-finite network activation", layer)


def forward(spec: MlpSpec, params, obs, tape: bool = False, exact: bool = True):
    """Evaluate the network.

    ``params`` is (*lead, P) and ``obs`` is (*lead, batch, input_dim). Returns
    the head output (a ``(mean, logstd)`` pair for gaussian heads), plus a
    :class:`GradTape` when ``tape`` is true.
    """
    layers = unflatten(spec, params)
    x = np.asarray(obs, dtype=np.float64)
    if x.shape[-1] != spec.input_dim:
        raise ValueError(f"expected input dim {spec.input_dim}, got {x.shape[-1]}")
    if not np.all(np.isfinite(x)):
        raise NumericFault("non-finite network input", 0)
    lin = dense if exact else _dense_blas
    rec = GradTape(batch_shape=x.shape) if tape else None
    n_layers = len(spec.widths) - 1
    for li in range(n_layers):
        p = layers[li]
        z = lin(x, p["W"], p["b"])
        _check_finite(z, li)
        if rec is not None:
            rec.inputs.append(x)
            rec.pre.append(z)
        if li == n_layers - 1:
            break
        if spec.layer_norm:
            z = np.ascontiguousarray(z)
            mu = np.mean(z, axis=-1, keepdims=True)
            centered = z - mu
            var = np.mean(centered * centered, axis=-1, keepdims=True)
            inv_std = 1.0 / np.sqrt(var + LN_EPS)
            xhat = centered * inv_std
            if rec is not None:
                rec.norm.append((xhat, inv_std))
            z = xhat * p["gain"][..., None, :] + p["offset"][..., None, :]
        x = np.maximum(z, 0.0)
    if spec.head == "tanh":
        t = np.tanh(z)
        out = spec.scale * t
        if rec is not None:
            rec.head["tanh"] = t
    elif spec.head == "gaussian":
        raw = layers[-1]["logstd"]
        out = (z, np.clip(raw, spec.min_logstd, spec.max_logstd))
    else:
        out = z
    if tape:
        return out, rec
    return out


def backward(spec: MlpSpec, params, tape: GradTape, output_grad, input_grad: bool = False,
             param_grad: bool = True):
    """Reverse-mode gradient of ``sum(output * output_grad)`` w.r.t. params.

    For gaussian heads ``output_grad`` is ``(d_mean, d_logstd)`` with
    ``d_logstd`` already reduced over the batch. Returns the flat gradient, or
    ``(grad, d_input)`` when ``input_grad`` is true; ``grad`` is None when
    ``param_grad`` is false.
    """
    if tape.consumed:
        raise RuntimeError("GradTape already consumed")
    tape.consumed = True
    layers = unflatten(spec, params)
    grads = [dict() for _ in layers]
    n_layers = len(spec.widths) - 1
    out_shape = tape.batch_shape[:-1] + (spec.output_dim,)

    if spec.head == "gaussian":
        d_mean, d_logstd = output_grad
        dz = np.asarray(d_mean, dtype=np.float64)
        raw = layers[-1]["logstd"]
        inside = (raw >= spec.min_logstd) & (raw <= spec.max_logstd)
        grads[-1]["logstd"] = np.where(inside, np.asarray(d_logstd, dtype=np.float64), 0.0)
    else:
        dz = np.asarray(output_grad, dtype=np.float64)
    if dz.shape != out_shape:
        raise ValueError(f"output_grad shape {dz.shape} does not match forward output {out_shape}")
    if spec.head == "tanh":
        t = tape.head["tanh"]
        dz = dz * spec.scale * (1.0 - t * t)

    for li in range(n_layers - 1, -1, -1):
        x = tape.inputs[li]
        p = layers[li]
        if param_grad:
            grads[li]["W"] = np.matmul(np.swapaxes(x, -1, -2), dz)
            grads[li]["b"] = dz.sum(axis=-2)
        if li == 0 and not input_grad:
            break
        dx = np.matmul(dz, np.swapaxes(p["W"], -1, -2))
        if li == 0:
            break
        # back through ReLU (and layer norm) of the previous hidden layer
        prev = li - 1
        z_prev = tape.pre[prev]
        if spec.layer_norm:
            xhat, inv_std = tape.norm[prev]
            gain = layers[prev]["gain"][..., None, :]
            y = xhat * gain + layers[prev]["offset"][..., None, :]
            dy = dx * (y > 0)
            if param_grad:
                grads[prev]["gain"] = (dy * xhat).sum(axis=-2)
                grads[prev]["offset"] = dy.sum(axis=-2)
            dxhat = dy * gain
            dz = inv_std * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
        else:
            dz = dx * (z_prev > 0)

    flat = flatten(spec, grads) if param_grad else None
    if input_grad:
        return flat, dx
    return flat
