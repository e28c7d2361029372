"""Small fully connected networks with hand-written backprop and Adam.

Parameters live in one flat float64 vector so that Adam, soft updates and
checkpointing are plain vector operations. Layer ``k`` occupies a contiguous
slice holding its weight matrix ``W_k`` (shape ``(out, in)``, row-major)
followed by its bias ``b_k`` (shape ``(out,)``). Hidden layers use ReLU.

Checkpoint layout (``save_params`` / ``load_params``)::

    ROBUSTFT-MLP 1\\n
    input_dim=<int>\\n
    hidden_dims=<int>,<int>,...\\n
    output_dim=<int>\\n
    output_activation=<tanh|identity>\\n
    param_count=<P>\\n
    \\n
    <P little-endian IEEE-754 float64 values, flat layout as above>
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from robustft.errors import NumericError, ParseError, ShapeError

ACTIVATIONS = ("tanh", "identity")
_MAGIC = b"ROBUSTFT-MLP 1"


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple[int, ...] = (256, 256)
    output_dim: int = 1
    output_activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ShapeError(f"dimensions must be >= 1, got {self}")
        if len(self.hidden_dims) < 1 or min(self.hidden_dims) < 1:
            raise ShapeError(f"need at least one hidden layer of width >= 1, got {self.hidden_dims}")
        if self.output_activation not in ACTIVATIONS:
            raise ShapeError(f"output_activation must be one of {ACTIVATIONS}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) for every layer."""
        sizes = [self.input_dim, *self.hidden_dims, self.output_dim]
        return list(zip(sizes[:-1], sizes[1:]))

    @property
    def param_count(self) -> int:
        return sum(o * i + o for i, o in self.layer_dims)


@dataclass(frozen=True)
class MlpParams:
    spec: MlpSpec
    flat: np.ndarray

    def __post_init__(self):
        flat = np.asarray(self.flat, dtype=np.float64)
        if flat.shape != (self.spec.param_count,):
            raise ShapeError(f"expected {self.spec.param_count} parameters, got shape {flat.shape}")
        object.__setattr__(self, "flat", flat)

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views ``(W, b)`` into ``flat``; mutating them mutates the params."""
        out, pos = [], 0
        for fan_in, fan_out in self.spec.layer_dims:
            w = self.flat[pos : pos + fan_in * fan_out].reshape(fan_out, fan_in)
            pos += fan_in * fan_out
            b = self.flat[pos : pos + fan_out]
            pos += fan_out
            out.append((w, b))
        return out

    @classmethod
    def from_layers(cls, spec: MlpSpec, layers) -> "MlpParams":
        parts = []
        for (w, b), (fan_in, fan_out) in zip(layers, spec.layer_dims, strict=True):
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if w.shape != (fan_out, fan_in) or b.shape != (fan_out,):
                raise ShapeError(f"layer shapes {w.shape}, {b.shape} do not match ({fan_out}, {fan_in})")
            parts += [w.ravel(), b]
        return cls(spec, np.concatenate(parts))

    def copy(self) -> "MlpParams":
        return MlpParams(self.spec, self.flat.copy())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flat)))


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_params(spec: MlpSpec, rng: np.random.Generator) -> MlpParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    parts = []
    for fan_in, fan_out in spec.layer_dims:
        bound = 1.0 / np.sqrt(fan_in)
        parts.append(rng.uniform(-bound, bound, size=fan_out * fan_in))
        parts.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(spec, np.concatenate(parts))


def zeros_like(params: MlpParams) -> MlpParams:
    return MlpParams(params.spec, np.zeros_like(params.flat))


def init_adam(params: MlpParams, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    n = params.spec.param_count
    return AdamState(np.zeros(n), np.zeros(n), 0, lr, beta1, beta2, eps)


def _as_batch(spec: MlpSpec, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeError(f"input of shape {x.shape} does not match input_dim={spec.input_dim}")
    return x, single


def forward_cache(params: MlpParams, x) -> tuple[np.ndarray, tuple]:
    """Forward pass that also returns the activations needed by ``backward``."""
    spec = params.spec
    h, single = _as_batch(spec, x)
    layers = params.layers()
    acts = [h]
    for w, b in layers[:-1]:
        h = np.maximum(h @ w.T + b, 0.0)
        acts.append(h)
    w, b = layers[-1]
    y = h @ w.T + b
    if spec.output_activation == "tanh":
        y = np.tanh(y)
    return (y[0] if single else y), (acts, y, single)


def forward(params: MlpParams, x) -> np.ndarray:
    return forward_cache(params, x)[0]


def backward(params: MlpParams, cache, upstream) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of sum(upstream * output) w.r.t. the flat params and the input."""
    acts, y, single = cache
    u = np.asarray(upstream, dtype=np.float64)
    if single:
        u = u[None, :] if u.ndim == 1 else u
    if u.shape != y.shape:
        raise ShapeError(f"upstream shape {u.shape} does not match output shape {y.shape}")
    if params.spec.output_activation == "tanh":
        u = u * (1.0 - y * y)
    layers = params.layers()
    grads = []
    delta = u
    for k in range(len(layers) - 1, -1, -1):
        w, _ = layers[k]
        h_in = acts[k]
        grads.append((delta.sum(axis=0), (delta.T @ h_in).ravel()))
        delta = delta @ w
        if k > 0:
            delta = delta * (h_in > 0.0)
    flat = np.concatenate([part for gb, gw in reversed(grads) for part in (gw, gb)])
    gx = delta[0] if single else delta
    return flat, gx


def grad(params: MlpParams, x, upstream) -> tuple[np.ndarray, np.ndarray]:
    """Exact reverse-mode gradient of <upstream, forward(params, x)>.

    Returns ``(d_params_flat, d_x)``. With a batch of inputs the parameter
    gradient is summed over the batch and ``d_x`` has one row per input.
    """
    _, cache = forward_cache(params, x)
    return backward(params, cache, upstream)


def adam_step(params: MlpParams, grads, state: AdamState) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam descent step. Raises NumericError on non-finite grads."""
    g = np.asarray(grads, dtype=np.float64)
    if g.shape != params.flat.shape:
        raise ShapeError(f"gradient shape {g.shape} does not match params {params.flat.shape}")
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite gradient passed to adam_step")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    flat = params.flat - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return MlpParams(params.spec, flat), replace(state, m=m, v=v, t=t)


def soft_update(target: MlpParams, online: MlpParams, tau: float) -> MlpParams:
    """target <- tau * online + (1 - tau) * target."""
    if target.spec != online.spec:
        raise ShapeError("soft_update between networks of different specs")
    return MlpParams(target.spec, tau * online.flat + (1.0 - tau) * target.flat)


def save_params(params: MlpParams, path) -> None:
    spec = params.spec
    header = (
        _MAGIC + b"\n"
        + f"input_dim={spec.input_dim}\n".encode()
        + f"hidden_dims={','.join(map(str, spec.hidden_dims))}\n".encode()
        + f"output_dim={spec.output_dim}\n".encode()
        + f"output_activation={spec.output_activation}\n".encode()
        + f"param_count={spec.param_count}\n\n".encode()
    )
    Path(path).write_bytes(header + params.flat.astype("<f8").tobytes())


def load_params(path) -> MlpParams:
    raw = Path(path).read_bytes()
    end = raw.find(b"\n\n")
    if end < 0:
        raise ParseError("missing header terminator", path=path)
    lines = raw[:end].split(b"\n")
    if lines[0] != _MAGIC:
        raise ParseError(f"bad magic {lines[0]!r}", path=path, line=1)
    fields = {}
    for lineno, line in enumerate(lines[1:], start=2):
        key, sep, value = line.decode("ascii", errors="replace").partition("=")
        if not sep:
            raise ParseError(f"expected key=value, got {line!r}", path=path, line=lineno)
        fields[key] = value
    try:
        spec = MlpSpec(
            input_dim=int(fields["input_dim"]),
            hidden_dims=tuple(int(h) for h in fields["hidden_dims"].split(",")),
            output_dim=int(fields["output_dim"]),
            output_activation=fields["output_activation"],
        )
        count = int(fields["param_count"])
    except (KeyError, ValueError) as exc:
        raise ParseError(f"invalid header: {exc}", path=path) from exc
    if count != spec.param_count:
        raise ParseError(f"param_count {count} inconsistent with spec ({spec.param_count})", path=path)
    body = raw[end + 2 :]
    if len(body) != 8 * count:
        raise ParseError(f"expected {8 * count} payload bytes, found {len(body)}", path=path, offset=end + 2 + len(body))
    return MlpParams(spec, np.frombuffer(body, dtype="<f8").astype(np.float64))
