"""Feed-forward actor-critic network in plain numpy.

A ReLU trunk feeds two linear heads: policy logits (one per sleep action)
and a scalar state value. With ``shared=False`` the value head gets its own
trunk of the same shape.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptPayload, NonFiniteInput, ShapeMismatch, VersionMismatch

PARAM_FILE_VERSION = 1


@dataclass(frozen=True)
class MLPArchitecture:
    input_dim: int
    policy_head_dim: int
    hidden: tuple[int, ...] = (32, 32, 32, 32)
    shared: bool = True
    value_head_dim: int = 1
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if min((self.input_dim, self.policy_head_dim, *self.hidden)) < 1:
            raise ValueError("all layer dimensions must be >= 1")
        if self.value_head_dim != 1 or self.activation != "relu":
            raise ValueError("only a scalar value head with ReLU activations is supported")

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "policy_head_dim": self.policy_head_dim,
                "hidden": list(self.hidden), "shared": self.shared,
                "value_head_dim": self.value_head_dim, "activation": self.activation}


@dataclass(frozen=True, eq=False)
class MLPParams:
    """Weights are stored (out, in); every layer is ``W @ x + b``."""

    arch: MLPArchitecture
    trunk: list  # [(W, b), ...]
    policy_head: tuple
    value_head: tuple
    value_trunk: list | None = None

    def arrays(self) -> list[np.ndarray]:
        """All parameter arrays in a fixed canonical order."""
        out = []
        for W, b in self.trunk:
            out += [W, b]
        out += list(self.policy_head)
        if self.value_trunk is not None:
            for W, b in self.value_trunk:
                out += [W, b]
        out += list(self.value_head)
        return out

    def with_arrays(self, arrays) -> "MLPParams":
        arrays = list(arrays)
        expected = self.arrays()
        if len(arrays) != len(expected) or any(a.shape != e.shape for a, e in zip(arrays, expected)):
            raise ShapeMismatch("parameter arrays do not match the architecture")
        it = iter(arrays)
        trunk = [(next(it), next(it)) for _ in self.trunk]
        policy_head = (next(it), next(it))
        value_trunk = None if self.value_trunk is None else [(next(it), next(it)) for _ in self.value_trunk]
        value_head = (next(it), next(it))
        return MLPParams(self.arch, trunk, policy_head, value_head, value_trunk)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MLPParams) or self.arch != other.arch:
            return False
        a, b = self.arrays(), other.arrays()
        return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


# GradientSet shares the parameter layout; gradients live in the same container.
GradientSet = MLPParams


def _orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def _dense_stack(rng, sizes, gain):
    return [(_orthogonal(rng, o, i, gain), np.zeros(o)) for i, o in zip(sizes[:-1], sizes[1:])]


def init_params(arch: MLPArchitecture, seed: int = 0) -> MLPParams:
    """Orthogonal init; the policy head is scaled by 0.01 so the initial policy is near uniform."""
    rng = np.random.default_rng(seed)
    sizes = [arch.input_dim, *arch.hidden]
    trunk = _dense_stack(rng, sizes, np.sqrt(2.0))
    last = sizes[-1]
    policy_head = (_orthogonal(rng, arch.policy_head_dim, last, 0.01), np.zeros(arch.policy_head_dim))
    value_trunk = None if arch.shared else _dense_stack(rng, sizes, np.sqrt(2.0))
    value_head = (_orthogonal(rng, 1, last, 1.0), np.zeros(1))
    return MLPParams(arch, trunk, policy_head, value_head, value_trunk)


def zeros_like(params: MLPParams) -> MLPParams:
    return params.with_arrays([np.zeros_like(a) for a in params.arrays()])


# ------------------------------------------------------------- forward ---

def _run_trunk(layers, x):
    acts = [x]
    pre = []
    h = x
    for W, b in layers:
        z = h @ W.T + b
        pre.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    return h, pre, acts


def _check_input(params: MLPParams, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != params.arch.input_dim:
        raise ShapeMismatch(f"expected input of length {params.arch.input_dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x2)):
        raise NonFiniteInput("network input contains NaN or inf")
    return x2, single


def forward(params: MLPParams, x):
    """Return ``(logits, value)``; batched when ``x`` is 2-D."""
    x2, single = _check_input(params, x)
    h, _, _ = _run_trunk(params.trunk, x2)
    Wp, bp = params.policy_head
    logits = h @ Wp.T + bp
    if params.value_trunk is not None:
        h, _, _ = _run_trunk(params.value_trunk, x2)
    Wv, bv = params.value_head
    value = (h @ Wv.T + bv)[:, 0]
    if single:
        return logits[0], float(value[0])
    return logits, value


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


# ------------------------------------------------------------ backward ---

def _back_trunk(layers, pre, acts, dh):
    grads = []
    for (W, _b), z, a_in in zip(reversed(layers), reversed(pre), reversed(acts[:-1])):
        dz = dh * (z > 0.0)
        grads.append((dz.T @ a_in, dz.sum(axis=0)))
        dh = dz @ W
    grads.reverse()
    return grads


def backward(params: MLPParams, x, dlogits, dvalue) -> GradientSet:
    """Gradients of ``sum(dlogits * logits) + sum(dvalue * value)`` w.r.t. every parameter."""
    x2, single = _check_input(params, x)
    dl = np.asarray(dlogits, dtype=np.float64).reshape(x2.shape[0], -1)
    dv = np.asarray(dvalue, dtype=np.float64).reshape(x2.shape[0], 1)
    if dl.shape[1] != params.arch.policy_head_dim:
        raise ShapeMismatch("upstream logits gradient has the wrong width")

    h, pre, acts = _run_trunk(params.trunk, x2)
    Wp, _ = params.policy_head
    Wv, _ = params.value_head
    g_policy = (dl.T @ h, dl.sum(axis=0))
    dh = dl @ Wp
    if params.value_trunk is None:
        g_value = (dv.T @ h, dv.sum(axis=0))
        dh = dh + dv @ Wv
        g_vtrunk = None
    else:
        hv, pre_v, acts_v = _run_trunk(params.value_trunk, x2)
        g_value = (dv.T @ hv, dv.sum(axis=0))
        g_vtrunk = _back_trunk(params.value_trunk, pre_v, acts_v, dv @ Wv)
    g_trunk = _back_trunk(params.trunk, pre, acts, dh)
    return MLPParams(params.arch, g_trunk, g_policy, g_value, g_vtrunk)


def global_norm(grads: GradientSet) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.arrays())))


def scale(grads: GradientSet, factor: float) -> GradientSet:
    return grads.with_arrays([g * factor for g in grads.arrays()])


# ----------------------------------------------------------------- adam ---

@dataclass(frozen=True, eq=False)
class AdamState:
    m: list
    v: list
    t: int = 0


def adam_init(params: MLPParams) -> AdamState:
    return AdamState([np.zeros_like(a) for a in params.arrays()],
                     [np.zeros_like(a) for a in params.arrays()], 0)


def adam_step(params: MLPParams, grads: GradientSet, state: AdamState, lr: float = 3e-4,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One descent step on ``grads``; returns ``(new_params, new_state)``."""
    ps, gs = params.arrays(), grads.arrays()
    if len(ps) != len(gs) or len(ps) != len(state.m) or any(p.shape != g.shape for p, g in zip(ps, gs)):
        raise ShapeMismatch("gradients do not match parameters")
    t = state.t + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(ps, gs, state.m, state.v):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return params.with_arrays(new_p), AdamState(new_m, new_v, t)


# -------------------------------------------------------- serialization ---

def to_dict(params: MLPParams) -> dict:
    layers = []
    for a in params.arrays():
        layers.append({"shape": list(a.shape), "data": [float(x) for x in a.ravel(order="C")]})
    return {"format_version": PARAM_FILE_VERSION, "architecture": params.arch.to_dict(),
            "arrays": layers}


def from_dict(d: dict) -> MLPParams:
    if not isinstance(d, dict) or "format_version" not in d:
        raise CorruptPayload("missing format_version")
    if d["format_version"] != PARAM_FILE_VERSION:
        raise VersionMismatch(f"parameter file version {d['format_version']!r}")
    try:
        a = d["architecture"]
        arch = MLPArchitecture(int(a["input_dim"]), int(a["policy_head_dim"]),
                               tuple(a["hidden"]), bool(a["shared"]))
        arrays = [np.array(e["data"], dtype=np.float64).reshape(e["shape"]) for e in d["arrays"]]
        skeleton = init_params(arch, seed=0)
        params = skeleton.with_arrays(arrays)
    except (KeyError, TypeError, ValueError, ShapeMismatch) as exc:
        raise CorruptPayload(str(exc)) from None
    if not all(np.all(np.isfinite(x)) for x in arrays):
        raise CorruptPayload("non-finite parameter values")
    return params


def serialize(params: MLPParams) -> bytes:
    return json.dumps(to_dict(params), separators=(",", ":")).encode()


def deserialize(payload: bytes) -> MLPParams:
    try:
        d = json.loads(payload.decode() if isinstance(payload, (bytes, bytearray)) else payload)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptPayload(str(exc)) from None
    return from_dict(d)


def save(params: MLPParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(params))


def load(path) -> MLPParams:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
