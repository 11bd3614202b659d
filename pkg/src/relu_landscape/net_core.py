"""Dense scalar-in/scalar-out feed-forward networks on a flat weight vector.

Layout of the flat vector: layers from input to output; for each layer the
weight matrix in (destination-major, source-minor) order followed by that
layer's biases.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

SOFTPLUS_CUTOFF = 30.0


class ContractError(ValueError):
    """Raised when inputs violate an operation's preconditions."""


@dataclass(frozen=True)
class Activation:
    kind: str = "relu"
    sharpness: float = 5000.0

    def __post_init__(self):
        if self.kind not in ("relu", "smoothed"):
            raise ContractError(f"unknown activation kind {self.kind!r}")
        if not (self.sharpness > 0 and math.isfinite(self.sharpness)):
            raise ContractError("sharpness must be positive and finite")

    @classmethod
    def relu(cls) -> "Activation":
        return cls("relu")

    @classmethod
    def smoothed(cls, sharpness: float = 5000.0) -> "Activation":
        return cls("smoothed", float(sharpness))

    @property
    def code(self) -> int:
        return 0 if self.kind == "relu" else 1

    def to_dict(self) -> dict:
        if self.kind == "relu":
            return {"kind": "relu"}
        return {"kind": "smoothed", "sharpness": self.sharpness}

    @classmethod
    def from_dict(cls, d: dict) -> "Activation":
        if d["kind"] == "relu":
            return cls.relu()
        return cls.smoothed(d["sharpness"])


@dataclass(frozen=True)
class Architecture:
    """K hidden layers of N units, scalar input and output."""

    hidden_layers: int
    hidden_width: int
    activation: Activation = field(default_factory=Activation.relu)
    input_dim: int = 1
    output_dim: int = 1

    def __post_init__(self):
        for name in ("hidden_layers", "hidden_width", "input_dim", "output_dim"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ContractError(f"{name} must be a positive integer, got {v!r}")
        if self.input_dim != 1 or self.output_dim != 1:
            raise ContractError("only scalar input and output are supported")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim,) + (self.hidden_width,) * self.hidden_layers + (self.output_dim,)

    @property
    def param_count(self) -> int:
        n, k = self.hidden_width, self.hidden_layers
        return (self.input_dim * n + n) + (k - 1) * (n * n + n) + (n * self.output_dim + self.output_dim)

    def with_activation(self, activation: Activation) -> "Architecture":
        return Architecture(self.hidden_layers, self.hidden_width, activation,
                            self.input_dim, self.output_dim)

    def layer_offsets(self) -> list[tuple[int, int, int]]:
        """(weight_offset, bias_offset, end) for every layer."""
        out, off = [], 0
        ws = self.widths
        for fi, fo in zip(ws[:-1], ws[1:]):
            out.append((off, off + fi * fo, off + fi * fo + fo))
            off += fi * fo + fo
        return out

    def to_dict(self) -> dict:
        return {
            "hidden_layers": self.hidden_layers,
            "hidden_width": self.hidden_width,
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "activation": self.activation.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(int(d["hidden_layers"]), int(d["hidden_width"]),
                   Activation.from_dict(d.get("activation", {"kind": "relu"})),
                   int(d.get("input_dim", 1)), int(d.get("output_dim", 1)))


@dataclass(frozen=True)
class Dataset:
    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = np.array(self.xs, dtype=np.float64)
        ys = np.array(self.ys, dtype=np.float64)
        if xs.ndim != 1 or xs.shape != ys.shape:
            raise ContractError("xs and ys must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise ContractError("dataset entries must be finite")
        if xs.size > 1 and np.any(np.diff(xs) <= 0):
            raise ContractError("xs must be strictly increasing")
        xs.flags.writeable = False
        ys.flags.writeable = False
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    def __len__(self):
        return self.xs.size


def _check(arch: Architecture, w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.size != arch.param_count:
        raise ContractError(f"weight vector has length {w.size}, architecture needs {arch.param_count}")
    return w


def unflatten(arch: Architecture, w) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat vector into (W, b) per layer; W has shape (fan_out, fan_in)."""
    w = _check(arch, w)
    ws = arch.widths
    return [(w[a:b].reshape(ws[i + 1], ws[i]).copy(), w[b:c].copy())
            for i, (a, b, c) in enumerate(arch.layer_offsets())]


def flatten(layers) -> np.ndarray:
    return np.concatenate([np.concatenate([np.asarray(W, float).ravel(), np.asarray(b, float).ravel()])
                           for W, b in layers])


def softplus(z, beta):
    """Overflow-safe (1/beta) * log(1 + exp(beta * z))."""
    z = np.asarray(z, dtype=np.float64)
    bz = beta * z
    out = np.empty_like(bz)
    hi = bz > SOFTPLUS_CUTOFF
    lo = bz < -SOFTPLUS_CUTOFF
    mid = ~(hi | lo)
    out[hi] = z[hi] + np.log1p(np.exp(-bz[hi])) / beta
    out[lo] = np.exp(bz[lo]) / beta
    out[mid] = np.log1p(np.exp(bz[mid])) / beta
    return out


def activate(activation: Activation, z):
    if activation.kind == "relu":
        return np.maximum(z, 0.0)
    return softplus(z, activation.sharpness)


def preactivations(arch: Architecture, w, xs) -> list[np.ndarray]:
    """Hidden-layer preactivations, each of shape (N, len(xs))."""
    a = np.atleast_1d(np.asarray(xs, dtype=np.float64))[None, :]
    out = []
    layers = unflatten(arch, w)
    for W, b in layers[:-1]:
        z = W @ a + b[:, None]
        out.append(z)
        a = activate(arch.activation, z)
    return out


def forward_many(arch: Architecture, w, xs) -> np.ndarray:
    a = np.atleast_1d(np.asarray(xs, dtype=np.float64))[None, :]
    layers = unflatten(arch, w)
    for W, b in layers[:-1]:
        a = activate(arch.activation, W @ a + b[:, None])
    W, b = layers[-1]
    return (W @ a + b[:, None])[0]


def forward(arch: Architecture, w, x: float) -> float:
    return float(forward_many(arch, w, [x])[0])


# ---------------------------------------------------------------------------
# compiled kernels


@njit(cache=True)
def _act(z, act, beta):
    if act == 0:
        return z if z > 0.0 else 0.0
    bz = beta * z
    if bz > 30.0:
        return z + math.log1p(math.exp(-bz)) / beta
    if bz < -30.0:
        return math.exp(bz) / beta
    return math.log1p(math.exp(bz)) / beta


@njit(cache=True)
def _dact(z, act, beta):
    if act == 0:
        return 1.0 if z > 0.0 else 0.0
    bz = beta * z
    if bz >= 0.0:
        return 1.0 / (1.0 + math.exp(-bz))
    e = math.exp(bz)
    return e / (1.0 + e)


# reassociation lets LLVM vectorize the per-sample reductions; results stay
# deterministic for a given platform and sample count
@njit(cache=True, fastmath={"reassoc"})
def _loss_grad_kernel(widths, w, xs, ys, act, beta, grad, Z, A, D, Dn, want_grad):
    n = xs.shape[0]
    L = widths.shape[0] - 1
    for t in range(n):
        A[0, 0, t] = xs[t]
    off = 0
    for l in range(L):
        fi = widths[l]
        fo = widths[l + 1]
        boff = off + fi * fo
        for j in range(fo):
            bj = w[boff + j]
            for t in range(n):
                Z[l, j, t] = bj
            for i in range(fi):
                wij = w[off + j * fi + i]
                if wij != 0.0:
                    for t in range(n):
                        Z[l, j, t] += wij * A[l, i, t]
            if l < L - 1:
                for t in range(n):
                    A[l + 1, j, t] = _act(Z[l, j, t], act, beta)
            else:
                for t in range(n):
                    A[l + 1, j, t] = Z[l, j, t]
        off = boff + fo
    loss = 0.0
    for t in range(n):
        r = A[L, 0, t] - ys[t]
        loss += r * r
        D[0, t] = 2.0 * r / n
    loss /= n
    if not want_grad:
        return loss
    # walk back through the layers; `off` is the end of the current layer
    for l in range(L - 1, -1, -1):
        fi = widths[l]
        fo = widths[l + 1]
        start = off - fi * fo - fo
        boff = start + fi * fo
        for j in range(fo):
            s = 0.0
            for t in range(n):
                s += D[j, t]
            grad[boff + j] = s
            for i in range(fi):
                s = 0.0
                for t in range(n):
                    s += D[j, t] * A[l, i, t]
                grad[start + j * fi + i] = s
        if l > 0:
            for i in range(fi):
                for t in range(n):
                    Dn[i, t] = 0.0
                for j in range(fo):
                    wji = w[start + j * fi + i]
                    if wji != 0.0:
                        for t in range(n):
                            Dn[i, t] += wji * D[j, t]
                for t in range(n):
                    Dn[i, t] *= _dact(Z[l - 1, i, t], act, beta)
            for i in range(fi):
                for t in range(n):
                    D[i, t] = Dn[i, t]
        off = start
    return loss


@njit(cache=True)
def _alloc(widths, n):
    L = widths.shape[0] - 1
    m = 0
    for v in widths:
        if v > m:
            m = v
    Z = np.zeros((L, m, n))
    A = np.zeros((L + 1, m, n))
    D = np.zeros((m, n))
    Dn = np.zeros((m, n))
    return Z, A, D, Dn


@njit(cache=True)
def loss_grad_compiled(widths, w, xs, ys, act, beta):
    Z, A, D, Dn = _alloc(widths, xs.shape[0])
    g = np.zeros(w.shape[0])
    loss = _loss_grad_kernel(widths, w, xs, ys, act, beta, g, Z, A, D, Dn, True)
    return loss, g


@njit(cache=True)
def batch_loss_grad_compiled(widths, W, xs, ys, act, beta):
    """Loss and gradient for every row of W."""
    Z, A, D, Dn = _alloc(widths, xs.shape[0])
    m = W.shape[0]
    losses = np.zeros(m)
    G = np.zeros(W.shape)
    g = np.zeros(W.shape[1])
    for k in range(m):
        losses[k] = _loss_grad_kernel(widths, W[k], xs, ys, act, beta, g, Z, A, D, Dn, True)
        for p in range(W.shape[1]):
            G[k, p] = g[p]
    return losses, G


def _kernel_args(arch: Architecture, data: Dataset, activation: Activation | None = None):
    act = activation or arch.activation
    if len(data) == 0:
        raise ContractError("dataset is empty")
    return (np.asarray(arch.widths, dtype=np.int64), np.ascontiguousarray(data.xs),
            np.ascontiguousarray(data.ys), act.code, float(act.sharpness))


def loss_mse(arch: Architecture, w, data: Dataset) -> float:
    w = _check(arch, w)
    if len(data) == 0:
        raise ContractError("dataset is empty")
    r = forward_many(arch, w, data.xs) - data.ys
    return float(np.mean(r * r))


def loss_and_grad(arch: Architecture, w, data: Dataset, activation: Activation | None = None):
    w = np.ascontiguousarray(_check(arch, w))
    widths, xs, ys, act, beta = _kernel_args(arch, data, activation)
    loss, g = loss_grad_compiled(widths, w, xs, ys, act, beta)
    return float(loss), g


def grad_mse(arch: Architecture, w, data: Dataset, activation: Activation | None = None) -> np.ndarray:
    """Exact gradient of the mean squared error (relu derivative at 0 taken as 0)."""
    return loss_and_grad(arch, w, data, activation)[1]


def batch_loss_and_grad(arch: Architecture, W, data: Dataset):
    W = np.ascontiguousarray(np.asarray(W, dtype=np.float64))
    if W.ndim != 2 or W.shape[1] != arch.param_count:
        raise ContractError("batch must have shape (m, param_count)")
    widths, xs, ys, act, beta = _kernel_args(arch, data)
    return batch_loss_grad_compiled(widths, W, xs, ys, act, beta)
