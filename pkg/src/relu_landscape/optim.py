"""Full-batch training: gradient descent with momentum and adadelta."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from .net_core import Architecture, ContractError, Dataset, _alloc, _check, _kernel_args, _loss_grad_kernel, loss_mse
from .symmetry import canonicalize

KINDS = ("gd_momentum", "adadelta")


class DivergenceError(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"loss became non-finite ({loss}) at step {step}")
        self.step = step
        self.loss = loss


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "gd_momentum"
    steps: int = 50_000
    learning_rate: float = 0.0015
    momentum: float = 0.9
    rho: float = 0.95
    epsilon: float = 1e-6
    record_every: int = 100

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown optimizer {self.kind!r}")
        if self.steps < 1 or self.record_every < 1:
            raise ContractError("steps and record_every must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ContractError("momentum must lie in [0, 1)")
        if not 0 < self.rho < 1:
            raise ContractError("rho must lie in (0, 1)")
        if not self.epsilon > 0 or self.learning_rate < 0:
            raise ContractError("epsilon must be positive, learning_rate nonnegative")

    @property
    def code(self) -> int:
        return KINDS.index(self.kind)

    def replace(self, **kw) -> "OptimizerConfig":
        return OptimizerConfig(**{**asdict(self), **kw})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ContractError(f"unknown optimizer keys: {sorted(unknown)}")
        return cls(**d)


def init_weights(arch: Architecture, seed: int) -> np.ndarray:
    """Glorot-uniform weights, zero biases, drawn from a Philox stream keyed by ``seed``."""
    rng = np.random.Generator(np.random.Philox(int(seed)))
    parts = []
    ws = arch.widths
    for fi, fo in zip(ws[:-1], ws[1:]):
        limit = math.sqrt(6.0 / (fi + fo))
        parts.append(rng.uniform(-limit, limit, size=fi * fo))
        parts.append(np.zeros(fo))
    return np.concatenate(parts)


@njit(cache=True)
def gd_momentum_update(w, v, g, lr, momentum):
    for p in range(w.shape[0]):
        v[p] = momentum * v[p] - lr * g[p]
        w[p] += v[p]


@njit(cache=True)
def adadelta_update(w, eg2, ed2, g, rho, eps):
    for p in range(w.shape[0]):
        eg2[p] = rho * eg2[p] + (1.0 - rho) * g[p] * g[p]
        d = -math.sqrt(ed2[p] + eps) / math.sqrt(eg2[p] + eps) * g[p]
        ed2[p] = rho * ed2[p] + (1.0 - rho) * d * d
        w[p] += d


@njit(cache=True)
def _train_kernel(widths, w0, xs, ys, act, beta, kind, steps, lr, momentum, rho, eps, record_every):
    w = w0.copy()
    P = w.shape[0]
    Z, A, D, Dn = _alloc(widths, xs.shape[0])
    g = np.zeros(P)
    s1 = np.zeros(P)
    s2 = np.zeros(P)
    n_rec = (steps + record_every - 1) // record_every + 1
    rec_steps = np.zeros(n_rec, dtype=np.int64)
    rec_loss = np.zeros(n_rec)
    r = 0
    for step in range(steps):
        loss = _loss_grad_kernel(widths, w, xs, ys, act, beta, g, Z, A, D, Dn, True)
        if not math.isfinite(loss):
            return w, rec_steps[:r], rec_loss[:r], step, loss
        if step % record_every == 0:
            rec_steps[r] = step
            rec_loss[r] = loss
            r += 1
        if kind == 0:
            gd_momentum_update(w, s1, g, lr, momentum)
        else:
            adadelta_update(w, s1, s2, g, rho, eps)
    loss = _loss_grad_kernel(widths, w, xs, ys, act, beta, g, Z, A, D, Dn, False)
    rec_steps[r] = steps
    rec_loss[r] = loss
    r += 1
    if not math.isfinite(loss):
        return w, rec_steps[:r], rec_loss[:r], steps, loss
    return w, rec_steps[:r], rec_loss[:r], -1, loss


@dataclass
class FitRecord:
    seed: int
    optimizer: OptimizerConfig
    arch: Architecture
    final_weights_raw: np.ndarray
    final_weights_canonical: np.ndarray
    loss_trace: list[tuple[int, float]] = field(default_factory=list)
    final_loss: float = float("nan")
    wall_steps: int = 0

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "optimizer": self.optimizer.to_dict(),
            "arch": self.arch.to_dict(),
            "final_weights_raw": [repr(float(x)) for x in self.final_weights_raw],
            "final_weights_canonical": [repr(float(x)) for x in self.final_weights_canonical],
            "loss_trace": [[int(s), repr(float(v))] for s, v in self.loss_trace],
            "final_loss": repr(float(self.final_loss)),
            "wall_steps": int(self.wall_steps),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitRecord":
        return cls(
            seed=int(d["seed"]),
            optimizer=OptimizerConfig.from_dict(d["optimizer"]),
            arch=Architecture.from_dict(d["arch"]),
            final_weights_raw=np.array([float(x) for x in d["final_weights_raw"]]),
            final_weights_canonical=np.array([float(x) for x in d["final_weights_canonical"]]),
            loss_trace=[(int(s), float(v)) for s, v in d["loss_trace"]],
            final_loss=float(d["final_loss"]),
            wall_steps=int(d["wall_steps"]),
        )


def train(arch: Architecture, w0, data: Dataset, cfg: OptimizerConfig, seed: int = -1) -> FitRecord:
    """Run exactly ``cfg.steps`` full-batch updates from ``w0``.

    Raises DivergenceError when the loss stops being finite.
    """
    w0 = np.ascontiguousarray(_check(arch, w0), dtype=np.float64)
    if not np.all(np.isfinite(w0)):
        raise ContractError("initial weights must be finite")
    widths, xs, ys, act, beta = _kernel_args(arch, data)
    w, rs, rl, fail, loss = _train_kernel(widths, w0, xs, ys, act, beta, cfg.code, cfg.steps,
                                          cfg.learning_rate, cfg.momentum, cfg.rho, cfg.epsilon,
                                          cfg.record_every)
    if fail >= 0:
        raise DivergenceError(int(fail), float(loss))
    return FitRecord(
        seed=seed,
        optimizer=cfg,
        arch=arch,
        final_weights_raw=w,
        final_weights_canonical=canonicalize(arch, w),
        loss_trace=[(int(s), float(v)) for s, v in zip(rs, rl)],
        final_loss=loss_mse(arch, w, data),
        wall_steps=cfg.steps,
    )


def train_seed(arch: Architecture, data: Dataset, cfg: OptimizerConfig, seed: int) -> FitRecord:
    return train(arch, init_weights(arch, seed), data, cfg, seed)


def train_from_global(arch: Architecture, w_global, noise, data: Dataset, cfg: OptimizerConfig,
                      seed: int = -1) -> FitRecord:
    noise = np.asarray(noise, dtype=np.float64)
    if not np.all(np.isfinite(noise)):
        raise ContractError("noise must be finite")
    return train(arch, _check(arch, w_global) + noise, data, cfg, seed)


def minimize(grad_fn, w0, cfg: OptimizerConfig) -> np.ndarray:
    """Apply the same update rules to an arbitrary gradient function (for checks)."""
    w = np.array(w0, dtype=np.float64)
    s1, s2 = np.zeros_like(w), np.zeros_like(w)
    for _ in range(cfg.steps):
        g = np.asarray(grad_fn(w), dtype=np.float64)
        if cfg.kind == "gd_momentum":
            gd_momentum_update(w, s1, g, cfg.learning_rate, cfg.momentum)
        else:
            adadelta_update(w, s1, s2, g, cfg.rho, cfg.epsilon)
    return w
