"""Nudged elastic band paths between two points of weight space."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .net_core import Architecture, ContractError, Dataset, batch_loss_and_grad, loss_mse

log = logging.getLogger(__name__)


class NebDivergence(RuntimeError):
    def __init__(self, iteration: int):
        super().__init__(f"band energy became non-finite at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class NebConfig:
    image_count: int = 32
    spring_k: float = 1.0
    step_size: float = 5e-4
    max_iters: int = 50_000
    force_tol: float = 1e-6
    climbing: bool = False

    def __post_init__(self):
        if self.image_count < 1:
            raise ContractError("image_count must be >= 1")
        if not (self.spring_k > 0 and self.step_size > 0):
            raise ContractError("spring_k and step_size must be positive")
        if self.max_iters < 0 or self.force_tol < 0:
            raise ContractError("max_iters and force_tol must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NebConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ContractError(f"unknown NEB keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class NebPath:
    images: np.ndarray          # (image_count + 2, dim), endpoints included
    energies: np.ndarray
    converged: bool
    iterations: int
    max_force: float = 0.0
    force_history: list[tuple[int, float]] = field(default_factory=list)

    @property
    def arc_lengths(self) -> np.ndarray:
        seg = np.linalg.norm(np.diff(self.images, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])

    def to_dict(self, include_images: bool = False) -> dict:
        d = {
            "energies": [repr(float(e)) for e in self.energies],
            "arc_lengths": [repr(float(s)) for s in self.arc_lengths],
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "max_force": repr(float(self.max_force)),
        }
        if include_images:
            d["images"] = [[repr(float(x)) for x in row] for row in self.images]
        return d


def upwind_tangents(images: np.ndarray, energies: np.ndarray) -> np.ndarray:
    """Unit tangents of the interior images (energy-weighted upwind rule)."""
    fwd = images[2:] - images[1:-1]
    bwd = images[1:-1] - images[:-2]
    e_prev, e, e_next = energies[:-2], energies[1:-1], energies[2:]
    up = (e_next > e) & (e > e_prev)
    down = (e_next < e) & (e < e_prev)
    dmax = np.maximum(np.abs(e_next - e), np.abs(e_prev - e))
    dmin = np.minimum(np.abs(e_next - e), np.abs(e_prev - e))
    toward_next = e_next > e_prev
    wf = np.where(toward_next, dmax, dmin)
    wb = np.where(toward_next, dmin, dmax)
    tau = wf[:, None] * fwd + wb[:, None] * bwd
    tau = np.where(up[:, None], fwd, tau)
    tau = np.where(down[:, None], bwd, tau)
    # flat stretch of the profile: fall back to the central direction
    flat = ~(up | down) & (dmax == 0)
    tau = np.where(flat[:, None], fwd + bwd, tau)
    norm = np.linalg.norm(tau, axis=1)
    out = np.zeros_like(tau)
    ok = norm > 0
    out[ok] = tau[ok] / norm[ok, None]
    return out


def neb_forces(images, energies, grads, cfg: NebConfig) -> np.ndarray:
    tau = upwind_tangents(images, energies)
    g = grads[1:-1]
    g_par = np.sum(g * tau, axis=1)
    d_next = np.linalg.norm(images[2:] - images[1:-1], axis=1)
    d_prev = np.linalg.norm(images[1:-1] - images[:-2], axis=1)
    F = -(g - g_par[:, None] * tau) + (cfg.spring_k * (d_next - d_prev))[:, None] * tau
    if cfg.climbing:
        i = int(np.argmax(energies[1:-1]))
        F[i] = -g[i] + 2.0 * g_par[i] * tau[i]
    return F


def relax_band(energy_and_grad, w_a, w_b, cfg: NebConfig) -> NebPath:
    """Relax a band between fixed endpoints under an arbitrary energy.

    ``energy_and_grad`` maps an (m, d) array of points to (energies, gradients).
    """
    w_a = np.asarray(w_a, dtype=np.float64)
    w_b = np.asarray(w_b, dtype=np.float64)
    if w_a.shape != w_b.shape or w_a.ndim != 1:
        raise ContractError("endpoints must be 1-D vectors of equal length")
    if not (np.all(np.isfinite(w_a)) and np.all(np.isfinite(w_b))):
        raise ContractError("endpoints must be finite")
    t = np.linspace(0.0, 1.0, cfg.image_count + 2)
    images = w_a[None, :] + t[:, None] * (w_b - w_a)[None, :]
    images[0], images[-1] = w_a, w_b
    e_end, _ = energy_and_grad(images[[0, -1]])

    if np.array_equal(w_a, w_b):
        return NebPath(images, np.full(images.shape[0], float(e_end[0])), True, 0)

    history = []
    window_max = 0.0
    it, fmax = 0, np.inf
    energies = None
    while True:
        e_in, g_in = energy_and_grad(images[1:-1])
        if not np.all(np.isfinite(e_in)):
            raise NebDivergence(it)
        energies = np.concatenate([[e_end[0]], e_in, [e_end[1]]])
        grads = np.zeros_like(images)
        grads[1:-1] = g_in
        F = neb_forces(images, energies, grads, cfg)
        fmax = float(np.max(np.linalg.norm(F, axis=1)))
        window_max = max(window_max, fmax) if it % 1000 else fmax
        if it % 1000 == 999:
            history.append((it, window_max))
        if fmax < cfg.force_tol or it >= cfg.max_iters:
            break
        images[1:-1] += cfg.step_size * F
        it += 1
    converged = fmax < cfg.force_tol
    if not converged:
        log.info("band not converged after %d iterations (max force %.3g)", it, fmax)
    return NebPath(images, energies, converged, it, fmax, history)


def network_energy(arch: Architecture, data: Dataset):
    def energy_and_grad(points):
        return batch_loss_and_grad(arch, points, data)
    return energy_and_grad


def neb_relax(arch: Architecture, data: Dataset, w_a, w_b, cfg: NebConfig = NebConfig()) -> NebPath:
    if np.asarray(w_a).size != arch.param_count or np.asarray(w_b).size != arch.param_count:
        raise ContractError("endpoint length does not match the architecture")
    return relax_band(network_energy(arch, data), w_a, w_b, cfg)


@dataclass
class PathAngles:
    angles: np.ndarray
    positions: np.ndarray
    degenerate: np.ndarray


def path_angles(path: NebPath) -> PathAngles:
    """Angle between successive difference vectors at each interior image."""
    imgs = path.images
    if imgs.shape[0] < 3:
        raise ContractError("need at least 3 images")
    d = np.diff(imgs, axis=0)
    n = np.linalg.norm(d, axis=1)
    a, b, na, nb = d[:-1], d[1:], n[:-1], n[1:]
    degenerate = (na == 0) | (nb == 0)
    cos = np.zeros(a.shape[0])
    ok = ~degenerate
    cos[ok] = np.sum(a[ok] * b[ok], axis=1) / (na[ok] * nb[ok])
    angles = np.where(degenerate, 0.0, np.arccos(np.clip(cos, -1.0, 1.0)))
    return PathAngles(angles, path.arc_lengths[1:-1], degenerate)


def midpoint_probe(arch: Architecture, data: Dataset, path: NebPath) -> np.ndarray:
    """Loss at the straight-line midpoint of every adjacent image pair."""
    imgs = path.images
    if imgs.shape[0] < 2:
        raise ContractError("need at least 2 images")
    mids = 0.5 * (imgs[:-1] + imgs[1:])
    return np.array([loss_mse(arch, m, data) for m in mids])
