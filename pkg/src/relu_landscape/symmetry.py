"""Positive-scaling and permutation symmetries of relu networks.

The group acting here is R_+^{KN} semidirect S_N^K: every hidden node can be
rescaled (incoming weights and bias times s, outgoing weights divided by s) and
the nodes of each hidden layer can be reordered, without changing the network
output.  ``canonicalize`` picks the minimal-norm, norm-sorted orbit element.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .net_core import Architecture, ContractError, flatten, unflatten

log = logging.getLogger(__name__)

SCALE_TOL = 1e-12
MAX_SWEEPS = 10_000


def _require_relu(arch: Architecture) -> None:
    if arch.activation.kind != "relu":
        raise ContractError("scaling symmetry needs a positively homogeneous (relu) activation")


def apply_scaling(arch: Architecture, w, s) -> np.ndarray:
    _require_relu(arch)
    s = np.asarray(s, dtype=np.float64).reshape(arch.hidden_layers, arch.hidden_width)
    if not (np.all(np.isfinite(s)) and np.all(s > 0)):
        raise ContractError("scales must be positive and finite")
    layers = unflatten(arch, w)
    for k in range(arch.hidden_layers):
        W, b = layers[k]
        W *= s[k][:, None]
        b *= s[k]
        layers[k + 1][0][:] /= s[k][None, :]
    return flatten(layers)


def _check_perm(p, n: int) -> np.ndarray:
    p = np.asarray(p)
    if p.shape != (n,) or not np.array_equal(np.sort(p), np.arange(n)):
        raise ContractError(f"not a permutation of 0..{n - 1}: {p!r}")
    return p.astype(np.int64)


def apply_permutation(arch: Architecture, w, perms) -> np.ndarray:
    """Reorder hidden nodes; new node i of layer k is old node ``perms[k][i]``."""
    if len(perms) != arch.hidden_layers:
        raise ContractError("need one permutation per hidden layer")
    layers = unflatten(arch, w)
    for k, p in enumerate(perms):
        p = _check_perm(p, arch.hidden_width)
        W, b = layers[k]
        layers[k] = (W[p, :], b[p])
        Wn, bn = layers[k + 1]
        layers[k + 1] = (Wn[:, p], bn)
    return flatten(layers)


def _node_norms(layers, k):
    W, b = layers[k]
    incoming = np.sqrt(np.sum(W * W, axis=1) + b * b)
    outgoing = np.sqrt(np.sum(layers[k + 1][0] ** 2, axis=0))
    return incoming, outgoing


@dataclass
class ScalingResult:
    scales: np.ndarray                       # (K, N)
    dead_nodes: list[tuple[int, int]] = field(default_factory=list)
    sweeps: int = 0
    objective_trace: list[float] = field(default_factory=list)
    converged: bool = True


def minimal_energy_scaling(arch: Architecture, w, tol: float = SCALE_TOL,
                           max_sweeps: int = MAX_SWEEPS) -> ScalingResult:
    """Scaling vector minimizing the L2 norm of the rescaled weights.

    Cyclic coordinate descent in log-scale coordinates.  For a node with
    incoming norm a and outgoing norm b the 1-D optimum is sqrt(b / a); nodes
    of one layer do not interact, so a layer is updated at once.  Nodes with a
    zero incoming or outgoing vector keep scale 1.
    """
    _require_relu(arch)
    K, N = arch.hidden_layers, arch.hidden_width
    layers = unflatten(arch, w)
    total = np.ones((K, N))
    dead = np.zeros((K, N), dtype=bool)
    for k in range(K):
        a, b = _node_norms(layers, k)
        dead[k] = (a == 0) | (b == 0)
    dead_nodes = [(int(k), int(i)) for k, i in zip(*np.nonzero(dead))]
    if dead_nodes:
        log.debug("pinning %d dead nodes to scale 1", len(dead_nodes))

    trace = [float(sum(np.sum(W * W) + np.sum(b * b) for W, b in layers))]
    sweeps, converged = 0, False
    while sweeps < max_sweeps:
        sweeps += 1
        biggest = 0.0
        for k in range(K):
            a, b = _node_norms(layers, k)
            s = np.ones(N)
            live = ~dead[k]
            s[live] = np.sqrt(b[live] / a[live])
            W, bias = layers[k]
            W *= s[:, None]
            bias *= s
            layers[k + 1][0][:] /= s[None, :]
            total[k] *= s
            biggest = max(biggest, float(np.max(np.abs(np.log(s)))))
        trace.append(float(sum(np.sum(W * W) + np.sum(b * b) for W, b in layers)))
        if biggest < tol:
            converged = True
            break
    if not converged:
        log.warning("minimal-energy scaling stopped after %d sweeps", sweeps)
    return ScalingResult(total, dead_nodes, sweeps, trace, converged)


def sorting_permutations(arch: Architecture, w, include_bias: bool = True):
    """Per-layer permutations ordering nodes by incoming-vector norm (ascending).

    Layers are processed input to output because reordering layer k permutes
    the columns of layer k+1.  Ties fall back to lexicographic order of the
    incoming vector entries.
    """
    layers = unflatten(arch, w)
    perms = []
    for k in range(arch.hidden_layers):
        W, b = layers[k]
        vec = np.column_stack([W, b]) if include_bias else W
        norms = np.sqrt(np.sum(vec * vec, axis=1))
        keys = [vec[:, j] for j in range(vec.shape[1] - 1, -1, -1)] + [norms]
        p = np.lexsort(keys)
        perms.append(p)
        layers[k] = (W[p, :], b[p])
        layers[k + 1] = (layers[k + 1][0][:, p], layers[k + 1][1])
    return perms


def canonicalize(arch: Architecture, w, include_bias: bool = True) -> np.ndarray:
    """Minimal-energy representative with norm-sorted hidden nodes."""
    res = minimal_energy_scaling(arch, w)
    scaled = apply_scaling(arch, w, res.scales)
    return apply_permutation(arch, scaled, sorting_permutations(arch, scaled, include_bias))
