"""Hessian of the training loss under a smoothed activation, and its eigenvalues."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .net_core import Activation, Architecture, ContractError, Dataset, _check, grad_mse

DEFAULT_SHARPNESS = 5000.0


class EigenConvergenceError(RuntimeError):
    pass


@dataclass
class HessianMatrix:
    matrix: np.ndarray
    asymmetry: float          # max |H_ij - H_ji| before symmetrization
    sharpness: float

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def symmetry_ok(self) -> bool:
        return self.asymmetry <= 1e-6 * (1.0 + float(np.max(np.abs(self.matrix))))


def hessian(arch: Architecture, w, data: Dataset, sharpness: float = DEFAULT_SHARPNESS,
            activation: Activation | None = None) -> HessianMatrix:
    """Central differences of the exact gradient, then (H + H^T) / 2.

    The relu kinks make second differences of the relu loss unusable, so the
    gradient is taken with the softplus of the given sharpness.
    """
    w = np.array(_check(arch, w), dtype=np.float64)
    act = activation or Activation.smoothed(sharpness)
    P = w.size
    H = np.empty((P, P))
    for j in range(P):
        h = 1e-5 * (1.0 + abs(w[j]))
        wp, wm = w.copy(), w.copy()
        wp[j] += h
        wm[j] -= h
        H[:, j] = (grad_mse(arch, wp, data, act) - grad_mse(arch, wm, data, act)) / (2.0 * h)
    if not np.all(np.isfinite(H)):
        raise ContractError("Hessian has non-finite entries")
    asym = float(np.max(np.abs(H - H.T)))
    return HessianMatrix(0.5 * (H + H.T), asym, float(act.sharpness))


def _off_norm(A):
    # summed directly: total minus diagonal cancels long before the tolerance is met
    off = A - np.diag(np.diag(A))
    return float(np.linalg.norm(off))


@njit(cache=True)
def _jacobi_sweep(A, V):
    n = A.shape[0]
    for p in range(n - 1):
        for q in range(p + 1, n):
            apq = A[p, q]
            if apq == 0.0:
                continue
            theta = (A[q, q] - A[p, p]) / (2.0 * apq)
            if theta >= 0:
                t = 1.0 / (theta + math.sqrt(1.0 + theta * theta))
            else:
                t = -1.0 / (-theta + math.sqrt(1.0 + theta * theta))
            c = 1.0 / math.sqrt(1.0 + t * t)
            s = t * c
            for k in range(n):
                akp = A[k, p]
                akq = A[k, q]
                A[k, p] = c * akp - s * akq
                A[k, q] = s * akp + c * akq
            for k in range(n):
                apk = A[p, k]
                aqk = A[q, k]
                A[p, k] = c * apk - s * aqk
                A[q, k] = s * apk + c * aqk
            A[p, q] = 0.0
            A[q, p] = 0.0
            for k in range(n):
                vkp = V[k, p]
                vkq = V[k, q]
                V[k, p] = c * vkp - s * vkq
                V[k, q] = s * vkp + c * vkq


def jacobi_eigh(H, tol: float = 1e-12, max_sweeps: int = 100):
    """Cyclic Jacobi rotations; returns (ascending eigenvalues, eigenvectors as columns)."""
    A = np.array(H, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ContractError("matrix must be square")
    n = A.shape[0]
    V = np.eye(n)
    scale = float(np.linalg.norm(A))
    sweeps = 0
    while _off_norm(A) > tol * scale:
        if sweeps >= max_sweeps:
            raise EigenConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps")
        _jacobi_sweep(A, V)
        sweeps += 1
    lam = np.diag(A).copy()
    order = np.argsort(lam, kind="stable")
    return lam[order], V[:, order]


@dataclass
class Spectrum:
    eigenvalues: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return self.eigenvalues.size

    def small_fraction(self, rel: float = 0.01) -> float:
        """Fraction of eigenvalues below ``rel`` times the largest one."""
        return float(np.mean(self.eigenvalues < rel * self.eigenvalues[-1]))

    def min_ratio(self) -> float:
        return float(self.eigenvalues[0] / self.eigenvalues[-1])

    def to_csv(self) -> str:
        lines = ["index,eigenvalue"]
        lines += [f"{i},{float(v)!r}" for i, v in enumerate(self.eigenvalues)]
        return "\n".join(lines) + "\n"


def eigenvalues(H, provenance: dict | None = None) -> Spectrum:
    M = H.matrix if isinstance(H, HessianMatrix) else np.asarray(H, dtype=np.float64)
    if np.max(np.abs(M - M.T)) > 1e-6 * (1.0 + np.max(np.abs(M))):
        raise ContractError("matrix is not symmetric")
    lam, _ = jacobi_eigh(M)
    prov = dict(provenance or {})
    if isinstance(H, HessianMatrix):
        prov.setdefault("sharpness", H.sharpness)
        prov.setdefault("asymmetry", H.asymmetry)
        prov.setdefault("scheme", "central differences of analytic gradient")
    return Spectrum(lam, prov)


def write_hessian(H: HessianMatrix, path) -> None:
    """Row-major little-endian float64 payload plus a JSON header alongside."""
    path = Path(path)
    payload = np.ascontiguousarray(H.matrix, dtype="<f8").tobytes()
    path.write_bytes(payload)
    header = {"dimension": H.dimension, "dtype": "<f8", "order": "row-major",
              "sha256": hashlib.sha256(payload).hexdigest(), "asymmetry": repr(H.asymmetry),
              "sharpness": H.sharpness}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")


def read_hessian(path) -> np.ndarray:
    path = Path(path)
    header = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    payload = path.read_bytes()
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise ContractError("Hessian payload hash mismatch")
    n = header["dimension"]
    return np.frombuffer(payload, dtype="<f8").reshape(n, n).copy()
