"""Versioned JSON documents, CSV tables and run-directory layout.

Floats are written with ``repr`` so that every file round-trips bit-exactly
and re-runs produce byte-identical output.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .constructor import BlockSpec, PiecewiseLinear
from .net_core import Architecture, ContractError
from .optim import FitRecord

SCHEMA_VERSION = 1


class SchemaError(ContractError):
    pass


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _check_version(d: dict, kind: str) -> None:
    if d.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"{kind}: unsupported schema_version {d.get('schema_version')!r}")
    if d.get("kind", kind) != kind:
        raise SchemaError(f"expected a {kind} document, got {d.get('kind')!r}")


def weights_document(arch: Architecture, w, **extra) -> dict:
    return {"schema_version": SCHEMA_VERSION, "kind": "weights", "arch": arch.to_dict(),
            "weights": [repr(float(x)) for x in w], **extra}


def parse_weights(d: dict) -> tuple[Architecture, np.ndarray]:
    _check_version(d, "weights")
    arch = Architecture.from_dict(d["arch"])
    w = np.array([float(x) for x in d["weights"]])
    if w.size != arch.param_count:
        raise SchemaError("weight count does not match architecture")
    return arch, w


def target_document(pl: PiecewiseLinear, spec: BlockSpec | None = None) -> dict:
    d = {"schema_version": SCHEMA_VERSION, "kind": "piecewise_linear", **pl.to_dict()}
    if spec is not None:
        d["block_spec"] = spec.to_dict()
    return d


def parse_target(d: dict) -> PiecewiseLinear:
    _check_version(d, "piecewise_linear")
    return PiecewiseLinear.from_dict(d)


def write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(dumps(obj))


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def load_weights(path):
    return parse_weights(read_json(path))


def load_target(path) -> PiecewiseLinear:
    return parse_target(read_json(path))


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)] + [",".join(_cell(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    lines = Path(path).read_text().splitlines()
    return lines[0].split(","), [ln.split(",") for ln in lines[1:]]


class RunDir:
    """``manifest.json``, ``fits/<seed>.json``, ``stats/*.csv``, ``plots/*.svg``."""

    def __init__(self, root):
        self.root = Path(root)

    @property
    def fits(self) -> Path:
        return self.root / "fits"

    @property
    def stats(self) -> Path:
        return self.root / "stats"

    @property
    def plots(self) -> Path:
        return self.root / "plots"

    def create(self) -> "RunDir":
        for p in (self.root, self.fits, self.stats, self.plots):
            p.mkdir(parents=True, exist_ok=True)
        return self

    def write_manifest(self, manifest: dict) -> None:
        write_json(self.root / "manifest.json", {"manifest_version": SCHEMA_VERSION, **manifest})

    def read_manifest(self) -> dict:
        p = self.root / "manifest.json"
        if not p.exists():
            raise FileNotFoundError(f"no manifest.json in {self.root}")
        return read_json(p)

    def write_fit(self, rec: FitRecord) -> None:
        write_json(self.fits / f"{rec.seed}.json",
                   {"schema_version": SCHEMA_VERSION, "kind": "fit", **rec.to_dict()})

    def fit_seeds(self) -> list[int]:
        if not self.fits.exists():
            return []
        return sorted(int(p.stem) for p in self.fits.glob("*.json"))

    def load_fits(self) -> list[FitRecord]:
        out = []
        for s in self.fit_seeds():
            d = read_json(self.fits / f"{s}.json")
            _check_version(d, "fit")
            out.append(FitRecord.from_dict(d))
        return out
