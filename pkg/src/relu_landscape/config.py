"""Run configuration loaded from JSON; unknown keys are rejected."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .neb import NebConfig
from .net_core import Architecture, ContractError
from .optim import OptimizerConfig

SCHEMA_VERSION = 1


class ConfigError(ContractError):
    pass


def _strict(cls, d: dict, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return d


@dataclass
class SweepSection:
    fit_count: int = 200
    base_seed: int = 0
    points_per_segment: int = 10
    include_right_endpoint: bool = False
    max_divergence_fraction: float = 0.05


@dataclass
class AnalysisSection:
    pair_count: int = 1_000_000
    seed: int = 0
    bins: int = 50


@dataclass
class NebSection:
    path_count: int = 8
    optimizer: str = "gd_momentum"
    canonical_endpoints: bool = True
    config: NebConfig = field(default_factory=NebConfig)


@dataclass
class JitterSection:
    trial_count: int = 256
    noise_range: tuple[float, float] = (0.0, 2.0)
    steps: int = 20_000
    optimizer: str = "gd_momentum"
    return_threshold: float = 1e-6
    seed: int = 0


@dataclass
class SpectraSection:
    sharpness: float = 5000.0
    fit_count: int = 8
    optimizer: str = "gd_momentum"


@dataclass
class RunConfig:
    target: str = "target.json"
    global_min: str = "global_min.json"
    output: str = "runs/main"
    arch: Architecture = field(default_factory=lambda: Architecture(5, 5))
    optimizers: list[OptimizerConfig] = field(
        default_factory=lambda: [OptimizerConfig("gd_momentum"), OptimizerConfig("adadelta")])
    sweep: SweepSection = field(default_factory=SweepSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    neb: NebSection = field(default_factory=NebSection)
    jitter: JitterSection = field(default_factory=JitterSection)
    spectra: SpectraSection = field(default_factory=SpectraSection)
    schema_version: int = SCHEMA_VERSION
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    def optimizer(self, kind: str) -> OptimizerConfig:
        for o in self.optimizers:
            if o.kind == kind:
                return o
        raise ConfigError(f"no optimizer of kind {kind!r} configured")

    def resolve(self, p: str) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def to_dict(self) -> dict:
        d = {
            "schema_version": self.schema_version,
            "target": self.target,
            "global_min": self.global_min,
            "output": self.output,
            "arch": {"hidden_layers": self.arch.hidden_layers, "hidden_width": self.arch.hidden_width},
            "optimizers": [o.to_dict() for o in self.optimizers],
            "sweep": asdict(self.sweep),
            "analysis": asdict(self.analysis),
            "neb": {**{k: v for k, v in asdict(self.neb).items() if k != "config"},
                    "config": self.neb.config.to_dict()},
            "jitter": {**asdict(self.jitter), "noise_range": list(self.jitter.noise_range)},
            "spectra": asdict(self.spectra),
        }
        return d

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "RunConfig":
        _strict(cls, d, "run config")
        if "base_dir" in d:
            raise ConfigError("base_dir is not a config key")
        version = d.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version {version} not supported (expected {SCHEMA_VERSION})")
        kw = {k: d[k] for k in ("target", "global_min", "output") if k in d}
        if "arch" in d:
            a = d["arch"]
            if set(a) - {"hidden_layers", "hidden_width"}:
                raise ConfigError(f"unknown keys in arch: {sorted(set(a) - {'hidden_layers', 'hidden_width'})}")
            kw["arch"] = Architecture(int(a["hidden_layers"]), int(a["hidden_width"]))
        if "optimizers" in d:
            kw["optimizers"] = [OptimizerConfig.from_dict(o) for o in d["optimizers"]]
        if "sweep" in d:
            kw["sweep"] = SweepSection(**_strict(SweepSection, d["sweep"], "sweep"))
        if "analysis" in d:
            kw["analysis"] = AnalysisSection(**_strict(AnalysisSection, d["analysis"], "analysis"))
        if "neb" in d:
            nd = dict(_strict(NebSection, d["neb"], "neb"))
            if "config" in nd:
                nd["config"] = NebConfig.from_dict(nd["config"])
            kw["neb"] = NebSection(**nd)
        if "jitter" in d:
            jd = dict(_strict(JitterSection, d["jitter"], "jitter"))
            if "noise_range" in jd:
                jd["noise_range"] = tuple(float(v) for v in jd["noise_range"])
            kw["jitter"] = JitterSection(**jd)
        if "spectra" in d:
            kw["spectra"] = SpectraSection(**_strict(SpectraSection, d["spectra"], "spectra"))
        return cls(**kw, base_dir=Path(base_dir))


def load_config(path) -> RunConfig:
    """Read a RunConfig, or the config embedded in a run manifest."""
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    if "config" in d and "manifest_version" in d:
        d = d["config"]
    return RunConfig.from_dict(d, base_dir=path.parent)
