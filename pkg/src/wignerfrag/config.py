"""Run configuration, YAML round-tripping and named presets."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .classical import MinimizerOptions
from .errors import ConfigError
from .scf import ScfOptions

MODES = ("classical", "quantum", "compare")
KERNELS = ("spectral", "sampled")
RS_DEFAULT = 105.0


@dataclass
class BasisConfig:
    nx: int = 20
    ny: int = 20
    xi: float = 0.8


@dataclass
class QuadratureConfig:
    mx: int | None = None  # None: 4 points per basis centre along the longer axis
    my: int | None = None


@dataclass
class ClassicalConfig:
    n_starts: int = 50
    tol: float = 1e-10
    max_iter: int = 10_000


@dataclass
class AnalysisConfig:
    peak_threshold: float = 0.1
    class_tol: float = 0.02
    plots: bool = True


@dataclass
class RunConfig:
    mode: str = "classical"
    n_electrons: int = 3
    rs: float = RS_DEFAULT
    aspect: float = 1.0
    basis: BasisConfig = field(default_factory=BasisConfig)
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)
    scf: ScfOptions = field(default_factory=ScfOptions)
    classical: ClassicalConfig = field(default_factory=ClassicalConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    kernel: str = "spectral"
    seed: int = 0
    out: str = "runs"

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {', '.join(MODES)}, got {self.mode!r}")
        if not (isinstance(self.n_electrons, int) and self.n_electrons >= 1):
            raise ConfigError("n_electrons", "must be a positive integer")
        for name in ("rs", "aspect"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigError(name, f"must be positive and finite, got {value!r}")
        b = self.basis
        if b.nx < 2 or b.ny < 2:
            raise ConfigError("basis", f"grid must be at least 2x2, got {b.nx}x{b.ny}")
        if not b.xi > 0:
            raise ConfigError("basis.xi", "must be positive")
        q = self.quadrature
        for name in ("mx", "my"):
            m = getattr(q, name)
            if m is not None and m < 2 * max(b.nx, b.ny):
                raise ConfigError(f"quadrature.{name}", f"{m} points cannot resolve a {b.nx}x{b.ny} basis")
        if self.n_electrons > b.nx * b.ny and self.mode != "classical":
            raise ConfigError("basis", "fewer basis functions than electrons")
        if self.kernel not in KERNELS:
            raise ConfigError("kernel", f"must be one of {', '.join(KERNELS)}")
        if self.classical.n_starts < 1:
            raise ConfigError("classical.n_starts", "must be >= 1")
        if not 0 < self.analysis.peak_threshold < 1:
            raise ConfigError("analysis.peak_threshold", "must lie in (0, 1)")
        if self.analysis.class_tol < 0:
            raise ConfigError("analysis.class_tol", "must be non-negative")
        return self

    def scf_options(self) -> ScfOptions:
        # the top-level seed drives every random choice of a run
        return dataclasses.replace(self.scf, seed=self.seed)

    def minimizer_options(self) -> MinimizerOptions:
        return MinimizerOptions(tol=self.classical.tol, max_iter=self.classical.max_iter)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        """Hash of everything that affects results (the output directory does not)."""
        d = self.to_dict()
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, default=repr).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


_SECTIONS = {
    "basis": BasisConfig,
    "quadrature": QuadratureConfig,
    "scf": ScfOptions,
    "classical": ClassicalConfig,
    "analysis": AnalysisConfig,
}


def _build(cls, data, prefix):
    if not isinstance(data, dict):
        raise ConfigError(prefix, "expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{prefix}.{sorted(unknown)[0]}", "unknown key")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(prefix, str(exc)) from None


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a mapping")
    data = dict(data)
    kwargs = {}
    for key, cls in _SECTIONS.items():
        if key in data:
            kwargs[key] = _build(cls, data.pop(key) or {}, key)
    unknown = set(data) - {f.name for f in dataclasses.fields(RunConfig)}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    kwargs.update(data)
    return RunConfig(**kwargs).validate()


def load_config(path) -> RunConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"invalid YAML: {exc}") from None
    return config_from_dict(data or {})


def dump_config(config: RunConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)


def save_config(config: RunConfig, path) -> Path:
    path = Path(path)
    path.write_text(dump_config(config))
    return path


def _square(k: int, mode: str, nb: int = 20, **extra) -> RunConfig:
    return RunConfig(mode=mode, n_electrons=k, basis=BasisConfig(nb, nb, 0.8), **extra)


def _build_presets() -> dict:
    presets = {}
    for k in range(2, 21):
        presets[f"paper-n{k}-square"] = _square(k, "classical")
        presets[f"paper-n{k}-square-quantum"] = _square(k, "quantum")
        if k <= 6:
            nb = 10 if k <= 3 else 12
            presets[f"paper-n{k}-square-quantum-desk"] = _square(k, "quantum", nb)
    hex_aspect = math.sqrt(3) / 2
    presets["paper-n16-hex"] = RunConfig(mode="classical", n_electrons=16, aspect=hex_aspect,
                                         basis=BasisConfig(22, 19, 0.8))
    presets["paper-n16-hex-quantum"] = RunConfig(mode="quantum", n_electrons=16, aspect=hex_aspect,
                                                 basis=BasisConfig(22, 19, 0.8))
    # same spacing ratio as 22x19 at roughly half the basis size
    presets["paper-n16-hex-quantum-reduced"] = RunConfig(mode="quantum", n_electrons=16, aspect=hex_aspect,
                                                         basis=BasisConfig(15, 13, 0.8))
    return presets


PRESETS = _build_presets()


def presets() -> dict:
    """Named configurations (fresh copies)."""
    return {name: config_from_dict(cfg.to_dict()) for name, cfg in PRESETS.items()}


def get_preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}")
    return config_from_dict(PRESETS[name].to_dict())
