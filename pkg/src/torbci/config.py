"""Experiment configuration: flat key=value files with dotted namespaces
(e.g. ``tor.t_acc=0.9``), merged with command-line overrides. The resolved
configuration (all defaults materialized) is echoed next to every output
for provenance and can itself be re-parsed.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .errors import ConfigurationError
from .quantize import CostModel
from .synth import GeneratorSpec
from .workflow import TorConfig


@dataclass
class RunSettings:
    workflow: str = "tor"  # pretrain | chain-tl | tor
    engine: str = "float"  # float | int8 (train the head over the quantized backbone)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    data_seed: int | None = None  # None: each run seed regenerates its own dataset
    out: str = "runs"
    workers: int = 1
    data_dir: str | None = None  # read .eegs session files instead of generating
    checkpoint: str | None = None  # start from a pretrained checkpoint
    split: float = 0.6  # chain-tl train fraction

    def __post_init__(self):
        if self.workflow not in ("pretrain", "chain-tl", "tor"):
            raise ConfigurationError(f"unknown workflow {self.workflow!r}")
        if self.engine not in ("float", "int8"):
            raise ConfigurationError(f"engine must be float or int8, got {self.engine!r}")
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")
        if self.workers < 1:
            raise ConfigurationError("workers must be positive")


@dataclass
class PretrainSettings:
    epochs: int = 40
    lr: float = 1e-3
    batch_size: int = 10


@dataclass
class ExperimentConfig:
    run: RunSettings = field(default_factory=RunSettings)
    gen: GeneratorSpec = field(default_factory=GeneratorSpec)
    tor: TorConfig = field(default_factory=TorConfig)
    pretrain: PretrainSettings = field(default_factory=PretrainSettings)
    cost: CostModel = field(default_factory=CostModel)


_NAMESPACES = {
    "run": RunSettings,
    "gen": GeneratorSpec,
    "tor": TorConfig,
    "pretrain": PretrainSettings,
    "cost": CostModel,
}


def parse_seeds(raw: str) -> list[int]:
    """'5' means seeds 0..4; '3,7,9' means exactly those seeds."""
    parts = [p for p in raw.split(",") if p != ""]
    if not parts:
        raise ConfigurationError("seeds must not be empty")
    values = [int(p) for p in parts]
    if len(values) == 1 and "," not in raw:
        if values[0] < 1:
            raise ConfigurationError("seed count must be positive")
        return list(range(values[0]))
    return values


def _convert(raw: str, ftype, key: str):
    raw = raw.strip()
    if key == "run.seeds":
        return parse_seeds(raw)
    if raw == "" and ("None" in str(ftype) or ftype is type(None)):
        return None
    base = str(ftype)
    try:
        if ftype is int or base in ("int | None", "typing.Optional[int]"):
            return None if raw == "" else int(raw)
        if ftype is float:
            return float(raw)
        if ftype is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if ftype is str or base in ("str | None", "typing.Optional[str]"):
            return None if raw == "" else raw
    except ValueError as e:
        raise ConfigurationError(f"cannot parse {key}={raw!r}: {e}") from e
    raise ConfigurationError(f"unsupported config key {key}")


def read_config_file(path) -> dict[str, tuple[str, int]]:
    """key -> (raw value, line number); later lines override earlier ones."""
    entries: dict[str, tuple[str, int]] = {}
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigurationError(f"{path}:{line_no}: expected key=value, got {stripped!r}")
            key, _, value = stripped.partition("=")
            entries[key.strip()] = (value.strip(), line_no)
    return entries


def build_config(overrides: dict[str, str], path: str | None = None) -> ExperimentConfig:
    """Construct a validated config from dotted-key overrides; file entries
    should be merged into `overrides` before calling (flags last)."""
    kwargs: dict[str, dict] = {ns: {} for ns in _NAMESPACES}
    for key, raw in overrides.items():
        if isinstance(raw, tuple):  # (value, line) pairs from a file
            raw, line = raw
            where = f"{path}:{line}: " if path else ""
        else:
            where = ""
        if "." not in key:
            raise ConfigurationError(f"{where}key {key!r} must be namespaced (e.g. tor.t_acc)")
        ns, _, name = key.partition(".")
        cls = _NAMESPACES.get(ns)
        if cls is None:
            raise ConfigurationError(f"{where}unknown namespace {ns!r} in key {key!r}")
        ftypes = {f.name: f.type for f in dataclasses.fields(cls)}
        if name not in ftypes:
            raise ConfigurationError(f"{where}unknown key {key!r}")
        ftype = ftypes[name]
        if isinstance(ftype, str):  # postponed annotations store strings
            ftype = {"int": int, "float": float, "str": str, "bool": bool}.get(ftype, ftype)
        try:
            kwargs[ns][name] = _convert(raw, ftype, key)
        except ConfigurationError as e:
            raise ConfigurationError(f"{where}{e}") from e
    try:
        return ExperimentConfig(
            run=RunSettings(**kwargs["run"]),
            gen=GeneratorSpec(**kwargs["gen"]),
            tor=TorConfig(**kwargs["tor"]),
            pretrain=PretrainSettings(**kwargs["pretrain"]),
            cost=CostModel(**kwargs["cost"]),
        )
    except (ConfigurationError,) as e:
        raise ConfigurationError(str(e)) from e
    except ValueError as e:
        raise ConfigurationError(str(e)) from e


def resolve_config(cfg: ExperimentConfig) -> str:
    """Echo every key with its materialized value, parseable by
    read_config_file."""
    lines = []
    for ns, obj in (("run", cfg.run), ("gen", cfg.gen), ("tor", cfg.tor),
                    ("pretrain", cfg.pretrain), ("cost", cfg.cost)):
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if value is None:
                rendered = ""
            elif isinstance(value, list):
                rendered = ",".join(str(v) for v in value)
                if len(value) == 1:
                    rendered += ","  # trailing comma keeps a lone seed literal
            else:
                rendered = str(value)
            lines.append(f"{ns}.{f.name}={rendered}")
    return "\n".join(lines) + "\n"
