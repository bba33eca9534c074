"""Run configuration as flat ``key = value`` text with dotted namespaces.

Diff-friendly, no parser dependency, lossless round-trips (floats via repr).
Unknown keys are rejected so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

from .losses import LossWeights
from .masks import large_mask_spec, small_mask_spec
from .networks import NetworkConfig
from .pipeline import PipelineConfig, ProgressiveSchedule, Stage

__all__ = ["RunConfig", "parse_config_text", "format_config_text"]


@dataclass
class RunConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    train_dir: str = ""
    mask_strokes: int = 2           # stroke chains per sampled mask

    @classmethod
    def desk(cls) -> "RunConfig":
        return cls(network=NetworkConfig.desk(), pipeline=PipelineConfig.desk())

    def validate(self):
        self.network.validate()
        self.pipeline.validate()
        self.loss.validate()
        if self.mask_strokes < 1:
            raise ValueError("mask_strokes must be >= 1")

    def schedule(self) -> ProgressiveSchedule:
        """Two progressive stages: small then large masks."""
        small = small_mask_spec()
        large = large_mask_spec()
        small.strokes = large.strokes = self.mask_strokes
        return ProgressiveSchedule([
            Stage(small, self.pipeline.iterations_small),
            Stage(large, self.pipeline.iterations_large),
        ])

    def to_text(self) -> str:
        return format_config_text(self)


_SECTIONS = {"network": NetworkConfig, "pipeline": PipelineConfig, "loss": LossWeights}
_TOP_FIELDS = ("seed", "train_dir", "mask_strokes")


def _encode(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(str(v) for v in value) + "]"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _decode(raw: str, kind, key: str):
    raw = raw.strip()
    try:
        if kind is bool:
            if raw not in ("true", "false"):
                raise ValueError
            return raw == "true"
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw
        if kind is tuple:
            if not (raw.startswith("[") and raw.endswith("]")):
                raise ValueError
            inner = raw[1:-1].strip()
            return tuple(int(v.strip()) for v in inner.split(",")) if inner else ()
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot parse {raw!r} as {kind.__name__}") \
            from None
    raise ValueError(f"config key {key!r}: unsupported type {kind}")


def format_config_text(cfg: RunConfig) -> str:
    lines = []
    for name in _TOP_FIELDS:
        lines.append(f"{name} = {_encode(getattr(cfg, name))}")
    for section, _ in _SECTIONS.items():
        lines.append("")
        obj = getattr(cfg, section)
        for f in fields(obj):
            lines.append(f"{section}.{f.name} = {_encode(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def parse_config_text(text: str) -> RunConfig:
    cfg = RunConfig()
    top_types = {f.name: f.type for f in fields(RunConfig)}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in seen:
            raise ValueError(f"config line {lineno}: duplicate key {key!r}")
        seen.add(key)
        if "." in key:
            section, name = key.split(".", 1)
            if section not in _SECTIONS:
                raise ValueError(f"config line {lineno}: unknown section {section!r}")
            obj = getattr(cfg, section)
            matching = {f.name: f for f in fields(obj)}
            if name not in matching:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            kind = type(getattr(obj, name))
            setattr(obj, name, _decode(value, kind, key))
        else:
            if key not in _TOP_FIELDS:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            kind = {"seed": int, "train_dir": str, "mask_strokes": int}[key]
            setattr(cfg, key, _decode(value, kind, key))
    return cfg
