"""Experiment configuration: dataclasses with defaults, a plain-text config
file format (key = value lines under [section] headers), and a content hash
for reproducibility stamping.

Every field has a default, so an empty config file runs the standard
experiment. The [target] section defaults to the standard shifted bundle
applied to [source]; explicit keys override per field.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields, replace

from .adaptation import AdaptConfig, SCHEMES
from .losses import LossWeights
from .pretrain import PretrainConfig
from .worldsim import DomainConfig, shifted_config

ARTIFACT_VERSION = "0.1.0"


@dataclass(frozen=True)
class RunGrid:
    """Which (scheme, seed, steps) combinations an adapt run covers."""

    schemes: tuple[str, ...] = ("Final", "B1", "B3")
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    steps: tuple[int, ...] = (1,)
    n_frames: int = 500

    def __post_init__(self):
        object.__setattr__(self, "schemes", tuple(self.schemes))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "steps", tuple(int(t) for t in self.steps))
        if not self.schemes or not self.seeds or not self.steps:
            raise ValueError("grid must contain at least one scheme, seed and step count")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ValueError(f"unknown scheme {s!r}")
        if self.n_frames < 1 or any(t < 1 for t in self.steps) or any(s < 0 for s in self.seeds):
            raise ValueError("bad grid sizes")


@dataclass(frozen=True)
class ExperimentConfig:
    hidden: tuple[int, ...] = (128, 128)
    source: DomainConfig = field(default_factory=DomainConfig)
    target: DomainConfig | None = None  # None -> shifted_config(source)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    grid: RunGrid = field(default_factory=RunGrid)

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.target is None:
            object.__setattr__(self, "target", shifted_config(self.source))


def _parse_value(text: str, current):
    """Parse a config value against the type of the current/default value."""
    text = text.strip()
    if isinstance(current, bool):
        return text.lower() in ("1", "true", "yes", "on")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, str):
        return text
    if isinstance(current, tuple):
        parts = [p for p in text.replace(",", " ").split() if p]
        if not parts:
            return ()
        elem = current[0] if current else 0.0
        if isinstance(elem, str):
            return tuple(parts)
        if isinstance(elem, int) and not isinstance(elem, bool):
            return tuple(int(p) for p in parts)
        return tuple(float(p) for p in parts)
    raise ValueError(f"cannot parse config value {text!r}")


def _apply_section(obj, section: configparser.SectionProxy):
    """Return a copy of a dataclass with the section's keys applied."""
    known = {f.name for f in fields(obj)}
    updates = {}
    for key, raw in section.items():
        if key not in known:
            raise ValueError(f"unknown config key {key!r} in [{section.name}]")
        updates[key] = _parse_value(raw, getattr(obj, key))
    return replace(obj, **updates) if updates else obj


def load_config(path=None) -> ExperimentConfig:
    """Build an ExperimentConfig from a config file (or pure defaults)."""
    cfg = ExperimentConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path) as fh:
        parser.read_file(fh)

    run_updates = {}
    if parser.has_section("run"):
        run_updates = dict(parser.items("run"))

    source = cfg.source
    if parser.has_section("source"):
        source = _apply_section(source, parser["source"])
    target = shifted_config(source)
    if parser.has_section("target"):
        target = _apply_section(target, parser["target"])

    pretrain = cfg.pretrain
    if parser.has_section("pretrain"):
        pretrain = _apply_section(pretrain, parser["pretrain"])

    adapt = cfg.adapt
    if parser.has_section("adapt"):
        adapt = _apply_section(adapt, parser["adapt"])
    if parser.has_section("losses"):
        adapt = replace(adapt, loss_weights=_apply_section(adapt.loss_weights, parser["losses"]))

    grid = cfg.grid
    if run_updates:
        grid = _apply_section(grid, parser["run"])

    hidden = cfg.hidden
    if parser.has_section("model"):
        model = parser["model"]
        for key, raw in model.items():
            if key == "hidden":
                hidden = _parse_value(raw, cfg.hidden)
            else:
                raise ValueError(f"unknown config key {key!r} in [model]")

    return ExperimentConfig(
        hidden=hidden, source=source, target=target,
        pretrain=pretrain, adapt=adapt, grid=grid,
    )


def _dump_dataclass(obj) -> list[str]:
    lines = []
    for f in sorted(fields(obj), key=lambda f: f.name):
        v = getattr(obj, f.name)
        if isinstance(v, tuple):
            v = " ".join(str(x) for x in v)
        if f.name == "loss_weights":
            continue
        lines.append(f"{f.name} = {v}")
    return lines


def dump_config(cfg: ExperimentConfig) -> str:
    """Canonical text form of the full effective config (hash input)."""
    out = []
    out.append("[model]")
    out.append("hidden = " + " ".join(str(h) for h in cfg.hidden))
    for name, obj in (
        ("source", cfg.source),
        ("target", cfg.target),
        ("pretrain", cfg.pretrain),
        ("adapt", cfg.adapt),
        ("losses", cfg.adapt.loss_weights),
        ("run", cfg.grid),
    ):
        out.append(f"[{name}]")
        out.extend(_dump_dataclass(obj))
    return "\n".join(out) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    """Short digest of the semantic config (output paths are not part of it)."""
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()[:12]
