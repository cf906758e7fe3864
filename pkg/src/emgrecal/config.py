"""Plain-text key=value configuration with dotted namespaces.

Precedence: CLI overrides > file > defaults.  The same format is used for
synthetic-dataset specs, run configs, and emitted manifests, so every run
is reproducible from the files it leaves behind.
"""

from dataclasses import dataclass, field

from .datasets import SynthSpec
from .model import TcnConfig
from .training import CalibrationScheme, TrainSpec

ALL_SCHEMES = tuple(CalibrationScheme)


class ConfigError(ValueError):
    """Bad configuration file or override."""


def parse_kv_text(text, source="<config>"):
    items = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: line {lineno}: expected key=value")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}: line {lineno}: empty key")
        items[key] = value.strip()
    return items


def parse_kv_file(path):
    with open(path, "r") as fh:
        return parse_kv_text(fh.read(), source=str(path))


def write_kv_file(path, items):
    with open(path, "w") as fh:
        for key, value in items.items():
            fh.write(f"{key}={value}\n")


def _subset(items, prefix):
    plen = len(prefix)
    return {k[plen:]: v for k, v in items.items() if k.startswith(prefix)}


def _int_list(text):
    return tuple(int(v) for v in text.split(",") if v != "")


@dataclass
class RunConfig:
    """Everything a benchmark/train run needs, resolved from file + flags."""

    dataset_path: str = None
    synth: SynthSpec = None
    schemes: tuple = ALL_SCHEMES
    seeds: tuple = (0,)
    train: TrainSpec = field(default_factory=TrainSpec)
    model: TcnConfig = field(default_factory=TcnConfig)
    trim_transitions_s: float = 1.5
    intensity_bin_width: float = 0.05
    orientation_cell_deg: float = 5.0
    orientation_min_count: int = 500
    analyze_eval_runs: bool = True
    raw_items: dict = field(default_factory=dict)

    def validate(self):
        if not self.schemes:
            raise ConfigError("at least one scheme is required")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.dataset_path is None and self.synth is None:
            raise ConfigError("config needs dataset.path or a synth.* block")

    @classmethod
    def from_items(cls, items):
        cfg = cls(raw_items=dict(items))
        if "dataset.path" in items:
            cfg.dataset_path = items["dataset.path"]
        synth_items = _subset(items, "synth.")
        if synth_items:
            try:
                cfg.synth = SynthSpec.from_items(synth_items)
            except (TypeError, ValueError) as err:
                raise ConfigError(f"bad synth spec: {err}") from err
        if "run.schemes" in items:
            try:
                cfg.schemes = tuple(
                    CalibrationScheme(s.strip())
                    for s in items["run.schemes"].split(",") if s.strip()
                )
            except ValueError as err:
                raise ConfigError(f"unknown scheme: {err}") from err
        if "run.seeds" in items:
            cfg.seeds = _int_list(items["run.seeds"])
        for key, attr, conv in (
            ("run.trim_transitions_s", "trim_transitions_s", float),
            ("run.intensity_bin_width", "intensity_bin_width", float),
            ("run.orientation_cell_deg", "orientation_cell_deg", float),
            ("run.orientation_min_count", "orientation_min_count", int),
        ):
            if key in items:
                setattr(cfg, attr, conv(items[key]))
        if "run.analyze_eval_runs" in items:
            cfg.analyze_eval_runs = items["run.analyze_eval_runs"] not in (
                "0", "false", "no",
            )
        train_items = _subset(items, "train.")
        if train_items:
            try:
                cfg.train = TrainSpec.from_items(train_items)
            except (TypeError, ValueError, KeyError) as err:
                raise ConfigError(f"bad train block: {err}") from err
        model_items = _subset(items, "model.")
        if model_items:
            base = TcnConfig().to_items()
            base.update(model_items)
            try:
                cfg.model = TcnConfig.from_items(base)
            except (TypeError, ValueError) as err:
                raise ConfigError(f"bad model block: {err}") from err
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path=None, overrides=None):
        items = parse_kv_file(path) if path else {}
        for key, value in (overrides or {}).items():
            items[key] = value
        return cls.from_items(items)
