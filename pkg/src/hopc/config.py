"""INI-style run configuration.

Sections and keys mirror the config dataclasses::

    [grid]      pitch, halo
    [optics]    wavelength, na, kernel_count, kernel_weights, support_radius
    [resist]    threshold, steepness
    [ilt]       max_iters, step_size, mask_steepness, stop_tol, line_search, ...
    [mbopc]     fragment_length, max_iters, step, epe_tol, max_offset
    [features]  keep, blocks
    [train]     epochs, learning_rate, beta, loss, phi, l2, seed

Anything missing keeps its default. Unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from .ilt import IltConfig
from .litho import ConfigError, LithoContext, OpticsConfig, ResistConfig
from .mbopc import MbOpcConfig
from .selector import TrainConfig


@dataclass(frozen=True)
class GridSettings:
    pitch: int = 8
    halo: int = 0


@dataclass(frozen=True)
class FeatureSettings:
    keep: int = 32
    blocks: int = 12


@dataclass
class RunConfig:
    grid: GridSettings = field(default_factory=GridSettings)
    optics: OpticsConfig = field(default_factory=lambda: OpticsConfig(pitch=8.0))
    resist: ResistConfig = field(default_factory=ResistConfig)
    ilt: IltConfig = field(default_factory=IltConfig)
    mbopc: MbOpcConfig = field(default_factory=MbOpcConfig)
    features: FeatureSettings = field(default_factory=FeatureSettings)
    train: TrainConfig = field(default_factory=TrainConfig)

    def litho_context(self) -> LithoContext:
        return LithoContext.build(self.optics, self.resist)


_SECTIONS = {
    "grid": GridSettings, "optics": OpticsConfig, "resist": ResistConfig, "ilt": IltConfig,
    "mbopc": MbOpcConfig, "features": FeatureSettings, "train": TrainConfig,
}


def _convert(cls, key: str, raw: str, default):
    raw = raw.strip()
    if cls is OpticsConfig and key == "kernel_weights":
        return tuple(float(v) for v in raw.replace(",", " ").split())
    if cls is OpticsConfig and key == "support_radius":
        return None if raw.lower() in ("", "auto", "none") else int(raw)
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    built = {}
    for name in cp.sections():
        if name not in _SECTIONS:
            raise ConfigError(f"{source}: unknown section [{name}]")
    for name, cls in _SECTIONS.items():
        base = getattr(RunConfig(), name)
        if name not in cp:
            built[name] = base
            continue
        fields = {f.name: getattr(base, f.name) for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in cp[name].items():
            if key not in fields:
                raise ConfigError(f"{source}: unknown key {key!r} in [{name}]")
            try:
                kwargs[key] = _convert(cls, key, raw, fields[key])
            except ValueError as exc:
                raise ConfigError(f"{source}: [{name}] {key}: {exc}") from None
        try:
            built[name] = dataclasses.replace(base, **kwargs)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{source}: [{name}] {exc}") from None
    grid = built["grid"]
    if grid.pitch < 1 or grid.halo < 0:
        raise ConfigError(f"{source}: [grid] pitch must be >= 1 and halo >= 0")
    if "optics" not in cp or "pitch" not in cp["optics"]:
        built["optics"] = dataclasses.replace(built["optics"], pitch=float(grid.pitch))
    elif built["optics"].pitch != grid.pitch:
        raise ConfigError(f"{source}: [optics] pitch {built['optics'].pitch} differs from [grid] pitch {grid.pitch}")
    return RunConfig(**built)


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))
