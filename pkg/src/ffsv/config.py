"""Line-oriented pipeline configuration: ``section.key = value``.

Blank lines and ``#`` comments are ignored. Every key must name a field
of the matching section dataclass; anything else is a ``ConfigError``.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field

from .beamform import CgmmConfig
from .dsp import StftConfig
from .nn.model import BlockSpec, MicroNetConfig
from .nn.train import TrainConfig
from .roomsim import RoomRanges
from .scoring import DcfParams, SelectionPolicy
from .wpe import WpeConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Paths:
    audio_root: str = ""
    checkpoint: str = ""
    trials: str = ""
    manifest: str = ""
    out_dir: str = "out"


@dataclass(frozen=True)
class Stages:
    wpe: bool = False
    beamformer: bool = False
    selection: bool = False
    dat: bool = False


@dataclass(frozen=True)
class Schedule:
    """Epoch counts for the two training stages."""

    pretrain_epochs: int = 20
    finetune_epochs: int = 10

    def __post_init__(self):
        if self.pretrain_epochs < 1 or self.finetune_epochs < 0:
            raise ValueError("pretrain_epochs must be >= 1 and finetune_epochs >= 0")


@dataclass(frozen=True)
class Simulate:
    num_rooms: int = 8
    snr_db: float = 10.0


@dataclass(frozen=True)
class Devset:
    """Shape of the seeded synthetic set used by the ablation."""

    train_speakers: int = 16
    train_utterances: int = 12  # per speaker and domain
    eval_speakers: int = 12
    enroll_utterances: int = 1
    test_utterances: int = 4
    duration: float = 2.5
    t60: tuple[float, float] = (0.3, 0.6)
    snr_db: tuple[float, float] = (15.0, 25.0)
    num_mics: int = 4
    distance: tuple[float, float] = (1.0, 2.5)  # source to array centre, metres
    noise_sources: int = 6  # independent point sources approximating a diffuse field
    uncorrelated_noise: float = 0.5  # share of noise power that is independent per microphone
    highpass_hz: float = 100.0  # microphone high-pass; removes the image method's DC build-up
    sensor_snr_db: float = 40.0  # white self-noise of every microphone, close-talk included

    def __post_init__(self):
        if self.noise_sources < 0 or not 0 <= self.uncorrelated_noise <= 1:
            raise ValueError("noise_sources must be >= 0 and uncorrelated_noise in [0, 1]")
        if self.noise_sources == 0 and self.uncorrelated_noise == 0:
            raise ValueError("the devset needs some noise")
        if min(self.train_speakers, self.eval_speakers) < 2:
            raise ValueError("devset needs at least two speakers on each side")
        if min(self.train_utterances, self.enroll_utterances, self.test_utterances, self.num_mics) < 1:
            raise ValueError("devset counts must be positive")
        if self.duration <= 0:
            raise ValueError("duration must be positive")


ABLATION_NET = MicroNetConfig(stem_channels=8, stem_stride=2,
                              blocks=(BlockSpec(16, 4, 2, True), BlockSpec(16, 4, 2, True)))


@dataclass(frozen=True)
class PipelineConfig:
    paths: Paths = field(default_factory=Paths)
    stages: Stages = field(default_factory=Stages)
    stft: StftConfig = field(default_factory=StftConfig)
    # 2-3 s utterances give ~300 frames per bin; 4 channels x 10 taps would
    # spend about a third of the signal on spurious prediction (~sqrt(C*K/T))
    wpe: WpeConfig = field(default_factory=lambda: WpeConfig(taps=4))
    cgmm: CgmmConfig = field(default_factory=CgmmConfig)
    net: MicroNetConfig = ABLATION_NET
    # desk-scale schedule: a slower decay than the TrainConfig default, and a
    # fast domain discriminator for the DAT stage
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        learning_rate=0.2, decay_every=15, epochs=30, lam=0.5, domain_lr_scale=20.0))
    schedule: Schedule = field(default_factory=Schedule)
    selection: SelectionPolicy = field(default_factory=SelectionPolicy)
    dcf: DcfParams = field(default_factory=DcfParams)
    room: RoomRanges = field(default_factory=RoomRanges)
    simulate: Simulate = field(default_factory=Simulate)
    devset: Devset = field(default_factory=Devset)
    seed: int = 0

    def with_seed(self, seed: int) -> "PipelineConfig":
        return dataclasses.replace(self, seed=seed)

    def with_stages(self, **toggles) -> "PipelineConfig":
        return dataclasses.replace(self, stages=dataclasses.replace(self.stages, **toggles))


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_bool(text):
    low = text.lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_blocks(text):
    """``out:mid:stride:bam`` entries separated by commas, e.g. ``16:4:2:1,16:4:2:1``."""
    blocks = []
    for item in text.split(","):
        parts = item.strip().split(":")
        if len(parts) != 4:
            raise ValueError(f"block spec {item!r} needs out:mid:stride:bam")
        blocks.append(BlockSpec(int(parts[0]), int(parts[1]), int(parts[2]), _parse_bool(parts[3])))
    return tuple(blocks)


def _parse_value(text, hint, name):
    if name == "blocks":
        return _parse_blocks(text)
    origin = typing.get_origin(hint)
    if origin is tuple:
        args = typing.get_args(hint)
        items = [v.strip() for v in text.split(",")]
        if args and args[-1] is not Ellipsis and len(items) != len(args):
            raise ValueError(f"expected {len(args)} comma-separated values")
        inner = args[0] if args else str
        return tuple(_parse_value(v, inner, "") for v in items)
    if hint is bool:
        return _parse_bool(text)
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    return text


def _hints(cls):
    return typing.get_type_hints(cls)


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    cfg = base or PipelineConfig()
    top = _hints(PipelineConfig)
    updates: dict[str, dict[str, object]] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'section.key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "seed":
            try:
                cfg = dataclasses.replace(cfg, seed=int(value))
            except ValueError as exc:
                raise ConfigError(f"line {n}: {exc}") from None
            continue
        section, _, name = key.partition(".")
        if section not in top or section == "seed" or not name:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        fields = _hints(top[section])
        if name not in fields:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        try:
            updates.setdefault(section, {})[name] = _parse_value(value, fields[name], name)
        except ValueError as exc:
            raise ConfigError(f"line {n}: {key}: {exc}") from None
    for section, values in updates.items():
        try:
            sub = dataclasses.replace(getattr(cfg, section), **values)
            if hasattr(sub, "check"):
                sub.check()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"section {section}: {exc}") from None
        cfg = dataclasses.replace(cfg, **{section: sub})
    return cfg


def load_config(path) -> PipelineConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple) and v and isinstance(v[0], BlockSpec):
        return ",".join(f"{b.out_channels}:{b.mid_channels}:{b.stride}:{int(b.bam)}" for b in v)
    if isinstance(v, tuple):
        return ",".join(_format_value(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def format_config(cfg: PipelineConfig) -> str:
    """Inverse of ``parse_config`` for every field."""
    lines = [f"seed = {cfg.seed}"]
    for f in dataclasses.fields(cfg):
        if f.name == "seed":
            continue
        sub = getattr(cfg, f.name)
        for g in dataclasses.fields(sub):
            lines.append(f"{f.name}.{g.name} = {_format_value(getattr(sub, g.name))}")
    return "\n".join(lines) + "\n"
