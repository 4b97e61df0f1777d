"""Pipeline configuration stored as sectioned ``key = value`` text."""
from __future__ import annotations

import configparser
import dataclasses
import io
import os
from dataclasses import dataclass, field

from .fusion import OPTIONAL
from .pipeline import StudyConfig

# section -> StudyConfig fields stored there
_SECTIONS = {
    "scene": ("height", "width", "n_train", "n_fusion", "n_test"),
    "codebook": ("k_t", "k_b", "k_l", "layout_corpus"),
    "train": ("init", "batch_size", "topdown_lr", "topdown_epochs", "bottomup_lr", "bottomup_epochs",
              "bottomup_patches", "fusion_lr", "fusion_epochs", "fusion_patches", "fusion_batch_size", "baseline_lr",
              "baseline_epochs"),
}
_PATHS = ("work_dir", "data_dir", "codebook_dir", "weights_dir")
DECODE_MODES = ("triangle", "soft")

# --tiny: a quick end-to-end run; accuracy comparisons use the full StudyConfig defaults
TINY_PRESET = dict(n_train=40, n_fusion=30, n_test=20, k_l=24, layout_corpus=120, topdown_epochs=20,
                   bottomup_epochs=5, bottomup_patches=10, fusion_epochs=5, fusion_patches=10,
                   baseline_epochs=20)


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    study: StudyConfig = field(default_factory=StudyConfig)
    work_dir: str = "work"
    data_dir: str = "data"
    codebook_dir: str = "codebooks"
    weights_dir: str = "weights"
    decode: str = "triangle"
    channels: tuple = OPTIONAL

    def __post_init__(self):
        if self.decode not in DECODE_MODES:
            raise ConfigError(f"decode must be one of {DECODE_MODES}, got {self.decode!r}")
        bad = set(self.channels) - set(OPTIONAL)
        if bad:
            raise ConfigError(f"unknown fusion channels {sorted(bad)}")
        self.channels = tuple(c for c in OPTIONAL if c in self.channels)

    @classmethod
    def defaults(cls, tiny: bool = False) -> "PipelineConfig":
        return cls(study=StudyConfig(tiny=tiny, **(TINY_PRESET if tiny else {})))

    # -- paths --------------------------------------------------------------
    def path(self, name: str, *parts) -> str:
        base = getattr(self, name)
        if name != "work_dir" and not os.path.isabs(base):
            base = os.path.join(self.work_dir, base)
        return os.path.join(base, *parts)

    def split_dir(self, split: str) -> str:
        return self.path("data_dir", split)

    def codebook_paths(self) -> dict[str, str]:
        return {"coarse": self.path("codebook_dir", "coarse.ncb"),
                "local": self.path("codebook_dir", "local.ncb"),
                "layout": self.path("codebook_dir", "layouts.lcb")}

    def weight_path(self, net: str) -> str:
        return self.path("weights_dir", f"{net}.nfw")

    # -- text form ------------------------------------------------------------
    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        s = self.study
        cp["pipeline"] = {"seed": str(s.seed), "tiny": str(s.tiny).lower(), "decode": self.decode,
                          "channels": ",".join(self.channels), "tau_deg": repr(float(s.tau_deg))}
        cp["paths"] = {k: getattr(self, k) for k in _PATHS}
        for sec, keys in _SECTIONS.items():
            cp[sec] = {k: _fmt(getattr(s, k)) for k in keys}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str, base: "PipelineConfig | None" = None) -> "PipelineConfig":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as e:
            raise ConfigError(f"cannot parse config: {e}") from None
        base = base or cls.defaults(_bool(cp.get("pipeline", "tiny", fallback="false")))
        known = {"pipeline", "paths", *_SECTIONS}
        unknown = set(cp.sections()) - known
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        types = {f.name: f.type for f in dataclasses.fields(StudyConfig)}
        study = {}
        pipe = cp["pipeline"] if cp.has_section("pipeline") else {}
        for k, v in pipe.items():
            if k in ("seed", "tiny", "tau_deg"):
                study[k] = _cast(types[k], v, k)
            elif k not in ("decode", "channels"):
                raise ConfigError(f"unknown key pipeline.{k}")
        for sec, keys in _SECTIONS.items():
            if not cp.has_section(sec):
                continue
            for k, v in cp[sec].items():
                if k not in keys:
                    raise ConfigError(f"unknown key {sec}.{k}")
                study[k] = _cast(types[k], v, f"{sec}.{k}")
        paths = {}
        if cp.has_section("paths"):
            for k, v in cp["paths"].items():
                if k not in _PATHS:
                    raise ConfigError(f"unknown key paths.{k}")
                paths[k] = v
        channels = base.channels
        if "channels" in pipe:
            channels = tuple(c.strip() for c in pipe["channels"].split(",") if c.strip())
        return dataclasses.replace(base, study=dataclasses.replace(base.study, **study),
                                   decode=pipe.get("decode", base.decode), channels=channels, **paths)

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_text())

    @classmethod
    def load(cls, path, base=None) -> "PipelineConfig":
        with open(path) as f:
            return cls.from_text(f.read(), base)


def parse_channels(spec: str) -> tuple:
    """``+layout,+edge`` style toggles; ``all`` and ``none`` are accepted too."""
    spec = spec.strip()
    if spec in ("all", "full"):
        return OPTIONAL
    if spec in ("none", ""):
        return ()
    out = []
    for tok in spec.split(","):
        name = tok.strip().lstrip("+")
        if name not in OPTIONAL:
            raise ConfigError(f"unknown fusion channel {tok!r}; choose from {', '.join(OPTIONAL)}")
        out.append(name)
    return tuple(c for c in OPTIONAL if c in out)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _bool(v: str) -> bool:
    v = v.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _cast(typ, v: str, key: str):
    typ = typ if isinstance(typ, str) else typ.__name__
    try:
        if typ == "bool":
            return _bool(v)
        if typ == "int":
            return int(v)
        if typ == "float":
            return float(v)
        return v.strip()
    except ValueError:
        raise ConfigError(f"bad value for {key}: {v!r}") from None
