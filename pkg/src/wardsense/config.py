"""Pipeline configuration: defaults, INI file, ``WARDSENSE_<KEY>`` environment
overrides and command-line flags, applied in that order.

Sections in the file only group keys for readability; every key name is
unique across sections.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError

ENV_PREFIX = "WARDSENSE_"

# keys that never change artifact content, so they stay out of the config hash
_UNHASHED = frozenset({"out_dir", "jobs"})


@dataclass(frozen=True)
class PipelineConfig:
    # inputs
    data_dir: str = ""
    rules_path: str = ""
    model_path: str = ""
    detections_path: str = ""
    truths_path: str = ""
    gallery_path: str = ""
    probes_path: str = ""
    # day/night
    anchor_hour: int = 7
    # thresholds
    au_threshold: float = 1.0
    trace_threshold: float = 0.5
    recognition_threshold: float = 0.9
    iou_threshold: float = 0.5
    nms_threshold: str = ""
    alpha: float = 0.05
    min_coverage: float = 0.5
    # smoothing and models
    loess_span: float = 0.3
    loess_degree: int = 1
    knn_k: int = 1
    minkowski_p: float = 2.0
    impute_k: int = 3
    posture_max_frames: int = 4000
    test_fraction: float = 0.2
    # policies
    strict: bool = False
    spl_mode: str = "energy"
    assume_patient_present: bool = True
    au_aliases: str = ""
    groups: str = ""
    # simulation
    sim_profiles: str = "delirious,non_delirious"
    sim_patients: int = 10
    sim_days: int = 3
    # run
    seed: int = 0
    jobs: int = 0
    out_dir: str = "wardsense_out"

    def validate(self) -> "PipelineConfig":
        """Raise one ConfigError listing every problem."""
        p = []
        if not 0 <= self.anchor_hour < 24:
            p.append(f"anchor_hour must be in [0, 24), got {self.anchor_hour}")
        if not 0 <= self.au_threshold <= 5:
            p.append(f"au_threshold must be in [0, 5], got {self.au_threshold}")
        if not 0 <= self.trace_threshold <= 5:
            p.append(f"trace_threshold must be in [0, 5], got {self.trace_threshold}")
        for name in ("recognition_threshold", "iou_threshold", "min_coverage"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                p.append(f"{name} must be in [0, 1], got {v}")
        if self.nms_threshold:
            from .deteval import NMS_PRESETS
            if self.nms_threshold not in NMS_PRESETS:
                try:
                    v = float(self.nms_threshold)
                except ValueError:
                    v = -1.0
                if not 0 <= v <= 1:
                    p.append(f"nms_threshold must be a preset {sorted(NMS_PRESETS)} or a number in [0, 1]")
        if not 0 < self.alpha < 1:
            p.append(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0 < self.loess_span <= 1:
            p.append(f"loess_span must be in (0, 1], got {self.loess_span}")
        if self.loess_degree not in (0, 1, 2):
            p.append(f"loess_degree must be 0, 1 or 2, got {self.loess_degree}")
        for name in ("knn_k", "impute_k", "posture_max_frames", "sim_patients", "sim_days"):
            if getattr(self, name) < 1:
                p.append(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.minkowski_p < 1:
            p.append(f"minkowski_p must be >= 1, got {self.minkowski_p}")
        if not 0 < self.test_fraction < 1:
            p.append(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        if self.spl_mode not in ("energy", "arithmetic"):
            p.append(f"spl_mode must be 'energy' or 'arithmetic', got {self.spl_mode!r}")
        if self.jobs < 0:
            p.append(f"jobs must be >= 0 (0 = all CPUs), got {self.jobs}")
        try:
            self.alias_map()
        except ValueError as exc:
            p.append(str(exc))
        if self.groups and len(self.group_pair()) != 2:
            p.append(f"groups must name exactly two groups, got {self.groups!r}")
        if p:
            raise ConfigError(p)
        return self

    def alias_map(self) -> dict[str, str]:
        out = {}
        for item in filter(None, (s.strip() for s in self.au_aliases.split(","))):
            if ":" not in item:
                raise ValueError(f"au_aliases entry {item!r} is not RULE_AU:STREAM_AU")
            a, b = (x.strip() for x in item.split(":", 1))
            out[a] = b
        return out

    def group_pair(self) -> tuple[str, ...]:
        return tuple(g.strip() for g in self.groups.split(",") if g.strip())

    def profiles(self) -> list[str]:
        return [s.strip() for s in self.sim_profiles.split(",") if s.strip()]

    def workers(self) -> int:
        return self.jobs or os.cpu_count() or 1

    def as_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON of every content-affecting key."""
        d = {k: v for k, v in self.as_dict().items() if k not in _UNHASHED}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode("utf-8")).hexdigest()


_FIELDS = {f.name: f for f in fields(PipelineConfig)}


def _coerce(key: str, raw, problems: list):
    kind = _FIELDS[key].type
    text = str(raw).strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        return text
    except ValueError:
        problems.append(f"{key}: cannot read {text!r} as {kind}")
        return None


def load_config(path=None, overrides: dict | None = None, environ=None) -> PipelineConfig:
    """Defaults, then the file at ``path``, then the environment, then ``overrides``.

    Unknown keys and unreadable values are collected and reported together with
    range violations.
    """
    environ = os.environ if environ is None else environ
    values: dict = {}
    problems: list[str] = []
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in cp.sections():
            for key, raw in cp.items(section):
                if key not in _FIELDS:
                    problems.append(f"[{section}] unknown key {key!r}")
                else:
                    values[key] = _coerce(key, raw, problems)
        # paths in the file are relative to the file
        base = Path(path).resolve().parent
        for key in [k for k in values if k.endswith(("_path", "_dir")) and values[k]]:
            values[key] = str((base / values[key]).resolve()) if not Path(values[key]).is_absolute() else values[key]
    for key in _FIELDS:
        env_key = ENV_PREFIX + key.upper()
        if env_key in environ:
            values[key] = _coerce(key, environ[env_key], problems)
    for key, v in (overrides or {}).items():
        if v is None:
            continue
        if key not in _FIELDS:
            problems.append(f"unknown key {key!r}")
            continue
        values[key] = v
    cfg = replace(PipelineConfig(), **{k: v for k, v in values.items() if v is not None})
    try:
        cfg.validate()
    except ConfigError as exc:
        problems.extend(exc.problems)
    if problems:
        raise ConfigError(problems)
    return cfg


def dump_config(cfg: PipelineConfig) -> str:
    """INI text that :func:`load_config` reads back to an equal config (relative
    paths are re-read relative to wherever the file is saved)."""
    lines = ["[wardsense]"]
    for key, value in cfg.as_dict().items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
