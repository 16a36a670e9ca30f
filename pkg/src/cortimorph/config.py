"""Study configuration files.

A study is described by one TOML file. Relative paths resolve against the
directory holding the file. Every key is optional unless a subcommand
needs it::

    [study]
    alternative = "less"          # less | greater | two-sided
    q = 0.05                      # Benjamini-Hochberg level
    snap_tolerance_mm = 1.0
    search_radius_mm = 20.0
    landmarks = ["visual", "motor"]   # expected names; default: names in each file
    subset = "ad_subjects.txt"    # one subject id per line
    out = "results"

    [labels]                      # label id -> name
    1 = "GM"
    2 = "WM"

    [roles]
    gm = "GM"
    wm = "WM"
    wmh = "WMH"
    subcortical = ["caudate", "putamen", "globus_pallidus", "thalamus"]

    [inputs]
    ratings = "ratings.csv"
    globals = "globals.csv"
    region_mapping = "mapping.csv"     # default: packaged table
    thickness = "results/thickness.csv"
    reference_thickness = "manual_thickness.csv"
    volumes = "results/volumes.csv"

    [evaluate]
    candidate_dir = "pred"
    reference_dir = "manual"
    labels = [1, 2, 3]

    [[subjects]]
    id = "INDD001"
    label_map = "seg/INDD001.nii.gz"
    landmarks = "dots/INDD001.csv"
    icv = 1450000.0
    group = "AD"
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import tomli

from .morphometry import DEFAULT_SEARCH_RADIUS, DEFAULT_SNAP_TOLERANCE
from .phantom import DEFAULT_LABELS
from .stats import ALTERNATIVES

__all__ = ["ConfigError", "SubjectEntry", "StudyConfig", "load_config"]

SUBCORTICAL = ("caudate", "putamen", "globus_pallidus", "thalamus")


class ConfigError(ValueError):
    """Invalid study configuration or unresolvable input path."""


@dataclass
class SubjectEntry:
    id: str
    label_map: Optional[Path] = None
    landmarks: Optional[Path] = None
    icv: Optional[float] = None
    group: Optional[str] = None


@dataclass
class StudyConfig:
    base_dir: Path = Path(".")
    subjects: List[SubjectEntry] = field(default_factory=list)
    labels: Dict[int, str] = field(default_factory=lambda: dict(DEFAULT_LABELS))
    gm: str = "GM"
    wm: str = "WM"
    wmh: str = "WMH"
    subcortical: List[str] = field(default_factory=lambda: list(SUBCORTICAL))
    landmark_names: Optional[List[str]] = None
    ratings: Optional[Path] = None
    globals: Optional[Path] = None
    region_mapping: Optional[Path] = None
    thickness: Optional[Path] = None
    reference_thickness: Optional[Path] = None
    volumes: Optional[Path] = None
    subset: Optional[Path] = None
    candidate_dir: Optional[Path] = None
    reference_dir: Optional[Path] = None
    eval_labels: Optional[List[int]] = None
    alternative: str = "less"
    q: float = 0.05
    snap_tolerance_mm: float = DEFAULT_SNAP_TOLERANCE
    search_radius_mm: float = DEFAULT_SEARCH_RADIUS
    out: Path = Path(".")

    def validate(self):
        if self.alternative not in ALTERNATIVES:
            raise ConfigError(f"alternative must be one of {ALTERNATIVES}")
        if not 0 < self.q < 1:
            raise ConfigError("q must lie in (0, 1)")
        if not self.snap_tolerance_mm > 0 or not self.search_radius_mm > 0:
            raise ConfigError("tolerances must be positive")
        ids = [s.id for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate subject ids")
        for s in self.subjects:
            if s.icv is not None and not s.icv > 0:
                raise ConfigError(f"subject {s.id}: icv must be positive")

    def label_id(self, name: str) -> int:
        for k, v in self.labels.items():
            if v.lower() == name.lower():
                return k
        raise ConfigError(f"no label named {name!r}")

    def require(self, *attrs: str):
        """Fail unless each named path attribute is set and exists."""
        for attr in attrs:
            value = getattr(self, attr)
            if value is None:
                raise ConfigError(f"missing required input: {attr}")
            if not Path(value).exists():
                raise ConfigError(f"{attr}: path does not exist: {value}")

    def check_optional_paths(self, *attrs: str):
        for attr in attrs:
            value = getattr(self, attr)
            if value is not None and not Path(value).exists():
                raise ConfigError(f"{attr}: path does not exist: {value}")

    def read_subset(self) -> Optional[List[str]]:
        if self.subset is None:
            return None
        with open(self.subset) as fh:
            return [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]


def _path(base: Path, value) -> Optional[Path]:
    if value is None or value == "":
        return None
    p = Path(os.path.expanduser(str(value)))
    return p if p.is_absolute() else base / p


def _section(doc, name) -> dict:
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return sec


def load_config(path=None, **overrides) -> StudyConfig:
    """Parse a TOML study file; keyword overrides (None = keep) replace parsed values."""
    if path is None:
        cfg = StudyConfig()
    else:
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                doc = tomli.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        cfg = _from_doc(doc, path.parent)
    for key, value in overrides.items():
        if value is None:
            continue
        if not hasattr(cfg, key):
            raise ConfigError(f"unknown override {key!r}")
        if key in ("subset", "out", "candidate_dir", "reference_dir"):
            value = Path(value)
        setattr(cfg, key, value)
    cfg.validate()
    return cfg


def _from_doc(doc: dict, base: Path) -> StudyConfig:
    known = {"study", "labels", "roles", "inputs", "evaluate", "subjects"}
    extra = set(doc) - known
    if extra:
        raise ConfigError(f"unknown top-level keys: {sorted(extra)}")
    study = _section(doc, "study")
    roles = _section(doc, "roles")
    inputs = _section(doc, "inputs")
    ev = _section(doc, "evaluate")
    cfg = StudyConfig(base_dir=base)
    try:
        if "labels" in doc:
            cfg.labels = {int(k): str(v) for k, v in _section(doc, "labels").items()}
        cfg.gm = roles.get("gm", cfg.gm)
        cfg.wm = roles.get("wm", cfg.wm)
        cfg.wmh = roles.get("wmh", cfg.wmh)
        cfg.subcortical = list(roles.get("subcortical", cfg.subcortical))
        cfg.alternative = study.get("alternative", cfg.alternative)
        cfg.q = float(study.get("q", cfg.q))
        cfg.snap_tolerance_mm = float(study.get("snap_tolerance_mm", cfg.snap_tolerance_mm))
        cfg.search_radius_mm = float(study.get("search_radius_mm", cfg.search_radius_mm))
        if "landmarks" in study:
            cfg.landmark_names = [str(n) for n in study["landmarks"]]
        cfg.subset = _path(base, study.get("subset"))
        cfg.out = _path(base, study.get("out", ".")) or base
        for key in ("ratings", "globals", "region_mapping", "thickness", "reference_thickness", "volumes"):
            setattr(cfg, key, _path(base, inputs.get(key)))
        cfg.candidate_dir = _path(base, ev.get("candidate_dir"))
        cfg.reference_dir = _path(base, ev.get("reference_dir"))
        if "labels" in ev:
            cfg.eval_labels = [int(v) for v in ev["labels"]]
        subjects = doc.get("subjects", [])
        if not isinstance(subjects, list):
            raise ConfigError("[[subjects]] must be an array of tables")
        for entry in subjects:
            if "id" not in entry:
                raise ConfigError("every subject needs an id")
            icv = entry.get("icv")
            cfg.subjects.append(
                SubjectEntry(
                    id=str(entry["id"]),
                    label_map=_path(base, entry.get("label_map")),
                    landmarks=_path(base, entry.get("landmarks")),
                    icv=None if icv is None else float(icv),
                    group=entry.get("group"),
                )
            )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad config value: {exc}") from None
    return cfg
