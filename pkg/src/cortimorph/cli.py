"""Batch command-line front end.

Subcommands ``thickness``, ``volumes``, ``evaluate``, ``correlate`` and
``phantom``. Exit status is 0 on success, 1 when some subject rows failed
and 2 for an invalid configuration or unusable inputs.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import metrics, morphometry, phantom, stats
from .config import ConfigError, StudyConfig, load_config
from .volume_io import NiftiError, read_volume, write_volume

log = logging.getLogger("cortimorph")

EXIT_OK, EXIT_PARTIAL, EXIT_INVALID = 0, 1, 2

THICKNESS_COLUMNS = [
    "subject", "landmark", "thickness_mm", "center_x", "center_y", "center_z",
    "radius_mm", "snapped", "snap_distance_mm", "flag",
]  # fmt: skip
VOLUME_COLUMNS = [
    "subject", "label", "voxel_count", "volume_mm3", "icv_mm3", "icv_adjusted", "ratio", "flag",
]  # fmt: skip
METRIC_COLUMNS = ["subject", "label", "dsc", "hd95_mm", "flag"]
CORRELATION_COLUMNS = ["roi", "measure", "rho", "p", "n", "bh_rejected", "flag"]
WMH_COLUMNS = ["roi", "measure", "rho", "p", "n", "partialed_on", "bh_rejected", "flag"]
AGREEMENT_COLUMNS = [
    "roi", "n", "rho", "p", "icc", "ba_mean", "ba_sd", "ba_loa_low", "ba_loa_high", "flag",
]  # fmt: skip
GROUP_COLUMNS = [
    "structure", "group_a", "group_b", "n_a", "n_b", "u", "p", "bh_rejected", "stars",
]  # fmt: skip


def fmt(value) -> str:
    """Fixed CSV formatting: 6 significant digits, blanks for missing values."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return ""
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        out = f"{v:.6g}"
        return "0" if out == "-0" else out
    return str(value)


def write_csv(path: Path, columns: Sequence[str], rows: Sequence[dict]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row.get(c)) for c in columns])


def read_csv(path) -> List[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _num(text) -> Optional[float]:
    if text is None or str(text).strip() == "":
        return None
    try:
        v = float(text)
    except ValueError:
        return None
    return None if math.isnan(v) else v


def _map_jobs(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _need_subjects(cfg: StudyConfig):
    if not cfg.subjects:
        raise ConfigError("no subjects")


# --------------------------------------------------------------------------
# thickness


def _subject_thickness(cfg: StudyConfig, subj) -> List[dict]:
    base = {"subject": subj.id}
    try:
        lm = read_volume(subj.label_map, as_labels=True)
        gm = lm.labels == cfg.label_id(cfg.gm)
        landmarks = morphometry.read_landmarks(subj.landmarks)
    except (OSError, ValueError) as exc:
        return [{**base, "landmark": "*", "flag": f"error:{type(exc).__name__}:{exc}"}]
    names = cfg.landmark_names or landmarks.names
    if not gm.any():
        return [{**base, "landmark": n, "flag": "error:empty-gm"} for n in names]
    dist = morphometry.distance_transform(gm, lm.grid.spacing)
    rows = []
    for name in names:
        row = {**base, "landmark": name}
        if name not in landmarks:
            rows.append({**row, "flag": "missing-landmark"})
            continue
        try:
            res = morphometry.inscribed_sphere_thickness(
                gm, lm.grid, landmarks[name],
                search_radius=cfg.search_radius_mm,
                snap_tolerance=cfg.snap_tolerance_mm,
                name=name, distance=dist,
            )  # fmt: skip
        except morphometry.LandmarkOutsideError:
            rows.append({**row, "flag": "landmark-outside"})
            continue
        c = res.sphere_center
        rows.append({
            **row,
            "thickness_mm": res.thickness, "center_x": c[0], "center_y": c[1], "center_z": c[2],
            "radius_mm": res.sphere_radius, "snapped": res.snapped,
            "snap_distance_mm": res.snap_distance, "flag": res.flag,
        })  # fmt: skip
    return rows


def cmd_thickness(cfg: StudyConfig, jobs: int = 1) -> int:
    _need_subjects(cfg)
    cfg.label_id(cfg.gm)
    for s in cfg.subjects:
        if s.label_map is None or s.landmarks is None:
            raise ConfigError(f"subject {s.id}: label_map and landmarks are required")
        for p in (s.label_map, s.landmarks):
            if not Path(p).exists():
                raise ConfigError(f"subject {s.id}: path does not exist: {p}")
    results = _map_jobs(lambda s: _subject_thickness(cfg, s), cfg.subjects, jobs)
    rows = sorted((r for rs in results for r in rs), key=lambda r: (r["subject"], r["landmark"]))
    write_csv(cfg.out / "thickness.csv", THICKNESS_COLUMNS, rows)
    failed = any(r.get("flag", "").startswith("error") for r in rows)
    return EXIT_PARTIAL if failed else EXIT_OK


# --------------------------------------------------------------------------
# volumes


def _subject_volumes(cfg: StudyConfig, subj, icv, imputed) -> List[dict]:
    base = {"subject": subj.id}
    try:
        lm = read_volume(subj.label_map, as_labels=True, dictionary=cfg.labels)
    except (OSError, ValueError) as exc:
        return [{**base, "label": "*", "flag": f"error:{type(exc).__name__}:{exc}"}]
    rows = []
    flag = "imputed" if imputed else ""
    for lab_id in sorted(cfg.labels):
        if lab_id not in lm.dictionary:
            continue
        v = morphometry.region_volume(lm, lab_id, icv)
        rows.append({
            **base, "label": v.label, "voxel_count": v.voxel_count, "volume_mm3": v.volume,
            "icv_mm3": v.icv, "icv_adjusted": v.icv_adjusted, "flag": flag,
        })  # fmt: skip
    try:
        ratio = morphometry.normalized_wmh_volume(lm, cfg.label_id(cfg.wmh), cfg.label_id(cfg.wm))
        rows.append({**base, "label": "normalized_wmh", "ratio": ratio})
    except ValueError:
        rows.append({**base, "label": "normalized_wmh", "flag": "error:undefined-normalization"})
    return rows


def cmd_volumes(cfg: StudyConfig, jobs: int = 1) -> int:
    _need_subjects(cfg)
    cfg.label_id(cfg.wm)
    cfg.label_id(cfg.wmh)
    for s in cfg.subjects:
        if s.label_map is None or not Path(s.label_map).exists():
            raise ConfigError(f"subject {s.id}: label map missing: {s.label_map}")
    raw = [s.icv for s in cfg.subjects]
    if all(v is None for v in raw):
        icvs, imputed = raw, [False] * len(raw)
    else:
        icvs = morphometry.impute_icv(raw)
        imputed = [v is None for v in raw]
    items = list(zip(cfg.subjects, icvs, imputed))
    results = _map_jobs(lambda it: _subject_volumes(cfg, *it), items, jobs)
    rows = sorted((r for rs in results for r in rs), key=lambda r: (r["subject"], r["label"]))
    write_csv(cfg.out / "volumes.csv", VOLUME_COLUMNS, rows)
    failed = any(r.get("flag", "").startswith("error") for r in rows)
    return EXIT_PARTIAL if failed else EXIT_OK


# --------------------------------------------------------------------------
# evaluate


def _volume_files(directory: Path) -> Dict[str, Path]:
    out = {}
    for p in sorted(directory.iterdir()):
        for ext in (".nii.gz", ".nii"):
            if p.name.endswith(ext):
                out[p.name[: -len(ext)]] = p
                break
    return out


def _evaluate_subject(name, cand_path, ref_path, labels) -> List[dict]:
    base = {"subject": name}
    if cand_path is None:
        return [{**base, "label": "*", "flag": "error:missing-candidate"}]
    try:
        cand = read_volume(cand_path, as_labels=True)
        ref = read_volume(ref_path, as_labels=True)
        report = metrics.evaluate_labels(cand, ref, labels)
    except (OSError, ValueError) as exc:
        msg = "grid-mismatch" if "grid mismatch" in str(exc) else f"{type(exc).__name__}:{exc}"
        return [{**base, "label": "*", "flag": f"error:{msg}"}]
    return [
        {**base, "label": r.label, "dsc": r.dsc, "hd95_mm": r.hd95, "flag": r.flag}
        for r in report.records
    ]


def cmd_evaluate(cfg: StudyConfig, jobs: int = 1) -> int:
    cfg.require("candidate_dir", "reference_dir")
    labels = cfg.eval_labels or sorted(cfg.labels)
    refs = _volume_files(cfg.reference_dir)
    if not refs:
        raise ConfigError(f"no NIfTI volumes in {cfg.reference_dir}")
    cands = _volume_files(cfg.candidate_dir)
    items = [(name, cands.get(name), path) for name, path in refs.items()]
    results = _map_jobs(lambda it: _evaluate_subject(*it, labels), items, jobs)
    rows = sorted((r for rs in results for r in rs), key=lambda r: (r["subject"], r["label"]))
    write_csv(cfg.out / "metrics.csv", METRIC_COLUMNS, rows)
    summary = {}
    for lab in sorted({r["label"] for r in rows if r["label"] != "*"}):
        sel = [r for r in rows if r["label"] == lab]
        summary[lab] = {
            "dsc": metrics.aggregate([r["dsc"] for r in sel]),
            "hd95_mm": metrics.aggregate([r["hd95_mm"] for r in sel]),
        }
    with open(cfg.out / "metrics_summary.json", "w") as fh:
        json.dump(_json_safe(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    failed = any(r.get("flag", "").startswith("error") for r in rows)
    return EXIT_PARTIAL if failed else EXIT_OK


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, float):
        return None if math.isnan(obj) else float(fmt(obj))
    return obj


# --------------------------------------------------------------------------
# correlate


def _roi_order(rois) -> List[str]:
    canon = {n: i for i, n in enumerate(morphometry.LANDMARK_NAMES)}
    return sorted(rois, key=lambda r: (canon.get(r, len(canon)), r))


def _thickness_table(path) -> Dict[str, Dict[str, float]]:
    table: Dict[str, Dict[str, float]] = {}
    for row in read_csv(path):
        v = _num(row.get("thickness_mm"))
        table.setdefault(row["landmark"], {})
        if v is not None and row["landmark"] != "*":
            table[row["landmark"]][row["subject"]] = v
    table.pop("*", None)
    return table


def _volume_table(path):
    vols: Dict[str, Dict[str, dict]] = {}
    for row in read_csv(path):
        vols.setdefault(row["label"], {})[row["subject"]] = row
    return vols


def _correlate_cell(xs, ys, alternative) -> dict:
    n = sum(1 for a, b in zip(xs, ys) if a is not None and b is not None)
    if n < 3:
        return {"n": n, "flag": "insufficient-n"}
    try:
        res = stats.spearman(xs, ys, alternative)
    except ValueError:
        return {"n": n, "flag": "error:constant"}
    return {"rho": res.rho, "p": res.p, "n": res.n, "flag": ""}


def _apply_bh(rows: List[dict], q: float, by: Optional[str]):
    groups: Dict[object, List[dict]] = {}
    for r in rows:
        if r.get("p") is not None:
            groups.setdefault(r.get(by) if by else None, []).append(r)
    for sel in groups.values():
        for r, rej in zip(sel, stats.bh_fdr([r["p"] for r in sel], q)):
            r["bh_rejected"] = rej


def _pathology_matrix(cfg, thick, ratings, mapping, subjects) -> List[dict]:
    rows = []
    unmapped = []
    regional = stats.REGIONAL_MEASURES if ratings.regional else ()
    global_ = stats.GLOBAL_MEASURES if ratings.globals else ()
    for roi in _roi_order(thick):
        xs = [thick[roi].get(s) for s in subjects]
        region = mapping.get(roi)
        if region is None and regional:
            unmapped.append(roi)
            continue
        for m in regional:
            ys = [ratings.regional_value(s, region[0], m) for s in subjects]
            rows.append({"roi": roi, "measure": m, **_correlate_cell(xs, ys, cfg.alternative)})
        for m in global_:
            ys = [ratings.global_value(s, m) for s in subjects]
            rows.append({"roi": roi, "measure": m, **_correlate_cell(xs, ys, cfg.alternative)})
    if unmapped:
        log.warning("ROIs without a pathology region (skipped): %s", ", ".join(unmapped))
    _apply_bh(rows, cfg.q, by="measure")
    return rows


def _wmh_table(cfg, thick, vols, subjects) -> List[dict]:
    nwmh = {s: _num(r.get("ratio")) for s, r in vols.get("normalized_wmh", {}).items()}
    ys = [nwmh.get(s) for s in subjects]
    rows = []
    for roi in _roi_order(thick):
        xs = [thick[roi].get(s) for s in subjects]
        rows.append({"roi": roi, "measure": "normalized_wmh", **_correlate_cell(xs, ys, cfg.alternative)})
    for struct in cfg.subcortical:
        table = {k.lower(): v for k, v in vols.items()}.get(struct.lower(), {})
        xs = [_num(table[s].get("volume_mm3")) if s in table else None for s in subjects]
        zs = [_num(table[s].get("icv_mm3")) if s in table else None for s in subjects]
        row = {"roi": struct, "measure": "normalized_wmh", "partialed_on": "icv"}
        n = sum(1 for t in zip(xs, ys, zs) if None not in t)
        if n < 4:
            rows.append({**row, "n": n, "flag": "insufficient-n"})
            continue
        try:
            res = stats.partial_spearman(xs, ys, zs, cfg.alternative, "icv")
        except ValueError:
            rows.append({**row, "n": n, "flag": "error:degenerate"})
            continue
        rows.append({**row, "rho": res.rho, "p": res.p, "n": res.n,
                     "partialed_on": res.partialed_on if not res.flag else "", "flag": res.flag})  # fmt: skip
    _apply_bh(rows, cfg.q, by=None)
    return rows


def _agreement_table(cfg, thick, ref, subjects) -> List[dict]:
    rows = []
    for roi in _roi_order(set(thick) & set(ref)):
        pairs = [(thick[roi][s], ref[roi][s]) for s in subjects if s in thick[roi] and s in ref[roi]]
        row = {"roi": roi, "n": len(pairs)}
        if len(pairs) < 3:
            rows.append({**row, "flag": "insufficient-n"})
            continue
        auto, manual = (list(t) for t in zip(*pairs))
        try:
            sp = stats.spearman(auto, manual, "two-sided")
            icc = stats.icc_average_fixed_raters(np.column_stack([auto, manual]))
        except ValueError:
            rows.append({**row, "flag": "error:degenerate"})
            continue
        ba = stats.bland_altman(auto, manual)
        rows.append({
            **row, "rho": sp.rho, "p": sp.p, "icc": icc.icc, "ba_mean": ba.mean_difference,
            "ba_sd": ba.sd_difference, "ba_loa_low": ba.loa_low, "ba_loa_high": ba.loa_high, "flag": "",
        })  # fmt: skip
    return rows


def _group_table(cfg, vols) -> List[dict]:
    group_of = {s.id: s.group for s in cfg.subjects if s.group}
    order = list(dict.fromkeys(sorted(group_of.values())))
    rows = []
    lowered = {k.lower(): v for k, v in vols.items()}
    for struct in cfg.subcortical:
        table = lowered.get(struct.lower(), {})
        groups = {g: [] for g in order}
        for subj, g in sorted(group_of.items()):
            if subj in table:
                v = _num(table[subj].get("icv_adjusted"))
                if v is None:
                    v = _num(table[subj].get("volume_mm3"))
                if v is not None:
                    groups[g].append(v)
        for comp in stats.pairwise_group_tests(groups, cfg.q):
            rows.append({
                "structure": struct, "group_a": comp.group_a, "group_b": comp.group_b,
                "n_a": comp.n_a, "n_b": comp.n_b, "u": comp.u_statistic, "p": comp.p,
                "bh_rejected": comp.bh_rejected, "stars": comp.stars,
            })  # fmt: skip
    return rows


def cmd_correlate(cfg: StudyConfig, jobs: int = 1) -> int:
    cfg.require("thickness")
    cfg.check_optional_paths(
        "ratings", "globals", "region_mapping", "reference_thickness", "volumes", "subset"
    )
    if cfg.ratings is None and cfg.globals is None:
        raise ConfigError("correlate needs ratings and/or globals")
    mapping = (
        stats.read_region_mapping(cfg.region_mapping)
        if cfg.region_mapping is not None
        else stats.load_region_mapping()
    )
    ratings = stats.RatingsTable.read(cfg.ratings, cfg.globals)
    thick = _thickness_table(cfg.thickness)
    subjects = sorted({s for per in thick.values() for s in per})
    subset = cfg.read_subset()
    path_subjects = [s for s in subjects if s in set(subset)] if subset is not None else subjects

    outputs = {"correlations.csv": (CORRELATION_COLUMNS, _pathology_matrix(cfg, thick, ratings, mapping, path_subjects))}
    if cfg.volumes is not None:
        vols = _volume_table(cfg.volumes)
        vol_subjects = sorted(set(subjects) | {s for per in vols.values() for s in per})
        outputs["wmh_correlations.csv"] = (WMH_COLUMNS, _wmh_table(cfg, thick, vols, vol_subjects))
        if any(s.group for s in cfg.subjects):
            outputs["group_comparisons.csv"] = (GROUP_COLUMNS, _group_table(cfg, vols))
    if cfg.reference_thickness is not None:
        ref = _thickness_table(cfg.reference_thickness)
        outputs["agreement.csv"] = (AGREEMENT_COLUMNS, _agreement_table(cfg, thick, ref, subjects))
    for name, (cols, rows) in outputs.items():
        write_csv(cfg.out / name, cols, rows)
    return EXIT_OK


# --------------------------------------------------------------------------
# phantom


def cmd_phantom(args) -> int:
    spec = phantom.PhantomSpec(
        kind=args.kind, thickness=args.thickness, size=args.size, r_in=args.r_in,
        r_out=args.r_out, separation=args.separation, spacing=args.spacing,
        label=args.label, seed=args.seed,
    )  # fmt: skip
    try:
        label_map, truth = phantom.generate(spec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = args.name or spec.kind
    write_volume(label_map, out / f"{name}.nii.gz")
    (out / f"{name}.json").write_text(truth.to_json() + "\n")
    morphometry.write_landmarks(
        morphometry.LandmarkSet([(args.landmark_name, truth.landmark_mm)]),
        out / f"{name}_landmarks.csv",
    )
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point


def _coerce(cfg: StudyConfig, key: str, text: str):
    current = getattr(cfg, key)
    if isinstance(current, bool):
        return text.lower() in ("1", "true", "yes")
    if isinstance(current, float):
        return float(text)
    if isinstance(current, int):
        return int(text)
    if isinstance(current, list) or key in ("landmark_names", "eval_labels"):
        items = [t.strip() for t in text.split(",") if t.strip()]
        return [int(t) for t in items] if key == "eval_labels" else items
    if current is None or isinstance(current, Path):
        return Path(text) if key not in ("alternative",) else text
    return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cortimorph", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def study_command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="TOML study file")
        p.add_argument("--jobs", type=int, default=1, help="subjects processed concurrently")
        p.add_argument("--out", help="output directory")
        p.add_argument("--q", type=float, help="Benjamini-Hochberg FDR level")
        p.add_argument("--alternative", choices=stats.ALTERNATIVES)
        p.add_argument("--subset", help="file of subject ids for the pathology correlations")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config attribute, e.g. search_radius_mm=15")  # fmt: skip
        return p

    study_command("thickness", "landmark thickness per subject")
    study_command("volumes", "regional volumes, ICV adjustment and normalised WMH")
    ev = study_command("evaluate", "DSC / HD95 between candidate and reference segmentations")
    ev.add_argument("--candidate", help="directory of candidate label maps")
    ev.add_argument("--reference", help="directory of reference label maps")
    ev.add_argument("--labels", help="comma-separated label ids")
    study_command("correlate", "structure-pathology correlation tables")

    ph = sub.add_parser("phantom", help="write a synthetic phantom with ground truth")
    ph.add_argument("--kind", choices=phantom.KINDS, default="slab")
    ph.add_argument("--thickness", type=int, default=5)
    ph.add_argument("--size", type=int, default=12)
    ph.add_argument("--r-in", type=int, default=10)
    ph.add_argument("--r-out", type=int, default=14)
    ph.add_argument("--separation", type=int, default=14)
    ph.add_argument("--spacing", type=float, default=0.3)
    ph.add_argument("--label", type=int, default=1)
    ph.add_argument("--seed", type=int, default=0)
    ph.add_argument("--name")
    ph.add_argument("--landmark-name", default="phantom")
    ph.add_argument("--out", default=".")
    return parser


COMMANDS = {
    "thickness": cmd_thickness,
    "volumes": cmd_volumes,
    "evaluate": cmd_evaluate,
    "correlate": cmd_correlate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        format="%(levelname)s: %(message)s", level=logging.DEBUG if args.verbose else logging.INFO
    )
    try:
        if args.command == "phantom":
            return cmd_phantom(args)
        overrides = {"q": args.q, "alternative": args.alternative, "subset": args.subset, "out": args.out}
        if args.command == "evaluate":
            overrides.update(candidate_dir=args.candidate, reference_dir=args.reference)
            if args.labels:
                overrides["eval_labels"] = [int(t) for t in args.labels.split(",")]
        cfg = load_config(args.config, **overrides)
        for item in args.set:
            key, sep, value = item.partition("=")
            if not sep or not hasattr(cfg, key.strip()):
                raise ConfigError(f"bad --set {item!r}")
            setattr(cfg, key.strip(), _coerce(cfg, key.strip(), value.strip()))
        cfg.validate()
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        return COMMANDS[args.command](cfg, args.jobs)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    except (NiftiError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
