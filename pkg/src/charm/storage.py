"""On-disk formats.

Results
    Comma-separated text, one header row::

        method,T,snr_db,bias_std,location,trial,seed,nmse_db,runtime_ms,kappa,regularized,support_size

    Floats are written with ``repr`` so a load reproduces the records
    exactly; a failed trial has ``nan`` NMSE and runtime. The fixed header
    doubles as the format version.

Scenarios
    One JSON document per location::

        {"schema": "charm-scenario/1", "location": 0, "seed": 123,
         "system": {...SystemConfig fields...},
         "ground_truth": {"gain_re": [...], "gain_im": [...], "aoa_sin": [...],
                          "aod_sin": [...], "delay_s": [...]},
         "radio_map": {...same keys...}}

    Angles are stored as sines so on-grid scenarios survive a round trip
    bit-exactly. A ``manifest.json`` next to the files lists them in order.
    A ray tracer can be hooked in by emitting this document.

Path supports
    ``{"schema": "charm-support/1", "refined": bool, "trust_clipped": bool,
    "peaks": [{"i", "j", "u_grid", "tau_grid", "power", "u_ref", "tau_ref",
    "u_hat", "tau_hat"}, ...]}``, strongest peak first.
"""

from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path
from typing import List, Sequence, Tuple

from .adps import PathSupport
from .channel import MultipathSet, SystemConfig
from .errors import ResultsParseError
from .harness import TrialRecord

RESULT_COLUMNS = ("method", "T", "snr_db", "bias_std", "location", "trial", "seed",
                  "nmse_db", "runtime_ms", "kappa", "regularized", "support_size")
SCENARIO_SCHEMA = "charm-scenario/1"
SUPPORT_SCHEMA = "charm-support/1"
MANIFEST_SCHEMA = "charm-manifest/1"


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_records(path, records: Sequence[TrialRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for r in records:
            writer.writerow([_fmt(getattr(r, c)) for c in RESULT_COLUMNS])


def _parse_bool(text: str) -> bool:
    if text in ("1", "true", "True"):
        return True
    if text in ("0", "false", "False"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_PARSERS = {
    "method": str, "T": int, "snr_db": float, "bias_std": float, "location": int,
    "trial": int, "seed": int, "nmse_db": float, "runtime_ms": float, "kappa": float,
    "regularized": _parse_bool, "support_size": int,
}


def read_records(path) -> List[TrialRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ResultsParseError("empty file, missing header", line=1) from None
        if tuple(header) != RESULT_COLUMNS:
            raise ResultsParseError(f"unexpected header {header}", line=1)
        records = []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(RESULT_COLUMNS):
                raise ResultsParseError(f"expected {len(RESULT_COLUMNS)} fields, got {len(row)}", line)
            try:
                values = {c: _PARSERS[c](v) for c, v in zip(RESULT_COLUMNS, row)}
            except ValueError as exc:
                raise ResultsParseError(str(exc), line) from None
            if not values["method"]:
                raise ResultsParseError("empty method name", line)
            records.append(TrialRecord(**values))
    return records


def scenario_document(cfg: SystemConfig, location: int, seed: int,
                      truth: MultipathSet, radio_map: MultipathSet) -> dict:
    return {
        "schema": SCENARIO_SCHEMA,
        "location": location,
        "seed": seed,
        "system": cfg.to_dict(),
        "ground_truth": truth.to_dict(),
        "radio_map": radio_map.to_dict(),
    }


def _check_schema(doc: dict, expected: str, path) -> None:
    if doc.get("schema") != expected:
        raise ResultsParseError(f"{path}: expected schema {expected!r}, got {doc.get('schema')!r}")


def write_scenario(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_scenario(path) -> Tuple[SystemConfig, MultipathSet, MultipathSet, dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ResultsParseError(f"{path}: {exc.msg}", line=exc.lineno) from None
    _check_schema(doc, SCENARIO_SCHEMA, path)
    try:
        cfg = SystemConfig.from_dict(doc["system"])
        truth = MultipathSet.from_dict(doc["ground_truth"])
        radio_map = MultipathSet.from_dict(doc["radio_map"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ResultsParseError(f"{path}: malformed scenario ({exc})") from None
    return cfg, truth, radio_map, doc


def write_scenario_set(out_dir, cfg: SystemConfig, locations, seeds, master_seed: int) -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for loc, ((truth, radio_map), seed) in enumerate(zip(locations, seeds)):
        p = out / f"location_{loc:03d}.json"
        write_scenario(p, scenario_document(cfg, loc, int(seed), truth, radio_map))
        files.append(p)
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "master_seed": master_seed,
        "system": cfg.to_dict(),
        "locations": [
            {"file": f.name, "location": loc, "seed": int(seed), "paths": len(truth)}
            for loc, (f, seed, (truth, _)) in enumerate(zip(files, seeds, locations))
        ],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return files


def read_scenario_set(scenario_dir) -> Tuple[SystemConfig, list]:
    base = Path(scenario_dir)
    try:
        manifest = json.loads((base / "manifest.json").read_text())
    except json.JSONDecodeError as exc:
        raise ResultsParseError(f"manifest.json: {exc.msg}", line=exc.lineno) from None
    _check_schema(manifest, MANIFEST_SCHEMA, base / "manifest.json")
    cfg = SystemConfig.from_dict(manifest["system"])
    locations = []
    for entry in manifest["locations"]:
        file_cfg, truth, radio_map, _ = read_scenario(base / entry["file"])
        if file_cfg != cfg:
            raise ResultsParseError(f"{entry['file']}: system config differs from manifest")
        locations.append((truth, radio_map))
    return cfg, locations


def write_support(path, support: PathSupport) -> None:
    doc = {"schema": SUPPORT_SCHEMA, **support.to_dict()}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_support(path) -> PathSupport:
    doc = json.loads(Path(path).read_text())
    _check_schema(doc, SUPPORT_SCHEMA, path)
    return PathSupport.from_dict(doc)
