"""Segment NDJSON reading and writing.

One JSON object per line and per 10-second segment::

    {"patient_id": "P0001", "index": 1, "fs": 125.0,
     "ppg": [...], "abp": [...]}            # or "sbp"/"dbp" instead of "abp"

When ``abp`` is present SBP/DBP come from :func:`segment_bp_summary`;
otherwise the stored ``sbp``/``dbp`` are used. MBP is always recomputed.
"""

import json
import logging
from collections import OrderedDict

import numpy as np

from .errors import InvalidSignal, SignalError
from .signal_core import SampledSignal, SegmentRecord, segment_bp_summary

log = logging.getLogger(__name__)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def dump_row(row):
    return json.dumps({k: _jsonable(v) for k, v in row.items() if k != "mbp"},
                      separators=(",", ":"))


def write_segments(rows, path):
    """Write segment rows (dicts) as NDJSON."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(dump_row(row))
            fh.write("\n")


def iter_rows(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if line:
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as exc:
                    raise InvalidSignal(f"{path}:{lineno}: {exc}") from None


def row_to_record(row):
    """Build a :class:`SegmentRecord`, deriving BP from ABP when present."""
    for key in ("patient_id", "index", "fs", "ppg"):
        if key not in row:
            raise InvalidSignal(f"segment row missing {key!r}")
    ppg = SampledSignal(row["ppg"], row["fs"]).validate()
    if row.get("abp") is not None:
        abp = SampledSignal(row["abp"], row["fs"]).validate()
        sbp, dbp, _ = segment_bp_summary(abp)
    elif "sbp" in row and "dbp" in row:
        sbp, dbp = float(row["sbp"]), float(row["dbp"])
    else:
        raise InvalidSignal("segment row needs either abp or sbp and dbp")
    return SegmentRecord(row["patient_id"], row["index"], ppg, sbp, dbp)


def records_from_rows(rows):
    """Convert rows, skipping unusable segments; returns (records, dropped)."""
    records, dropped = [], []
    for row in rows:
        try:
            records.append(row_to_record(row))
        except (SignalError, ValueError) as exc:
            dropped.append({"patient_id": row.get("patient_id"), "index": row.get("index"),
                            "reason": f"{type(exc).__name__}: {exc}"})
            log.debug("dropping segment %s/%s: %s", row.get("patient_id"), row.get("index"), exc)
    return records, dropped


def load_segments(path):
    """Read a segment NDJSON file; returns (records, dropped)."""
    return records_from_rows(iter_rows(path))


def record_row(rec):
    """Row for a record with scalar BP (no ABP waveform)."""
    return {"patient_id": rec.patient_id, "index": rec.index, "fs": rec.ppg.fs,
            "ppg": rec.ppg.samples, "sbp": rec.sbp, "dbp": rec.dbp}


def by_patient(records):
    """Group records per patient, each list ordered by segment index."""
    out = OrderedDict()
    for rec in sorted(records, key=lambda r: (r.patient_id, r.index)):
        out.setdefault(rec.patient_id, []).append(rec)
    return out
