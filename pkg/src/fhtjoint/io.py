"""Delimited-file formats for panels, outcomes, truths and draws.

Panel file columns: ``subject_id, time, x1..xQ, lod1..lodQ`` where
``lod{q}`` is 1 when ``x{q}`` is below its detection limit (the stored
value is then the limit itself).  Survival file columns:
``subject_id, time, event, z1..zK``.
"""
from __future__ import annotations

import csv
import json
import os

import numpy as np

from .data import Dataset, LongitudinalPanel, SurvivalData
from .sampler import ChainResult, PosteriorDraws, read_draws_csv


class DataError(ValueError):
    """Malformed or missing input data; the message names file and line."""


class MissingArtifactError(DataError):
    """A file expected in a run directory is absent."""


def _fmt(x) -> str:
    return repr(float(x))


def _open_rows(path):
    if not os.path.exists(path):
        raise MissingArtifactError(f"{path}: file not found")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}:1: empty file")
    return [c.strip() for c in rows[0]], rows[1:]


def _number(path, line, column, text):
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"{path}:{line}: column {column!r} is not numeric: {text!r}") from None
    if np.isnan(value):
        raise DataError(f"{path}:{line}: column {column!r} is NaN")
    return value


def _flag(path, line, column, text):
    if text.strip() not in ("0", "1"):
        raise DataError(f"{path}:{line}: column {column!r} must be 0 or 1, got {text!r}")
    return text.strip() == "1"


# ----------------------------------------------------------------------
# panel

def write_panel_csv(path, panel: LongitudinalPanel, ids=None) -> None:
    ids = list(range(1, panel.N + 1)) if ids is None else list(ids)
    Q = panel.Q
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "time"] + [f"x{q + 1}" for q in range(Q)]
                   + [f"lod{q + 1}" for q in range(Q)])
        for j in range(panel.n_obs):
            w.writerow([ids[panel.subject[j]], _fmt(panel.time[j])]
                       + [_fmt(v) for v in panel.values[j]]
                       + [int(f) for f in panel.censored[j]])


def read_panel_csv(path, lod=None):
    """Parse a panel file.

    Parameters
    ----------
    path : path-like
    lod : sequence of float, optional
        Detection limits.  When omitted they are read off the flagged rows
        (biomarkers without flagged rows get ``-inf``).

    Returns
    -------
    panel : LongitudinalPanel
    ids : list of str
        Subject identifiers in panel order (first appearance).
    """
    header, rows = _open_rows(path)
    if len(header) < 4 or header[:2] != ["subject_id", "time"] or (len(header) - 2) % 2:
        raise DataError(f"{path}:1: expected header subject_id,time,x1..xQ,lod1..lodQ")
    Q = (len(header) - 2) // 2
    expected = [f"x{q + 1}" for q in range(Q)] + [f"lod{q + 1}" for q in range(Q)]
    if header[2:] != expected:
        raise DataError(f"{path}:1: expected columns {expected}, got {header[2:]}")
    order, records = {}, {}
    seen_lod = [None] * Q
    for lineno, row in enumerate(rows, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        sid = row[0].strip()
        t = _number(path, lineno, "time", row[1])
        if not np.isfinite(t):
            raise DataError(f"{path}:{lineno}: time must be finite")
        x = [_number(path, lineno, f"x{q + 1}", row[2 + q]) for q in range(Q)]
        flags = [_flag(path, lineno, f"lod{q + 1}", row[2 + Q + q]) for q in range(Q)]
        for q in range(Q):
            if flags[q]:
                if seen_lod[q] is None:
                    seen_lod[q] = x[q]
                elif x[q] != seen_lod[q]:
                    raise DataError(f"{path}:{lineno}: censored x{q + 1}={x[q]} differs from the "
                                    f"detection limit {seen_lod[q]} stored earlier")
            elif not np.isfinite(x[q]):
                raise DataError(f"{path}:{lineno}: observed x{q + 1} must be finite")
        order.setdefault(sid, len(order))
        records.setdefault(sid, []).append((t, x, flags, lineno))
    if not records:
        raise DataError(f"{path}:2: no data rows")
    if lod is None:
        lod = [-np.inf if v is None else v for v in seen_lod]
    lod = np.asarray(lod, dtype=float)
    if lod.shape != (Q,):
        raise DataError(f"{path}: {Q} biomarkers but {lod.shape[0]} detection limits configured")
    for q in range(Q):
        if seen_lod[q] is not None and seen_lod[q] != lod[q]:
            raise DataError(f"{path}: censored x{q + 1} stored as {seen_lod[q]} but the configured "
                            f"detection limit is {lod[q]}")
    ids = sorted(order, key=order.get)
    subject, time, values, censored = [], [], [], []
    for k, sid in enumerate(ids):
        recs = sorted(records[sid], key=lambda r: r[0])
        for a, b in zip(recs, recs[1:]):
            if a[0] == b[0]:
                raise DataError(f"{path}:{b[3]}: duplicate visit time {b[0]} for subject {sid}")
        for t, x, f, _ in recs:
            subject.append(k)
            time.append(t)
            values.append(x)
            censored.append(f)
    try:
        panel = LongitudinalPanel(np.array(subject), np.array(time), np.array(values),
                                  np.array(censored), lod)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    return panel, ids


# ----------------------------------------------------------------------
# survival

def write_survival_csv(path, survival: SurvivalData, ids=None) -> None:
    ids = list(range(1, survival.N + 1)) if ids is None else list(ids)
    K = survival.n_covariates
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "time", "event"] + [f"z{k + 1}" for k in range(K)])
        for i in range(survival.N):
            w.writerow([ids[i], _fmt(survival.time[i]), int(survival.event[i])]
                       + [_fmt(v) for v in survival.covariates[i]])


def read_survival_csv(path):
    """Parse a survival file; returns ``(SurvivalData, ids)`` in file order."""
    header, rows = _open_rows(path)
    if header[:3] != ["subject_id", "time", "event"]:
        raise DataError(f"{path}:1: expected header subject_id,time,event,z1..zK")
    K = len(header) - 3
    if header[3:] != [f"z{k + 1}" for k in range(K)]:
        raise DataError(f"{path}:1: covariate columns must be named z1..z{K}")
    ids, time, event, cov = [], [], [], []
    seen = set()
    for lineno, row in enumerate(rows, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        sid = row[0].strip()
        if sid in seen:
            raise DataError(f"{path}:{lineno}: duplicate subject_id {sid}")
        seen.add(sid)
        t = _number(path, lineno, "time", row[1])
        if not (np.isfinite(t) and t > 0):
            raise DataError(f"{path}:{lineno}: time must be finite and > 0")
        ids.append(sid)
        time.append(t)
        event.append(_flag(path, lineno, "event", row[2]))
        z = [_number(path, lineno, f"z{k + 1}", row[3 + k]) for k in range(K)]
        if not np.all(np.isfinite(z)):
            raise DataError(f"{path}:{lineno}: covariates must be finite")
        cov.append(z)
    if not ids:
        raise DataError(f"{path}:2: no data rows")
    data = SurvivalData(np.array(time), np.array(event, dtype=int),
                        np.array(cov, dtype=float).reshape(len(ids), K))
    return data, ids


def read_dataset(panel_path, survival_path, lod=None):
    """Read both files and align the outcomes to the panel's subject order."""
    panel, ids = read_panel_csv(panel_path, lod)
    survival, sids = read_survival_csv(survival_path)
    pos = {s: k for k, s in enumerate(sids)}
    missing = [s for s in ids if s not in pos]
    if missing:
        raise DataError(f"{survival_path}: no outcome for subject {missing[0]} of {panel_path}")
    extra = set(sids) - set(ids)
    if extra:
        raise DataError(f"{panel_path}: no biomarker rows for subject {sorted(extra)[0]} "
                        f"of {survival_path}")
    survival = survival.take([pos[s] for s in ids])
    return Dataset(panel, survival), ids


def write_dataset(out_dir, data: Dataset, ids=None, prefix=""):
    """Write ``panel.csv`` and ``survival.csv``; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    panel_path = os.path.join(out_dir, f"{prefix}panel.csv")
    surv_path = os.path.join(out_dir, f"{prefix}survival.csv")
    write_panel_csv(panel_path, data.panel, ids)
    write_survival_csv(surv_path, data.survival, ids)
    return panel_path, surv_path


# ----------------------------------------------------------------------
# truths, json, draws

def to_jsonable(obj):
    """Recursively convert numpy containers to JSON-compatible values."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if np.isnan(v):
            return None
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(to_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    if not os.path.exists(path):
        raise MissingArtifactError(f"{path}: file not found")
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None


def load_chains(paths, layout=None) -> PosteriorDraws:
    """Rebuild posterior draws from per-chain CSV files."""
    if not paths:
        raise MissingArtifactError("no draw files found")
    chains = []
    for path in paths:
        if not os.path.exists(path):
            raise MissingArtifactError(f"{path}: file not found")
        names, draws = read_draws_csv(path)
        n = draws.shape[0]
        chains.append(ChainResult(draws=draws, param_names=names, accept_stat=np.full(n, np.nan),
                                  treedepth=np.zeros(n, dtype=np.int64),
                                  n_leapfrog=np.zeros(n, dtype=np.int64),
                                  divergent=np.zeros(n, dtype=bool), step_size=np.nan,
                                  inv_metric=np.zeros(0)))
    if any(c.param_names != chains[0].param_names for c in chains):
        raise DataError("draw files disagree on parameter names")
    return PosteriorDraws(chains, layout=layout)


def write_table(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
