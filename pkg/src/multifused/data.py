"""Long-format CSV ingestion and the encode -> impute -> standardize pipeline.

The CSV layout is ``id,time,y,<predictor...>`` with ``NA`` as the missing
token.  A JSON sidecar may declare the class ordering and, per predictor,
``kind`` (``numeric``/``categorical``), ``levels`` and ``time_invariant``.

Every fitted transform is captured in a :class:`PreprocessReport` so it can
be replayed on held-out individuals (cross-validation folds) or on new data.
"""
import contextlib
import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .exceptions import EncodingError, ImputationError, IngestError
from .model import MISSING, PanelData

__all__ = [
    "MISSING_TOKEN",
    "PredictorSpec",
    "RawPanel",
    "PreprocessReport",
    "read_schema",
    "ingest_csv",
    "encode_categorical",
    "impute",
    "standardize",
    "preprocess",
    "apply_report",
    "lower_median",
    "write_panel_csv",
]

MISSING_TOKEN = "NA"
REPORT_VERSION = 1


@dataclass(frozen=True)
class PredictorSpec:
    kind: str = "numeric"          # "numeric" or "categorical"
    levels: tuple = ()
    time_invariant: bool = False


@dataclass(frozen=True, eq=False)
class RawPanel:
    """Un-transformed panel.

    ``outcome`` is an (n, T) integer array of class codes 1..K (0 missing).
    ``values[name]`` is an (n, T) array: float with NaN for numeric
    predictors, object with ``None`` for categorical ones.
    """

    ids: tuple
    times: tuple
    classes: tuple
    outcome: np.ndarray
    predictors: tuple
    schema: dict
    values: dict
    encoding: dict = field(default_factory=dict)
    imputation: dict = None

    @property
    def n(self):
        return len(self.ids)

    @property
    def T(self):
        return len(self.times)

    @property
    def p(self):
        return len(self.predictors)

    @property
    def K(self):
        return len(self.classes)

    @property
    def observed(self):
        return self.outcome != MISSING

    def subset(self, individuals):
        idx = np.asarray(individuals, dtype=np.int64)
        return replace(self,
                       ids=tuple(self.ids[i] for i in idx),
                       outcome=self.outcome[idx],
                       values={k: v[idx] for k, v in self.values.items()})


def lower_median(values):
    """Median of a 1-D sample; for an even count the lower middle value."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        return math.nan
    return float(v[(v.size - 1) // 2])


# -- ingestion ---------------------------------------------------------------

def read_schema(source):
    """Parse a JSON sidecar into ``(classes or None, {name: PredictorSpec})``."""
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    raw = json.loads(text)
    specs = {}
    for name, entry in raw.get("predictors", {}).items():
        kind = entry.get("kind", "categorical" if entry.get("levels") else "numeric")
        if kind not in ("numeric", "categorical"):
            raise IngestError(f"predictor {name!r}: unknown kind {kind!r}")
        specs[name] = PredictorSpec(kind=kind,
                                    levels=tuple(str(x) for x in entry.get("levels", ())),
                                    time_invariant=bool(entry.get("time_invariant", False)))
    classes = raw.get("classes")
    return (tuple(str(c) for c in classes) if classes is not None else None), specs


def _open_text(source):
    if isinstance(source, (str, Path)):
        return open(source, newline="", encoding="utf-8")
    # caller keeps ownership of file-like sources
    return contextlib.nullcontext(source)


def _is_float(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def ingest_csv(source, schema=None, classes=None, missing=MISSING_TOKEN):
    """Read a long-format panel CSV into a :class:`RawPanel`.

    ``schema`` maps predictor names to :class:`PredictorSpec`; predictors it
    does not cover are inferred (numeric when every present value parses as
    a float, categorical with sorted levels otherwise).  ``classes`` fixes the
    label ordering (last = reference class); without it labels are numbered
    by first appearance.
    """
    schema = dict(schema or {})
    with _open_text(source) as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError("empty input, header row required") from None
        if header[:3] != ["id", "time", "y"]:
            raise IngestError(f"header must start with id,time,y; got {header[:3]}")
        predictors = tuple(header[3:])
        if len(set(predictors)) != len(predictors):
            raise IngestError("duplicate predictor column names")

        records = {}
        seen_labels = []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise IngestError(
                    f"line {line}: expected {len(header)} fields, found {len(row)}")
            row = [c.strip() for c in row]
            ident, t_str, label = row[0], row[1], row[2]
            try:
                t = int(t_str)
            except ValueError:
                raise IngestError(f"line {line}: time {t_str!r} is not an integer") from None
            if (ident, t) in records:
                raise IngestError(f"duplicate record for id={ident!r}, time={t}")
            records[(ident, t)] = row[2:]
            if label != missing and label not in seen_labels:
                seen_labels.append(label)

    if not records:
        raise IngestError("no data rows")

    ids = tuple(dict.fromkeys(k[0] for k in records))
    t_min = min(k[1] for k in records)
    t_max = max(k[1] for k in records)
    times = tuple(range(t_min, t_max + 1))

    if classes is None:
        classes = tuple(seen_labels)
    else:
        classes = tuple(classes)
        unknown = [lab for lab in seen_labels if lab not in classes]
        if unknown:
            raise IngestError(f"unknown outcome label(s) {unknown}; declared {list(classes)}")
    if len(classes) < 2:
        raise IngestError(f"need at least two outcome classes, found {list(classes)}")
    code = {lab: k + 1 for k, lab in enumerate(classes)}

    n, T = len(ids), len(times)
    pos = {ident: i for i, ident in enumerate(ids)}
    outcome = np.zeros((n, T), dtype=np.int64)
    cells = np.full((n, T, len(predictors)), None, dtype=object)
    for (ident, t), fields in records.items():
        i, s = pos[ident], t - t_min
        if fields[0] != missing:
            outcome[i, s] = code[fields[0]]
        for j, v in enumerate(fields[1:]):
            cells[i, s, j] = None if v == missing else v

    values = {}
    for j, name in enumerate(predictors):
        col = cells[:, :, j]
        present = [v for v in col.ravel() if v is not None]
        spec = schema.get(name)
        if spec is None:
            if all(_is_float(v) for v in present):
                spec = PredictorSpec("numeric")
            else:
                spec = PredictorSpec("categorical", tuple(sorted(set(present))))
            schema[name] = spec
        if spec.kind == "numeric":
            arr = np.full((n, T), np.nan)
            for (i, s), v in np.ndenumerate(col):
                if v is not None:
                    try:
                        arr[i, s] = float(v)
                    except ValueError:
                        raise IngestError(
                            f"predictor {name!r}: non-numeric value {v!r} "
                            f"for id={ids[i]!r}, time={times[s]}") from None
            values[name] = arr
        else:
            values[name] = col.copy()

    return RawPanel(ids=ids, times=times, classes=classes, outcome=outcome,
                    predictors=predictors,
                    schema={k: schema[k] for k in predictors}, values=values)


# -- transforms --------------------------------------------------------------

def encode_categorical(raw):
    """Replace each m-level categorical predictor by m-1 indicator columns.

    The first declared level is the reference; indicator ``name.k`` flags
    level number k (k = 2..m).  A missing value leaves every indicator of
    that cell missing.
    """
    predictors, schema, values = [], {}, {}
    encoding = dict(raw.encoding)
    for name in raw.predictors:
        spec = raw.schema[name]
        if spec.kind != "categorical":
            predictors.append(name)
            schema[name] = spec
            values[name] = np.asarray(raw.values[name], dtype=float)
            continue
        levels = spec.levels
        if len(levels) < 2:
            raise EncodingError(f"categorical predictor {name!r} needs >= 2 declared levels")
        col = raw.values[name]
        bad = sorted({v for v in col.ravel() if v is not None and v not in levels})
        if bad:
            raise EncodingError(
                f"predictor {name!r}: value(s) {bad} outside declared levels {list(levels)}")
        missing = np.vectorize(lambda v: v is None, otypes=[bool])(col)
        mapping = {}
        for k, level in enumerate(levels[1:], start=2):
            col_name = f"{name}.{k}"
            ind = np.vectorize(lambda v, lv=level: v == lv, otypes=[float])(col)
            ind[missing] = np.nan
            predictors.append(col_name)
            schema[col_name] = PredictorSpec("numeric", time_invariant=spec.time_invariant)
            values[col_name] = ind
            mapping[col_name] = level
        encoding[name] = {"reference": levels[0], "columns": mapping}
    return replace(raw, predictors=tuple(predictors), schema=schema, values=values,
                   encoding=encoding)


def _fit_medians(raw):
    medians = {}
    for name in raw.predictors:
        arr = raw.values[name]
        present = ~np.isnan(arr)
        if not present.any():
            raise ImputationError(f"predictor {name!r} is missing for every individual and time")
        per_time = [lower_median(arr[present[:, s], s]) for s in range(raw.T)]
        medians[name] = {"per_time": per_time, "global": lower_median(arr[present])}
    return medians


def impute(raw, medians=None):
    """Fill every missing predictor value.

    Time-varying predictors take the individual's closest earlier
    measurement, else the cross-sectional median at that time, else the
    global median.  Time-invariant predictors take the individual's value
    at the nearest time (earlier wins ties), else the global median.

    ``medians`` replays medians fitted on another panel (a training fold);
    otherwise they are fitted on ``raw``.  The result carries the medians
    and per-rule counts in ``.imputation``.
    """
    if medians is None:
        medians = _fit_medians(raw)
    counts = {}
    values = {}
    for name in raw.predictors:
        arr = np.array(raw.values[name], dtype=float)
        missing = np.isnan(arr)
        med = medians[name]
        c = {"carry_forward": 0, "any_time": 0, "cross_sectional_median": 0,
             "global_median": 0}
        invariant = raw.schema[name].time_invariant
        for i, s in zip(*np.nonzero(missing)):
            row = raw.values[name][i]
            have = np.flatnonzero(~np.isnan(row))
            if invariant:
                if have.size:
                    dist = np.abs(have - s) * 2 + (have > s)
                    arr[i, s] = row[have[np.argmin(dist)]]
                    c["any_time"] += 1
                else:
                    arr[i, s] = med["global"]
                    c["global_median"] += 1
                continue
            past = have[have < s]
            if past.size:
                arr[i, s] = row[past[-1]]
                c["carry_forward"] += 1
            elif not math.isnan(med["per_time"][s]):
                arr[i, s] = med["per_time"][s]
                c["cross_sectional_median"] += 1
            else:
                arr[i, s] = med["global"]
                c["global_median"] += 1
        values[name] = arr
        counts[name] = c
    return replace(raw, values=values,
                   imputation={"medians": medians, "counts": counts})


@dataclass(frozen=True)
class PreprocessReport:
    """Constants needed to replay the pipeline on other data."""

    predictors: tuple           # final (post-encoding) predictor names
    means: tuple
    sds: tuple
    constant: tuple             # names set to zero because their sd vanished
    encoding: dict
    medians: dict
    imputation_counts: dict
    classes: tuple
    sd_convention: str = "population"
    version: int = REPORT_VERSION

    def to_json(self):
        d = {
            "version": self.version,
            "sd_convention": self.sd_convention,
            "classes": list(self.classes),
            "predictors": list(self.predictors),
            "means": [float(m).hex() for m in self.means],
            "sds": [float(s).hex() for s in self.sds],
            "constant": list(self.constant),
            "encoding": self.encoding,
            "medians": {k: {"per_time": [float(x).hex() for x in v["per_time"]],
                            "global": float(v["global"]).hex()}
                        for k, v in self.medians.items()},
            "imputation_counts": self.imputation_counts,
        }
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        if d.get("version") != REPORT_VERSION:
            raise IngestError(f"unsupported report version {d.get('version')}")
        return cls(
            predictors=tuple(d["predictors"]),
            means=tuple(float.fromhex(x) for x in d["means"]),
            sds=tuple(float.fromhex(x) for x in d["sds"]),
            constant=tuple(d["constant"]),
            encoding=d["encoding"],
            medians={k: {"per_time": [float.fromhex(x) for x in v["per_time"]],
                         "global": float.fromhex(v["global"])}
                     for k, v in d["medians"].items()},
            imputation_counts=d["imputation_counts"],
            classes=tuple(d["classes"]),
            sd_convention=d["sd_convention"],
            version=d["version"],
        )


def _to_panel(raw, means, sds):
    X = np.stack([raw.values[name] for name in raw.predictors], axis=1) \
        if raw.predictors else np.zeros((raw.n, 0, raw.T))
    mu = np.asarray(means)[None, :, None]
    sd = np.asarray(sds)[None, :, None]
    Z = np.where(sd > 0, (X - mu) / np.where(sd > 0, sd, 1.0), 0.0)
    return PanelData(raw.outcome, Z, raw.K, ids=raw.ids, predictor_names=raw.predictors,
                     class_labels=raw.classes, times=raw.times)


def standardize(raw):
    """Centre and scale each predictor with mean/sd pooled over observed cells.

    Returns ``(PanelData, PreprocessReport)``.  Predictors whose pooled sd is
    zero (to rounding) become all-zero columns and are listed in
    ``report.constant``.
    """
    obs = raw.observed
    means, sds, constant = [], [], []
    for name in raw.predictors:
        arr = raw.values[name]
        if np.isnan(arr[obs]).any():
            raise ImputationError(f"predictor {name!r} still has missing values; impute first")
        pooled = arr[obs]
        # fsum is exactly rounded, so the moments do not depend on row order
        mu = math.fsum(pooled) / pooled.size if pooled.size else 0.0
        sd = math.sqrt(math.fsum((pooled - mu) ** 2) / pooled.size) if pooled.size else 0.0
        if sd <= 1e-12 * max(1.0, abs(mu)):
            sd = 0.0
            constant.append(name)
        means.append(mu)
        sds.append(sd)
    imp = raw.imputation or {"medians": {}, "counts": {}}
    report = PreprocessReport(predictors=raw.predictors, means=tuple(means),
                              sds=tuple(sds), constant=tuple(constant),
                              encoding=raw.encoding, medians=imp["medians"],
                              imputation_counts=imp["counts"], classes=raw.classes)
    return _to_panel(raw, means, sds), report


def preprocess(raw):
    """Fit the full pipeline (encode, impute, standardize) on ``raw``."""
    return standardize(impute(encode_categorical(raw)))


def apply_report(raw, report):
    """Replay a fitted pipeline on ``raw`` (same or new individuals)."""
    enc = encode_categorical(raw)
    if enc.predictors != report.predictors:
        raise IngestError(
            f"predictors {list(enc.predictors)} do not match report {list(report.predictors)}")
    if tuple(raw.classes) != tuple(report.classes):
        raise IngestError("class labels differ from the fitted report")
    imp = impute(enc, medians=report.medians)
    return _to_panel(imp, report.means, report.sds)


def write_panel_csv(data, path, missing=MISSING_TOKEN):
    """Write a :class:`PanelData` in the long CSV layout (one row per cell)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "time", "y", *data.predictor_names])
        for i, ident in enumerate(data.ids):
            for s, t in enumerate(data.times):
                y = data.Y[i, s]
                label = missing if y == MISSING else data.class_labels[y - 1]
                xs = data.X[i, :, s]
                w.writerow([ident, t, label,
                            *(missing if np.isnan(v) else repr(float(v)) for v in xs)])
