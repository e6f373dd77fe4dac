"""CICFlowMeter flow-record cleaning, resampling, feature selection and scaling.

Every stage is a pure ``Dataset -> Dataset`` transform. Column names are
matched after trimming, collapsing whitespace, treating ``_`` as a space and
ignoring case, so ``" Init_Win_bytes_forward"`` matches ``Init Win bytes forward``.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from fasa.trees import split_gain_importance

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1

# single-valued across the SYN day files
CONSTANT_COLUMNS = (
    "Bwd PSH Flags",
    "Fwd URG Flags",
    "Bwd URG Flags",
    "FIN Flag Count",
    "Fwd Avg Bytes/Bulk",
    "Fwd Avg Packets/Bulk",
    "Fwd Avg Bulk Rate",
    "Bwd Avg Bytes/Bulk",
    "PSH Flag Count",
    "ECE Flag Count",
    "Bwd Avg Packets/Bulk",
    "Bwd Avg Bulk Rate",
)

# identifiers that change from one network to another
CATEGORICAL_COLUMNS = (
    "Source Port",
    "Destination Port",
    "Source IP",
    "Destination IP",
    "Flow ID",
    "SimillarHTTP",
    "Unnamed: 0",
    "Timestamp",
)

INIT_WIN_COLUMNS = ("Init Win bytes forward", "Init Win bytes backward")

SELECTED_FEATURES = (
    "Total Length of Fwd Packets",
    "Fwd Packet Length Mean",
    "ACK Flag Count",
    "URG Flag Count",
    "Init Win bytes forward",
    "min seg size forward",
    "Inbound",
)

LABEL_CODES = {"benign": 0, "syn": 1}


class PreprocessError(ValueError):
    pass


def canon(name: str) -> str:
    return " ".join(str(name).replace("_", " ").split()).lower()


@dataclass
class Dataset:
    """Numeric feature matrix plus labels.

    ``labels`` holds raw strings until :func:`encode_labels` and 0/1 ints
    after. Non-numeric identifier columns live in ``text`` until dropped.
    """

    columns: list[str]
    X: np.ndarray
    labels: np.ndarray
    text: dict[str, np.ndarray] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(len(self.labels), len(self.columns))

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    def index(self, name: str) -> Optional[int]:
        key = canon(name)
        for i, col in enumerate(self.columns):
            if canon(col) == key:
                return i
        return None

    def column(self, name: str) -> np.ndarray:
        i = self.index(name)
        if i is None:
            raise PreprocessError(f"no column {name!r}")
        return self.X[:, i]

    def take_rows(self, mask_or_idx, note: Optional[str] = None) -> "Dataset":
        text = {k: v[mask_or_idx] for k, v in self.text.items()}
        notes = self.notes + ([note] if note else [])
        return Dataset(list(self.columns), self.X[mask_or_idx], self.labels[mask_or_idx], text, notes)

    def keep_columns(self, idx: Sequence[int], note: Optional[str] = None, text=None) -> "Dataset":
        idx = list(idx)
        notes = self.notes + ([note] if note else [])
        return Dataset(
            [self.columns[i] for i in idx],
            self.X[:, idx],
            self.labels,
            dict(self.text if text is None else text),
            notes,
        )

    def numeric_labels(self) -> np.ndarray:
        if self.labels.dtype.kind not in "iub":
            raise PreprocessError("labels are not encoded; run encode_labels first")
        return self.labels.astype(np.int64)


# --------------------------------------------------------------------------
# Loading / writing
# --------------------------------------------------------------------------


def load_csv(path, label_column: str = "Label") -> Dataset:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=False)
    except pd.errors.EmptyDataError:
        raise PreprocessError(f"{path}: no header row") from None
    except pd.errors.ParserError as exc:
        raise PreprocessError(f"{path}: malformed CSV: {exc}") from None
    names = [str(c).strip() for c in frame.columns]
    frame.columns = names
    label_key = canon(label_column)
    label_names = [c for c in names if canon(c) == label_key]
    if not label_names:
        raise PreprocessError(f"{path}: missing label column {label_column!r}")
    label_name = label_names[0]
    labels = frame[label_name].str.strip().to_numpy(dtype=object)

    categorical = {canon(c) for c in CATEGORICAL_COLUMNS}
    columns, arrays, text = [], [], {}
    for name in names:
        if name == label_name:
            continue
        raw = frame[name]
        if canon(name) in categorical:
            text[name] = raw.to_numpy(dtype=object)
            continue
        stripped = raw.str.strip().replace("", "nan")
        try:
            # astype parses with round-trip precision; to_numeric does not
            values = stripped.astype(float).to_numpy()
            bad = np.zeros(len(values), dtype=bool)
        except ValueError:
            values = pd.to_numeric(stripped, errors="coerce").to_numpy(dtype=float)
            bad = np.isnan(values) & ~stripped.str.lower().isin(["nan"]).to_numpy()
        if len(values) and bad[0]:
            text[name] = raw.to_numpy(dtype=object)
            continue
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise PreprocessError(
                f"{path}: unparseable value {raw.iloc[row]!r} in column {name!r} at data row {row + 1}"
            )
        columns.append(name)
        arrays.append(values)

    if len(frame) == 0:
        warnings.warn(f"{path}: header only, dataset is empty", stacklevel=2)
    X = np.column_stack(arrays) if arrays else np.empty((len(frame), 0))
    return Dataset(columns, X, labels, text, [f"loaded {len(frame)} rows from {path}"])


def write_csv(ds: Dataset, path, label_column: str = "Label") -> None:
    frame = pd.DataFrame(ds.X, columns=ds.columns)
    frame[label_column] = ds.labels
    frame.to_csv(path, index=False, float_format="%.17g")


# --------------------------------------------------------------------------
# Cleaning stages
# --------------------------------------------------------------------------


def _named_indices(ds: Dataset, names: Sequence[str]) -> set[int]:
    keys = {canon(n) for n in names}
    return {i for i, c in enumerate(ds.columns) if canon(c) in keys}


def drop_constant_columns(ds: Dataset, keep: Sequence[str] = ()) -> Dataset:
    """Drop the known single-valued columns plus any column constant in ``ds``.

    Columns named in ``keep`` are never dropped by the data-driven check.
    """
    drop = _named_indices(ds, CONSTANT_COLUMNS)
    if ds.n_rows:
        first = ds.X[0]
        same = (ds.X == first) | (np.isnan(ds.X) & np.isnan(first))
        drop |= set(np.flatnonzero(same.all(axis=0)).tolist()) - _named_indices(ds, keep)
    keep = [i for i in range(len(ds.columns)) if i not in drop]
    names = [ds.columns[i] for i in sorted(drop)]
    return ds.keep_columns(keep, f"dropped {len(names)} constant columns: {names}")


def fix_init_win(ds: Dataset) -> Dataset:
    X = ds.X.copy()
    changed = 0
    for i in _named_indices(ds, INIT_WIN_COLUMNS):
        neg = X[:, i] == -1
        changed += int(neg.sum())
        X[neg, i] = 0.0
    return Dataset(list(ds.columns), X, ds.labels, dict(ds.text), ds.notes + [f"set {changed} init-window -1 values to 0"])


def drop_nonfinite_rows(ds: Dataset) -> Dataset:
    ok = np.isfinite(ds.X).all(axis=1)
    removed = int((~ok).sum())
    out = ds.take_rows(ok, f"dropped {removed} rows with inf/NaN")
    if ds.n_rows and out.n_rows == 0:
        warnings.warn("every row had a non-finite value; dataset is empty", stacklevel=2)
    return out


def drop_categorical(ds: Dataset) -> Dataset:
    keys = {canon(c) for c in CATEGORICAL_COLUMNS}
    drop = _named_indices(ds, CATEGORICAL_COLUMNS)
    keep = [i for i in range(len(ds.columns)) if i not in drop]
    text = {k: v for k, v in ds.text.items() if canon(k) not in keys}
    removed = [ds.columns[i] for i in sorted(drop)] + [k for k in ds.text if canon(k) in keys]
    return ds.keep_columns(keep, f"dropped categorical columns: {removed}", text=text)


def correlation_matrix(X: np.ndarray) -> np.ndarray:
    """Pearson correlation with zero-variance columns treated as uncorrelated."""
    Z = X - X.mean(axis=0)
    norm = np.sqrt((Z**2).sum(axis=0))
    ok = norm > 0
    Z[:, ok] /= norm[ok]
    Z[:, ~ok] = 0.0
    R = Z.T @ Z
    np.fill_diagonal(R, 1.0)
    return R


def prune_correlated(ds: Dataset, threshold: float = 0.8, keep: Sequence[str] = ()) -> Dataset:
    """Drop columns whose |r| with an already kept column exceeds ``threshold``.

    Columns named in ``keep`` are visited first so they always survive; the
    rest are visited left to right.
    """
    if not 0 < threshold <= 1:
        raise PreprocessError("correlation threshold must lie in (0, 1]")
    if ds.n_rows < 2:
        raise PreprocessError("correlation pruning needs at least 2 rows")
    R = np.abs(correlation_matrix(ds.X))
    protected = sorted(_named_indices(ds, keep))
    order = protected + [i for i in range(len(ds.columns)) if i not in protected]
    kept: list[int] = []
    for i in order:
        if i in protected or not kept or R[i, kept].max() <= threshold:
            kept.append(i)
    kept.sort()
    dropped = [c for i, c in enumerate(ds.columns) if i not in kept]
    return ds.keep_columns(kept, f"dropped {len(dropped)} correlated columns (|r| > {threshold}): {dropped}")


def encode_labels(ds: Dataset) -> Dataset:
    if ds.labels.dtype.kind in "iub":
        if not np.isin(ds.labels, (0, 1)).all():
            raise PreprocessError("numeric labels must be 0/1")
        return ds
    codes = np.empty(ds.n_rows, dtype=np.int64)
    for i, raw in enumerate(ds.labels):
        key = str(raw).strip().lower()
        if key in ("0", "1"):
            codes[i] = int(key)
        elif key in LABEL_CODES:
            codes[i] = LABEL_CODES[key]
        else:
            raise PreprocessError(f"unknown label {raw!r} at data row {i + 1}")
    return Dataset(list(ds.columns), ds.X, codes, dict(ds.text), ds.notes + ["encoded labels BENIGN->0 Syn->1"])


def resample(ds: Dataset, benign_fraction: float = 0.2, seed: int = 0) -> Dataset:
    """Keep every benign row; draw SYN rows uniformly so benign makes up ``benign_fraction``."""
    if not 0 < benign_fraction < 1:
        raise PreprocessError("benign fraction must lie in (0, 1)")
    y = ds.numeric_labels()
    benign = np.flatnonzero(y == 0)
    syn = np.flatnonzero(y == 1)
    if benign.size == 0 or syn.size == 0:
        raise PreprocessError("resampling needs both classes present")
    want = int(round(benign.size * (1 - benign_fraction) / benign_fraction))
    if want > syn.size:
        raise PreprocessError(
            f"benign fraction {benign_fraction} unreachable: need {want} SYN rows, have {syn.size}"
        )
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(syn, size=want, replace=False))
    idx = np.sort(np.concatenate([benign, chosen]))
    return ds.take_rows(idx, f"resampled to {benign.size} benign + {want} SYN")


def rank_features(ds: Dataset, *, n_trees: int = 10, max_depth: int = 3, seed: int = 0) -> list[tuple[str, float]]:
    """Feature names with split-gain importance, most important first."""
    y = ds.numeric_labels()
    if np.unique(y).size < 2:
        raise PreprocessError("feature ranking needs both classes present")
    scores = split_gain_importance(ds.X, y, n_trees=n_trees, max_depth=max_depth, seed=seed)
    order = sorted(range(len(ds.columns)), key=lambda i: (-scores[i], i))
    return [(ds.columns[i], float(scores[i])) for i in order]


def select_features(ds: Dataset, names: Sequence[str] = SELECTED_FEATURES) -> Dataset:
    names = list(names)
    if not names:
        raise PreprocessError("feature list is empty")
    keys = [canon(n) for n in names]
    dupes = sorted({n for n, k in zip(names, keys) if keys.count(k) > 1})
    if dupes:
        raise PreprocessError(f"duplicate feature names: {dupes}")
    idx = [ds.index(n) for n in names]
    missing = [n for n, i in zip(names, idx) if i is None]
    if missing:
        raise PreprocessError(f"missing feature columns: {missing}")
    return ds.keep_columns(idx, f"selected {len(idx)} features", text={})


# --------------------------------------------------------------------------
# Scaling and splitting
# --------------------------------------------------------------------------


@dataclass
class Scaler:
    """Min-max scaling; out-of-range values are not clamped."""

    names: list[str]
    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        self.mins = np.asarray(self.mins, dtype=float)
        self.maxs = np.asarray(self.maxs, dtype=float)
        if np.any(self.maxs < self.mins):
            raise PreprocessError("scaler max must be >= min")

    @property
    def span(self) -> np.ndarray:
        return self.maxs - self.mins

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        span = self.span
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (X - self.mins) / safe, 0.0)

    def inverse_transform(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.span + self.mins

    def to_dict(self) -> dict:
        return {"names": list(self.names), "min": self.mins.tolist(), "max": self.maxs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(list(d["names"]), d["min"], d["max"])


def fit_scaler(ds: Dataset) -> Scaler:
    if ds.n_rows == 0:
        raise PreprocessError("cannot fit a scaler on an empty dataset")
    return Scaler(list(ds.columns), ds.X.min(axis=0), ds.X.max(axis=0))


def apply_scaler(ds: Dataset, scaler: Scaler) -> Dataset:
    idx = [ds.index(n) for n in scaler.names]
    missing = [n for n, i in zip(scaler.names, idx) if i is None]
    if missing:
        raise PreprocessError(f"dataset lacks scaler columns: {missing}")
    X = scaler.transform(ds.X[:, idx])
    return Dataset(list(scaler.names), X, ds.labels, dict(ds.text), ds.notes + ["min-max scaled"])


def stratified_kfold(labels, k: int, seed: int = 0) -> np.ndarray:
    """Fold id per sample; each class is dealt round-robin after a seeded shuffle.

    The dealing continues across classes, so fold sizes also differ by at most one.
    """
    y = np.asarray(labels).ravel()
    if k < 2:
        raise PreprocessError("k must be >= 2")
    classes, counts = np.unique(y, return_counts=True)
    if counts.min() < k:
        raise PreprocessError(f"k={k} exceeds minority class count {counts.min()}")
    rng = np.random.default_rng(seed)
    folds = np.empty(y.size, dtype=np.int64)
    offset = 0
    for cls in classes:
        idx = rng.permutation(np.flatnonzero(y == cls))
        folds[idx] = (offset + np.arange(idx.size)) % k
        offset += idx.size
    return folds


def stratified_split(labels, test_fraction: float = 0.2, seed: int = 0) -> np.ndarray:
    """Boolean test mask holding ``test_fraction`` of each class (rounded)."""
    if not 0 < test_fraction < 1:
        raise PreprocessError("test fraction must lie in (0, 1)")
    y = np.asarray(labels).ravel()
    rng = np.random.default_rng(seed)
    test = np.zeros(y.size, dtype=bool)
    for cls in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == cls))
        test[idx[: int(round(test_fraction * idx.size))]] = True
    return test


# --------------------------------------------------------------------------
# Full pipeline
# --------------------------------------------------------------------------


@dataclass
class PreprocessConfig:
    drop_constant: tuple[str, ...] = CONSTANT_COLUMNS
    drop_categorical: tuple[str, ...] = CATEGORICAL_COLUMNS
    correlation_threshold: float = 0.8
    benign_fraction: float = 0.2
    resample: bool = True
    selected_features: tuple[str, ...] = SELECTED_FEATURES
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.correlation_threshold <= 1:
            raise PreprocessError("correlation threshold must lie in (0, 1]")
        if not 0 < self.benign_fraction < 1:
            raise PreprocessError("benign fraction must lie in (0, 1)")


@dataclass
class PipelineResult:
    dataset: Dataset
    scaler: Scaler
    stages: list[dict]
    ranking: list[tuple[str, float]]

    def manifest(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "features": list(self.dataset.columns),
            "scaler": self.scaler.to_dict(),
            "label_codes": {"BENIGN": 0, "Syn": 1},
            "stages": self.stages,
            "ranking": [[n, s] for n, s in self.ranking],
        }


def run_pipeline(ds: Dataset, config: Optional[PreprocessConfig] = None) -> PipelineResult:
    """Clean, resample, prune, select and fit a scaler. Returned dataset is unscaled."""
    cfg = config or PreprocessConfig()
    stages: list[dict] = []

    def stage(name, fn, current):
        try:
            out = fn(current)
        except PreprocessError as exc:
            raise PreprocessError(f"{name}: {exc}") from None
        row = {
            "stage": name,
            "rows_before": current.n_rows,
            "rows_after": out.n_rows,
            "cols_before": len(current.columns) + len(current.text),
            "cols_after": len(out.columns) + len(out.text),
        }
        stages.append(row)
        log.info("%s: rows %d -> %d, columns %d -> %d", name, row["rows_before"], row["rows_after"], row["cols_before"], row["cols_after"])
        return out

    def _drop_constant(d):
        d = drop_constant_columns(d, keep=cfg.selected_features)
        extra = _named_indices(d, cfg.drop_constant)
        return d.keep_columns([i for i in range(len(d.columns)) if i not in extra])

    def _drop_categorical(d):
        d = drop_categorical(d)
        keys = {canon(c) for c in cfg.drop_categorical}
        extra = _named_indices(d, cfg.drop_categorical)
        text = {k: v for k, v in d.text.items() if canon(k) not in keys}
        return d.keep_columns([i for i in range(len(d.columns)) if i not in extra], text=text)

    ds = stage("encode_labels", encode_labels, ds)
    # non-finite rows go before resampling so the output keeps the exact benign fraction
    ds = stage("drop_nonfinite_rows", drop_nonfinite_rows, ds)
    if cfg.resample:
        ds = stage("resample", lambda d: resample(d, cfg.benign_fraction, cfg.seed), ds)
    ds = stage("drop_constant_columns", _drop_constant, ds)
    ds = stage("fix_init_win", fix_init_win, ds)
    ds = stage("drop_categorical", _drop_categorical, ds)
    ds = stage("prune_correlated", lambda d: prune_correlated(d, cfg.correlation_threshold, keep=cfg.selected_features), ds)
    try:
        ranking = rank_features(ds, seed=cfg.seed)
    except PreprocessError as exc:
        raise PreprocessError(f"rank_features: {exc}") from None
    ds = stage("select_features", lambda d: select_features(d, cfg.selected_features), ds)
    scaler = fit_scaler(ds)
    return PipelineResult(ds, scaler, stages, ranking)


def write_manifest(result: PipelineResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result.manifest(), fh, indent=2)
        fh.write("\n")


def read_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != MANIFEST_VERSION:
        raise PreprocessError(f"unsupported manifest version {doc.get('version')!r}")
    return doc
