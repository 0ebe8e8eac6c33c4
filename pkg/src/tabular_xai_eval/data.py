"""Raw table loading, column typing, preprocessing and stratified splitting."""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd
from sklearn.impute import SimpleImputer
from sklearn.pipeline import Pipeline
from sklearn.preprocessing import OneHotEncoder, StandardScaler

logger = logging.getLogger(__name__)

DEFAULT_MISSING_MARKERS = ("", "NA", "?")
STD_FLOOR = 1e-12


class DataError(Exception):
    """Exception raised for invalid tables, schemas or preprocessing input."""

    pass


class RowIndexError(DataError):
    """Requested row position is outside the table."""

    pass


class ColumnKind(str, Enum):
    """Kind of a raw column."""

    NUMERIC = "numeric"
    CATEGORICAL = "categorical"
    TARGET = "target"


@dataclass(frozen=True)
class RawTable:
    """Raw tabular data: string cells, ``NaN`` marks a missing cell."""

    frame: pd.DataFrame
    target_name: str

    def __post_init__(self):
        """Validate that the target column exists and is complete."""
        if self.target_name not in self.frame.columns:
            raise DataError(f"Target column '{self.target_name}' not found")
        if self.frame[self.target_name].isna().any():
            raise DataError(f"Target column '{self.target_name}' has missing values")

    @property
    def n_rows(self) -> int:
        return len(self.frame)

    @property
    def column_names(self) -> list[str]:
        return list(self.frame.columns)

    def take(self, indices: Sequence[int]) -> "RawTable":
        """Return the subset of rows at ``indices`` (positional)."""
        subset = self.frame.iloc[np.asarray(indices, dtype=int)].reset_index(drop=True)
        return RawTable(frame=subset, target_name=self.target_name)


@dataclass(frozen=True)
class ColumnSchema:
    """Kind of every column plus the observed vocabulary of categoricals."""

    kinds: dict[str, ColumnKind]
    vocabularies: dict[str, tuple[str, ...]]
    target_name: str

    @property
    def feature_columns(self) -> list[str]:
        return [name for name, kind in self.kinds.items() if kind != ColumnKind.TARGET]

    @property
    def classes(self) -> tuple[str, ...]:
        return self.vocabularies[self.target_name]

    @property
    def n_classes(self) -> int:
        return len(self.classes)


@dataclass(frozen=True)
class NumericStats:
    """Training statistics of one numeric column."""

    mean: float
    std: float
    median: float


@dataclass(frozen=True)
class CategoricalStats:
    """Training vocabulary and mode of one categorical column."""

    categories: tuple[str, ...]
    mode: str


@dataclass(frozen=True)
class PreprocessorState:
    """Fitted imputation, standardization and one-hot state."""

    columns: tuple[str, ...]
    numeric: dict[str, NumericStats]
    categorical: dict[str, CategoricalStats]

    @property
    def feature_names(self) -> list[str]:
        names = []
        for column in self.columns:
            if column in self.numeric:
                names.append(column)
            else:
                names.extend(f"{column}={cat}" for cat in self.categorical[column].categories)
        return names

    @property
    def source_column(self) -> list[str]:
        sources = []
        for column in self.columns:
            width = 1 if column in self.numeric else len(self.categorical[column].categories)
            sources.extend([column] * width)
        return sources

    def to_dict(self) -> dict[str, Any]:
        """Serialize to a JSON-compatible document."""
        return {
            "columns": list(self.columns),
            "numeric": {
                name: {"mean": s.mean, "std": s.std, "median": s.median}
                for name, s in self.numeric.items()
            },
            "categorical": {
                name: {"categories": list(s.categories), "mode": s.mode}
                for name, s in self.categorical.items()
            },
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PreprocessorState":
        """Rebuild state from :meth:`to_dict` output."""
        return cls(
            columns=tuple(data["columns"]),
            numeric={name: NumericStats(**s) for name, s in data["numeric"].items()},
            categorical={
                name: CategoricalStats(categories=tuple(s["categories"]), mode=s["mode"])
                for name, s in data["categorical"].items()
            },
        )

    def fingerprint(self) -> str:
        """SHA-256 of the canonical JSON form, used in model documents."""
        payload = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense preprocessed sample-by-feature matrix."""

    values: np.ndarray
    feature_names: tuple[str, ...]
    source_column: tuple[str, ...] = field(default=())

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def groups(self) -> tuple[tuple[int, ...], ...]:
        """Column index groups sharing a raw source column, in order."""
        grouped: dict[str, list[int]] = {}
        for index, source in enumerate(self.source_column):
            grouped.setdefault(source, []).append(index)
        return tuple(tuple(indices) for indices in grouped.values())


@dataclass(frozen=True)
class SplitIndices:
    """Disjoint train/test row positions."""

    train: np.ndarray
    test: np.ndarray
    seed: int


def load_csv(
    path: str | Path,
    target_name: str,
    missing_markers: Sequence[str] = DEFAULT_MISSING_MARKERS,
) -> RawTable:
    """Load a comma-delimited file with a header row as raw string cells.

    Args:
        path: CSV file path
        target_name: Name of the class label column
        missing_markers: Cell values recorded as missing (after stripping)

    Returns:
        RawTable whose missing cells are ``NaN``

    Raises:
        DataError: If the file is missing, empty, ragged, or the target is
            absent, incomplete, or has fewer than two classes
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"Dataset file not found: {path}")
    try:
        frame = pd.read_csv(
            path, dtype=str, keep_default_na=False, na_filter=False, encoding="utf-8"
        )
    except pd.errors.EmptyDataError:
        raise DataError(f"Dataset file is empty: {path}")
    except pd.errors.ParserError as e:
        raise DataError(f"Ragged rows in {path}: {e}")

    # With na_filter off, NaN can only come from rows with too few fields.
    if frame.isna().to_numpy().any():
        bad_row = int(np.flatnonzero(frame.isna().any(axis=1).to_numpy())[0]) + 2
        raise DataError(f"Ragged rows in {path}: line {bad_row} has too few fields")

    frame = frame.apply(lambda column: column.str.strip())
    frame = frame.mask(frame.isin(list(missing_markers)))
    table = RawTable(frame=frame, target_name=target_name)
    _check_table(table, path)
    return table


def _check_table(table: RawTable, source: object) -> None:
    """Enforce the row and class-count requirements of a loaded table."""
    if table.n_rows < 2:
        raise DataError(f"Dataset needs at least 2 rows, got {table.n_rows}: {source}")
    if table.frame[table.target_name].nunique() < 2:
        raise DataError(f"Target '{table.target_name}' needs at least 2 distinct values: {source}")


def _sorted_labels(values: Sequence[str]) -> tuple[str, ...]:
    """Sort labels numerically when they all parse, lexically otherwise."""
    unique = sorted(set(values))
    numeric = pd.to_numeric(pd.Series(unique, dtype=object), errors="coerce")
    if len(unique) and not numeric.isna().any():
        return tuple(label for _, label in sorted(zip(numeric.tolist(), unique)))
    return tuple(unique)


def _parses_as_finite(cells: pd.Series) -> bool:
    parsed = pd.to_numeric(cells, errors="coerce")
    return bool(parsed.notna().all() and np.isfinite(parsed.to_numpy(dtype=float)).all())


def infer_schema(table: RawTable) -> ColumnSchema:
    """Type each column as numeric or categorical.

    A column is numeric iff every non-missing cell parses as a finite real.

    Raises:
        DataError: If a column has no non-missing cells
    """
    kinds: dict[str, ColumnKind] = {}
    vocabularies: dict[str, tuple[str, ...]] = {}
    for name in table.column_names:
        cells = table.frame[name].dropna()
        if cells.empty:
            raise DataError(f"Column '{name}' has no non-missing cells")
        if name == table.target_name:
            kinds[name] = ColumnKind.TARGET
            vocabularies[name] = _sorted_labels(cells.tolist())
        elif _parses_as_finite(cells):
            kinds[name] = ColumnKind.NUMERIC
        else:
            kinds[name] = ColumnKind.CATEGORICAL
            vocabularies[name] = _sorted_labels(cells.tolist())
    return ColumnSchema(kinds=kinds, vocabularies=vocabularies, target_name=table.target_name)


def encode_target(schema: ColumnSchema, rows: RawTable) -> np.ndarray:
    """Map target labels to class indices of ``schema.classes``."""
    index = {label: i for i, label in enumerate(schema.classes)}
    labels = rows.frame[schema.target_name]
    unknown = set(labels) - set(index)
    if unknown:
        raise DataError(f"Unknown target labels: {sorted(unknown)}")
    return labels.map(index).to_numpy(dtype=int)


def _object_column(cells: pd.Series) -> np.ndarray:
    """One-column object array with every missing cell as ``NaN``."""
    column = cells.to_numpy(dtype=object).copy()
    column[pd.isna(column)] = np.nan
    return column.reshape(-1, 1)


def _numeric_column(name: str, cells: pd.Series) -> np.ndarray:
    """One-column float array; unparsable and non-finite cells become ``NaN``."""
    values = pd.to_numeric(cells, errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(values) & cells.notna().to_numpy()
    if bad.any():
        logger.warning("Column '%s': %d non-numeric cells imputed", name, int(bad.sum()))
    values[~np.isfinite(values)] = np.nan
    return values.reshape(-1, 1)


def fit_preprocessor(train_rows: RawTable, schema: ColumnSchema) -> PreprocessorState:
    """Fit imputation, standardization and one-hot vocabularies on training rows.

    Numeric columns are median-imputed first, then mean and population standard
    deviation are taken over the imputed column, so standardized training data
    has zero mean and unit variance even with missing cells.

    Raises:
        DataError: If a feature column is entirely missing in the training rows
    """
    numeric: dict[str, NumericStats] = {}
    categorical: dict[str, CategoricalStats] = {}
    for name in schema.feature_columns:
        cells = train_rows.frame[name]
        if cells.isna().all():
            raise DataError(f"Column '{name}' is entirely missing in training rows")
        if schema.kinds[name] == ColumnKind.NUMERIC:
            imputer = SimpleImputer(strategy="median")
            scaler = StandardScaler().fit(imputer.fit_transform(_numeric_column(name, cells)))
            numeric[name] = NumericStats(
                mean=float(scaler.mean_[0]),
                std=max(float(np.sqrt(scaler.var_[0])), STD_FLOOR),
                median=float(imputer.statistics_[0]),
            )
        else:
            imputer = SimpleImputer(strategy="most_frequent")
            encoder = OneHotEncoder(
                categories=[list(_sorted_labels(cells.dropna().tolist()))],
                handle_unknown="ignore",
            )
            encoder.fit(imputer.fit_transform(_object_column(cells)))
            categorical[name] = CategoricalStats(
                categories=tuple(str(c) for c in encoder.categories_[0]),
                mode=str(imputer.statistics_[0]),
            )
    return PreprocessorState(
        columns=tuple(schema.feature_columns), numeric=numeric, categorical=categorical
    )


def _categorical_pipeline(stats: CategoricalStats) -> Pipeline:
    """Mode imputer plus one-hot encoder rebuilt from fitted statistics."""
    pipeline = Pipeline([
        ("imputer", SimpleImputer(strategy="constant", fill_value=stats.mode)),
        ("onehot", OneHotEncoder(
            categories=[list(stats.categories)], handle_unknown="ignore", sparse_output=False,
        )),
    ])
    return pipeline.fit(np.asarray(stats.categories, dtype=object).reshape(-1, 1))


def transform(state: PreprocessorState, rows: RawTable) -> FeatureMatrix:
    """Apply fitted preprocessing to rows.

    Unseen categories map to an all-zero one-hot group and are logged.

    Raises:
        DataError: If a fitted column is absent from ``rows``
    """
    missing = [name for name in state.columns if name not in rows.frame.columns]
    if missing:
        raise DataError(f"Column '{missing[0]}' missing from rows to transform")
    width = len(state.feature_names)
    if rows.n_rows == 0:
        values = np.zeros((0, width))
    else:
        blocks = []
        for name in state.columns:
            cells = rows.frame[name]
            if name in state.numeric:
                stats = state.numeric[name]
                imputer = SimpleImputer(strategy="constant", fill_value=stats.median)
                imputed = imputer.fit_transform(_numeric_column(name, cells))
                blocks.append((imputed - stats.mean) / stats.std)
            else:
                stats = state.categorical[name]
                column = _object_column(cells)
                unseen = (cells.notna() & ~cells.isin(stats.categories)).to_numpy()
                if unseen.any():
                    logger.warning(
                        "Column '%s': %d rows with unseen categories %s encoded as zeros",
                        name, int(unseen.sum()), sorted(set(column[unseen, 0])),
                    )
                blocks.append(_categorical_pipeline(stats).transform(column))
        values = np.hstack(blocks) if blocks else np.zeros((rows.n_rows, 0))
    return FeatureMatrix(
        values=np.asarray(values, dtype=float),
        feature_names=tuple(state.feature_names),
        source_column=tuple(state.source_column),
    )


def stratified_split(labels: np.ndarray, ratio: float = 0.8, seed: int = 0) -> SplitIndices:
    """Split row positions into train/test, preserving class proportions.

    Each class with ``n_c`` members sends ``round(ratio * n_c)`` (half up,
    clamped to ``[1, n_c - 1]``) members to train, chosen by a seeded shuffle
    within the class. Singleton classes go to train with a warning.

    Raises:
        DataError: If ``ratio`` is not strictly between 0 and 1
    """
    if not 0 < ratio < 1:
        raise DataError(f"Split ratio must be in (0, 1), got {ratio}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for cls in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == cls))
        n_c = len(members)
        if n_c < 2:
            logger.warning("Class %s has %d member; placed in train only", cls, n_c)
            train.extend(members.tolist())
            continue
        n_train = min(max(int(np.floor(ratio * n_c + 0.5)), 1), n_c - 1)
        train.extend(members[:n_train].tolist())
        test.extend(members[n_train:].tolist())
    return SplitIndices(
        train=np.sort(np.asarray(train, dtype=int)),
        test=np.sort(np.asarray(test, dtype=int)),
        seed=seed,
    )
