"""Genotype and omic matrices: loading, alignment, imputation, standardization."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import AlignmentError, DataError, ParseError

MIN_OVERLAP = 10


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _check_unique(ids: Sequence[str], what: str) -> None:
    seen = set()
    for i in ids:
        if i in seen:
            raise DataError(f"duplicate {what} id", row=i if what == "sample" else None,
                            column=i if what != "sample" else None)
        seen.add(i)


@dataclass(frozen=True)
class GenotypeMatrix:
    samples: tuple[str, ...]
    variants: tuple[str, ...]
    values: np.ndarray  # (n_samples, n_variants) allele counts

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.shape != (len(self.samples), len(self.variants)):
            raise DataError(f"genotype shape {values.shape} does not match ids")
        if values.size and not np.isin(values, (0, 1, 2)).all():
            raise DataError("genotype values must be 0, 1 or 2")
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "variants", tuple(self.variants))
        object.__setattr__(self, "values", _frozen(values.astype(np.int8)))
        _check_unique(self.samples, "sample")
        _check_unique(self.variants, "variant")

    @property
    def n_samples(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class FeatureMatrix:
    """Real-valued sample x feature matrix.

    ``raw`` keeps the values as originally supplied so that a standardized
    matrix can be written back out and reloaded bit-for-bit.
    """

    samples: tuple[str, ...]
    features: tuple[str, ...]
    values: np.ndarray
    raw: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (len(self.samples), len(self.features)):
            raise DataError(f"feature shape {values.shape} does not match ids")
        bad = ~np.isfinite(values)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise DataError("non-finite value", row=self.samples[r], column=self.features[c])
        raw = values if self.raw is None else np.asarray(self.raw, dtype=float)
        if raw.shape != values.shape:
            raise DataError("raw values do not match standardized shape")
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "raw", _frozen(raw))
        _check_unique(self.samples, "sample")
        _check_unique(self.features, "feature")

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.features.index(name)]
        except ValueError:
            raise KeyError(name) from None

    def raw_column(self, name: str) -> np.ndarray:
        try:
            return self.raw[:, self.features.index(name)]
        except ValueError:
            raise KeyError(name) from None


@dataclass(frozen=True)
class DropReport:
    dropped_samples: tuple[str, ...] = ()
    dropped_variants: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"dropped_samples": list(self.dropped_samples),
                "dropped_variants": list(self.dropped_variants)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass(frozen=True)
class Dataset:
    genotype: GenotypeMatrix
    omics: FeatureMatrix
    outcome: FeatureMatrix | None = None  # single column, named after the outcome
    drop_report: DropReport = field(default_factory=DropReport)

    def __post_init__(self):
        if self.genotype.samples != self.omics.samples:
            raise AlignmentError("genotype and omic sample ids are not aligned")
        if self.outcome is not None:
            if self.outcome.samples != self.omics.samples:
                raise AlignmentError("outcome sample ids are not aligned")
            if len(self.outcome.features) != 1:
                raise DataError("outcome must be a single column")
            if self.outcome.features[0] in self.omics.features:
                raise DataError("outcome name clashes with an omic feature",
                                column=self.outcome.features[0])

    @property
    def samples(self) -> tuple[str, ...]:
        return self.omics.samples

    @property
    def n_samples(self) -> int:
        return self.omics.n_samples

    @property
    def outcome_name(self) -> str | None:
        return None if self.outcome is None else self.outcome.features[0]


def standardize(matrix: FeatureMatrix) -> FeatureMatrix:
    """Column-wise z-score using the n-1 standard deviation."""
    x = np.asarray(matrix.values, dtype=float)
    if x.shape[0] < 2:
        raise DataError("need at least two samples to standardize")
    mean = x.mean(axis=0)
    centered = x - mean
    sd = np.sqrt((centered ** 2).sum(axis=0) / (x.shape[0] - 1))
    for j, s in enumerate(sd):
        # relative test: a constant column leaves only rounding noise
        if not s > 1e-12 * max(1.0, abs(mean[j])):
            raise DataError("zero-variance column cannot be standardized",
                            column=matrix.features[j])
    z = centered / sd
    # second centering pass removes the O(eps) mean left by the division
    z -= z.mean(axis=0)
    return FeatureMatrix(matrix.samples, matrix.features, z, raw=matrix.raw)


def _impute_genotype(values: np.ndarray) -> np.ndarray:
    """Replace NaN with the per-variant mean rounded to the nearest allele count."""
    out = values.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        miss = np.isnan(col)
        if miss.all():
            col[:] = 0.0  # dropped later as zero variance
        elif miss.any():
            col[miss] = min(2.0, max(0.0, math.floor(col[~miss].mean() + 0.5)))
    return out


def assemble_dataset(
    samples: Sequence[str],
    variants: Sequence[str],
    genotype: np.ndarray,
    features: Sequence[str],
    omics: np.ndarray,
    outcome_column: str | None = None,
    dropped_samples: Iterable[str] = (),
) -> Dataset:
    """Impute, variance-filter and standardize already aligned matrices.

    ``genotype`` may contain NaN for missing calls. ``outcome_column`` names a
    column of ``omics`` that is split off as the outcome.
    """
    genotype = np.asarray(genotype, dtype=float)
    genotype = _impute_genotype(genotype)
    keep = genotype.max(axis=0) > genotype.min(axis=0) if genotype.size else np.zeros(0, bool)
    dropped_variants = tuple(v for v, k in zip(variants, keep) if not k)
    geno = GenotypeMatrix(tuple(samples), tuple(v for v, k in zip(variants, keep) if k),
                          genotype[:, keep].astype(np.int8))

    features = list(features)
    omics = np.asarray(omics, dtype=float)
    outcome = None
    if outcome_column is not None:
        if outcome_column not in features:
            raise DataError("outcome column not found", column=outcome_column)
        j = features.index(outcome_column)
        outcome = standardize(FeatureMatrix(tuple(samples), (outcome_column,), omics[:, [j]]))
        omics = np.delete(omics, j, axis=1)
        del features[j]
    feats = standardize(FeatureMatrix(tuple(samples), tuple(features), omics))
    report = DropReport(tuple(dropped_samples), dropped_variants)
    return Dataset(geno, feats, outcome, report)


def _read_table(path: Path) -> tuple[list[str], list[str], list[list[str]], list[int]]:
    """Return (column ids, sample ids, cell rows, source line numbers)."""
    try:
        fh = open(path, newline="")
    except FileNotFoundError:
        raise DataError(f"file not found: {path}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", path, 1) from None
        except csv.Error as exc:
            raise ParseError(str(exc), path, reader.line_num) from None
        if len(header) < 2:
            raise ParseError("header needs a sample id column and at least one data column", path, 1)
        columns = [h.strip() for h in header[1:]]
        if any(not c for c in columns):
            raise ParseError("empty column name in header", path, 1)
        ids, rows, lines = [], [], []
        while True:
            try:
                row = next(reader)
            except StopIteration:
                break
            except csv.Error as exc:
                raise ParseError(str(exc), path, reader.line_num) from None
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, found {len(row)}", path, reader.line_num)
            ids.append(row[0].strip())
            rows.append(row[1:])
            lines.append(reader.line_num)
    return columns, ids, rows, lines


def _parse_genotype(path, columns, ids, rows) -> np.ndarray:
    out = np.empty((len(rows), len(columns)))
    for i, row in enumerate(rows):
        for j, cell in enumerate(row):
            cell = cell.strip()
            if not cell or cell.upper() in ("NA", "NAN"):
                out[i, j] = np.nan
                continue
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"non-numeric genotype in {path}", row=ids[i], column=columns[j]) from None
            if v not in (0.0, 1.0, 2.0):
                raise DataError(f"genotype must be 0, 1 or 2 in {path}", row=ids[i], column=columns[j])
            out[i, j] = v
    return out


def _parse_omics(path, columns, ids, rows) -> np.ndarray:
    out = np.empty((len(rows), len(columns)))
    for i, row in enumerate(rows):
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                what = "missing" if not cell.strip() else "non-numeric"
                raise DataError(f"{what} omic value in {path}", row=ids[i], column=columns[j]) from None
            if not math.isfinite(v):
                raise DataError(f"non-finite omic value in {path}", row=ids[i], column=columns[j])
            out[i, j] = v
    return out


def load_dataset(genotype_path, omics_path, outcome_column: str | None = None) -> Dataset:
    """Load, inner-join on sample id, impute, filter and standardize.

    Samples keep the genotype file's order. The returned dataset carries a
    :class:`DropReport` listing samples lost in the join and zero-variance
    variants.
    """
    genotype_path, omics_path = Path(genotype_path), Path(omics_path)
    g_cols, g_ids, g_rows, _ = _read_table(genotype_path)
    o_cols, o_ids, o_rows, _ = _read_table(omics_path)
    _check_unique(g_ids, "sample")
    _check_unique(o_ids, "sample")
    _check_unique(g_cols, "variant")
    _check_unique(o_cols, "feature")
    g_vals = _parse_genotype(genotype_path, g_cols, g_ids, g_rows)
    o_vals = _parse_omics(omics_path, o_cols, o_ids, o_rows)

    o_index = {s: i for i, s in enumerate(o_ids)}
    shared = [s for s in g_ids if s in o_index]
    if len(shared) < MIN_OVERLAP:
        raise AlignmentError(f"only {len(shared)} overlapping samples (need {MIN_OVERLAP})")
    shared_set = set(shared)
    dropped = [s for s in g_ids if s not in shared_set] + [s for s in o_ids if s not in shared_set]
    g_index = {s: i for i, s in enumerate(g_ids)}
    g_sel = g_vals[[g_index[s] for s in shared]]
    o_sel = o_vals[[o_index[s] for s in shared]]
    return assemble_dataset(shared, g_cols, g_sel, o_cols, o_sel, outcome_column, dropped)


def format_float(v: float) -> str:
    return repr(float(v))


def write_dataset(dataset: Dataset, genotype_path, omics_path) -> None:
    """Write the genotype and raw omic values (outcome appended as last column)."""
    with open(genotype_path, "w", newline="") as fh:
        fh.write(genotype_csv(dataset.genotype))
    with open(omics_path, "w", newline="") as fh:
        fh.write(omics_csv(dataset))


def genotype_csv(genotype: GenotypeMatrix) -> str:
    lines = [",".join(("sample_id",) + genotype.variants)]
    for s, row in zip(genotype.samples, genotype.values):
        lines.append(s + "," + ",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def omics_csv(dataset: Dataset) -> str:
    names = dataset.omics.features
    raw = dataset.omics.raw
    if dataset.outcome is not None:
        names = names + dataset.outcome.features
        raw = np.column_stack([raw, dataset.outcome.raw])
    return matrix_csv(dataset.samples, names, raw)


def matrix_csv(samples: Sequence[str], columns: Sequence[str], values: np.ndarray,
               index_label: str = "sample_id") -> str:
    lines = [",".join((index_label,) + tuple(columns))]
    for s, row in zip(samples, values):
        lines.append(s + "," + ",".join(format_float(v) for v in row))
    return "\n".join(lines) + "\n"


def read_matrix_csv(path) -> tuple[list[str], list[str], np.ndarray]:
    """Read a plain numeric table (e.g. instrument scores); returns (samples, columns, values)."""
    path = Path(path)
    cols, ids, rows, _ = _read_table(path)
    return ids, cols, _parse_omics(path, cols, ids, rows)
