"""Load, validate and convert gene-by-study statistic matrices.

The on-disk format is a UTF-8 TSV: first row is ``gene`` followed by the m
study identifiers, every following row is a gene identifier followed by m
numeric cells. Lines starting with ``#`` are treated as comments (our own
writers put a run-manifest reference there).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import norm

# p-values are clamped into this range before any quantile transform; the
# real datasets contain p < 1e-20 which would otherwise saturate to z = inf.
P_MIN = 1e-15

TAILS = ("one_sided", "two_sided_abs")
SCALES = ("pvalue", "zscore")


class MatrixFormatError(ValueError):
    """Malformed input table (bad header, ragged rows, bad cells...)."""


@dataclass(frozen=True)
class StatsMatrix:
    """An n x m matrix of per-gene, per-study statistics.

    ``scale`` is either ``pvalue`` (values in (0,1), clamped at load) or
    ``zscore`` (any finite real). Identifiers are unique and row/column
    aligned with ``values``.
    """

    gene_ids: tuple[str, ...]
    study_ids: tuple[str, ...]
    values: np.ndarray
    scale: str
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "gene_ids", tuple(str(g) for g in self.gene_ids))
        object.__setattr__(self, "study_ids", tuple(str(s) for s in self.study_ids))
        if self.scale not in SCALES:
            raise ValueError(f"scale must be one of {SCALES}, got {self.scale!r}")
        if values.ndim != 2:
            raise ValueError("values must be a 2-D matrix")
        n, m = values.shape
        if n < 1 or m < 1:
            raise ValueError("matrix must have at least one gene and one study")
        if len(self.gene_ids) != n or len(self.study_ids) != m:
            raise ValueError("identifier lengths do not match the value matrix")
        if len(set(self.gene_ids)) != n:
            raise MatrixFormatError("duplicate gene identifiers")
        if len(set(self.study_ids)) != m:
            raise MatrixFormatError("duplicate study identifiers")
        if not np.all(np.isfinite(values)):
            i, j = np.argwhere(~np.isfinite(values))[0]
            raise MatrixFormatError(
                f"non-finite value for gene {self.gene_ids[i]!r}, study {self.study_ids[j]!r}"
            )
        if self.scale == "pvalue":
            if np.any(values < 0.0) or np.any(values > 1.0):
                i, j = np.argwhere((values < 0.0) | (values > 1.0))[0]
                raise MatrixFormatError(
                    f"p-value {values[i, j]!r} out of [0, 1] for gene "
                    f"{self.gene_ids[i]!r}, study {self.study_ids[j]!r}"
                )
            object.__setattr__(self, "values", np.clip(values, P_MIN, 1.0 - P_MIN))

    @property
    def n_genes(self) -> int:
        return self.values.shape[0]

    @property
    def n_studies(self) -> int:
        return self.values.shape[1]


def load_matrix(path, scale: str) -> StatsMatrix:
    """Read a TSV statistic matrix and validate it.

    Errors name the offending cell by gene/study identifier (or row/column
    number when identifiers are not yet available).
    """
    if scale not in SCALES:
        raise ValueError(f"scale must be one of {SCALES}, got {scale!r}")
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise MatrixFormatError(f"{path}: empty table")
    header = lines[0].split("\t")
    if len(header) < 2:
        raise MatrixFormatError(f"{path}: header must contain a corner cell and at least one study id")
    study_ids = [c.strip() for c in header[1:]]
    if any(not s for s in study_ids):
        raise MatrixFormatError(f"{path}: empty study identifier in header")
    m = len(study_ids)
    gene_ids: list[str] = []
    rows: list[list[float]] = []
    for ln_no, line in enumerate(lines[1:], start=2):
        cells = line.split("\t")
        if len(cells) != m + 1:
            raise MatrixFormatError(
                f"{path}:{ln_no}: expected {m + 1} columns, found {len(cells)}"
            )
        gene_ids.append(cells[0].strip())
        row = []
        for j, cell in enumerate(cells[1:]):
            try:
                row.append(float(cell))
            except ValueError:
                raise MatrixFormatError(
                    f"{path}:{ln_no}: non-numeric cell {cell!r} in column {study_ids[j]!r}"
                ) from None
        rows.append(row)
    if not rows:
        raise MatrixFormatError(f"{path}: no data rows")
    values = np.array(rows, dtype=np.float64)
    return StatsMatrix(tuple(gene_ids), tuple(study_ids), values, scale)


def save_matrix(matrix: StatsMatrix, path, comment: str | None = None) -> None:
    """Write a StatsMatrix (or any fdr table laid out the same way) as TSV."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        fh.write("gene\t" + "\t".join(matrix.study_ids) + "\n")
        for gid, row in zip(matrix.gene_ids, matrix.values):
            fh.write(gid + "\t" + "\t".join(format(v, ".12g") for v in row) + "\n")


def _clamp_pvalues(p: np.ndarray) -> np.ndarray:
    return np.clip(p, P_MIN, 1.0 - P_MIN)


def pvalues_to_zscores(matrix: StatsMatrix, tail: str) -> StatsMatrix:
    """Quantile-transform p-values to z-scores.

    ``one_sided``: z = Phi^-1(1 - p), signed (small p -> large positive z,
    p near 1 -> large negative z). ``two_sided_abs``: z = Phi^-1(1 - p/2),
    non-negative. p is clamped to [P_MIN, 1 - P_MIN] first.
    """
    if matrix.scale != "pvalue":
        raise ValueError("input matrix must be on the pvalue scale")
    if tail not in TAILS:
        raise ValueError(f"tail must be one of {TAILS}, got {tail!r}")
    p = _clamp_pvalues(matrix.values)
    if tail == "one_sided":
        z = norm.isf(p)
    else:
        z = norm.isf(p / 2.0)
    meta = dict(matrix.meta)
    meta["tail"] = tail
    return StatsMatrix(matrix.gene_ids, matrix.study_ids, z, "zscore", meta)


def zscores_to_pvalues(matrix: StatsMatrix, tail: str) -> StatsMatrix:
    """Inverse of :func:`pvalues_to_zscores` on the non-clamped domain."""
    if matrix.scale != "zscore":
        raise ValueError("input matrix must be on the zscore scale")
    if tail not in TAILS:
        raise ValueError(f"tail must be one of {TAILS}, got {tail!r}")
    z = matrix.values
    if tail == "one_sided":
        p = norm.sf(z)
    else:
        p = 2.0 * norm.sf(np.abs(z))
    meta = dict(matrix.meta)
    meta["tail"] = tail
    return StatsMatrix(matrix.gene_ids, matrix.study_ids, _clamp_pvalues(p), "pvalue", meta)


def folded(matrix: StatsMatrix) -> np.ndarray:
    """Absolute z-scores; the scale every two-groups model is fitted on."""
    if matrix.scale != "zscore":
        raise ValueError("folding requires the zscore scale")
    return np.abs(matrix.values)


def as_zscores(matrix: StatsMatrix, tail: str | None) -> StatsMatrix:
    """Pass through z-scores or convert p-values using ``tail``."""
    if matrix.scale == "zscore":
        if tail is not None:
            raise ValueError("tail conversion does not apply to z-score input")
        return matrix
    if tail is None:
        raise ValueError("p-value input requires a tail convention")
    return pvalues_to_zscores(matrix, tail)


def truth_matrix_to_tsv(truth: np.ndarray, gene_ids, study_ids, path) -> None:
    """Write a binary ground-truth matrix in the same TSV layout."""
    mat = StatsMatrix(tuple(gene_ids), tuple(study_ids), np.asarray(truth, dtype=float), "zscore")
    save_matrix(mat, path)


def load_truth_matrix(path) -> tuple[tuple[str, ...], np.ndarray]:
    """Read a binary ground-truth matrix; returns (gene_ids, 0/1 matrix)."""
    mat = load_matrix(path, "zscore")
    values = mat.values
    if not np.all((values == 0.0) | (values == 1.0)):
        raise MatrixFormatError(f"{path}: truth matrix must contain only 0/1 cells")
    return mat.gene_ids, values.astype(np.uint8)
