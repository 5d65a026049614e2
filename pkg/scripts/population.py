"""
Title:        population.py
Description:  Load, standardize, partition and synthesize finite populations of schools.
Date:         2026-10-18
Version:      1.0.0
License:      MIT

A population frame is a table of schools with three analysis variables
(a, b, c). Standardization uses the population (divide-by-N) standard
deviation, so the population mean of every z-variable is zero and the
external validity bias of a sample mean is just its expected value.
"""

from typing import Optional, Dict, Any, List, Iterator, Union, IO
from dataclasses import dataclass, field
import logging

import numpy as np
import pandas as pd
from scipy import stats

from scripts.srsq_backend import (
    SyntheticSpec, PopulationError, DuplicateId, ParseError, EmptyPopulation,
    DegenerateVariable, InvalidCorrelation,
)

logger = logging.getLogger(__name__)

VARIABLES = ('a', 'b', 'c')
RAW_COLUMNS = tuple(f'var_{v}' for v in VARIABLES)
Z_COLUMNS = tuple(f'z_{v}' for v in VARIABLES)
CSV_COLUMNS = ('school_id', 'group_id') + RAW_COLUMNS


@dataclass(frozen=True)
class SchoolRecord:
    """One school: identifiers, raw variables and (once standardized) z-values"""
    school_id: str
    group_id: str
    var_a: float
    var_b: float
    var_c: float
    z_a: Optional[float] = None
    z_b: Optional[float] = None
    z_c: Optional[float] = None


@dataclass(frozen=True, eq=False)
class PopulationFrame:
    """A named finite population backed by a pandas table.

    The table always holds school_id, group_id and var_a..var_c; z_a..z_c
    are present exactly when `standardized` is set. Treat the table as
    read-only: every operation here returns a new frame.
    """
    name: str
    table: pd.DataFrame
    standardized: bool = False
    means: Dict[str, float] = field(default_factory=dict)
    sds: Dict[str, float] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.table)

    @property
    def ids(self) -> np.ndarray:
        return self.table['school_id'].to_numpy()

    @property
    def records(self) -> List[SchoolRecord]:
        columns = list(CSV_COLUMNS) + (list(Z_COLUMNS) if self.standardized else [])
        return [SchoolRecord(*row) for row in self.table[columns].itertuples(index=False, name=None)]

    def raw(self, tag: str) -> np.ndarray:
        return self.table[f'var_{tag}'].to_numpy(dtype=float)

    def z(self, tag: str) -> np.ndarray:
        if not self.standardized:
            raise PopulationError(f"population '{self.name}' is not standardized")
        return self.table[f'z_{tag}'].to_numpy(dtype=float)

    def z_matrix(self) -> np.ndarray:
        """N x 3 array of z-values in variable order a, b, c"""
        return np.column_stack([self.z(tag) for tag in VARIABLES])

    def unstandardized(self) -> 'PopulationFrame':
        table = self.table[list(CSV_COLUMNS)].reset_index(drop=True)
        return PopulationFrame(self.name, table)

    def subset(self, mask: np.ndarray, name: str) -> 'PopulationFrame':
        table = self.table.loc[mask, list(CSV_COLUMNS)].reset_index(drop=True)
        return PopulationFrame(name, table)


@dataclass(frozen=True)
class SkippedPopulation:
    name: str
    n: int
    reason: str

    def to_dict(self) -> Dict[str, Any]:
        return {'population': self.name, 'N': self.n, 'reason': self.reason}


@dataclass(frozen=True)
class Partition:
    """Populations produced by partition_by_group plus the ones that were dropped"""
    frames: List[PopulationFrame]
    skipped: List[SkippedPopulation]

    def __iter__(self) -> Iterator[PopulationFrame]:
        return iter(self.frames)

    def __len__(self) -> int:
        return len(self.frames)

    def names(self) -> List[str]:
        return [f.name for f in self.frames]


def load_population(csv_source: Union[str, IO], name: str) -> PopulationFrame:
    """Parse a school_id,group_id,var_a,var_b,var_c table.

    Row numbers in ParseError count data rows from 1 (the header is not a row).
    """
    try:
        df = pd.read_csv(csv_source, dtype=str, keep_default_na=False, encoding='utf-8')
    except pd.errors.EmptyDataError:
        raise EmptyPopulation(f"population '{name}' has no rows")
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise ParseError(str(e))

    df.columns = [c.strip() for c in df.columns]
    missing = [c for c in CSV_COLUMNS if c not in df.columns]
    if missing:
        raise ParseError(f"missing columns: {', '.join(missing)}")
    if df.empty:
        raise EmptyPopulation(f"population '{name}' has no rows")

    table = pd.DataFrame({
        'school_id': df['school_id'].str.strip(),
        'group_id': df['group_id'].str.strip(),
    })
    blank = table['school_id'] == ''
    if blank.any():
        raise ParseError("empty school_id", row=int(np.flatnonzero(blank.to_numpy())[0]) + 1)

    for column in RAW_COLUMNS:
        values = pd.to_numeric(df[column].str.strip(), errors='coerce').to_numpy(dtype=float)
        bad = ~np.isfinite(values)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ParseError(f"{column} value {df[column].iloc[i]!r} is not a number", row=i + 1)
        table[column] = values

    dup = table['school_id'].duplicated()
    if dup.any():
        i = int(np.flatnonzero(dup.to_numpy())[0])
        raise DuplicateId(f"school_id {table['school_id'].iloc[i]!r} repeated at row {i + 1}")

    logger.debug(f"Loaded population '{name}' with {len(table)} schools")
    return PopulationFrame(name, table)


def standardize(frame: PopulationFrame) -> PopulationFrame:
    """Add z-values using the population mean and divide-by-N standard deviation"""
    if frame.standardized:
        raise PopulationError(f"population '{frame.name}' is already standardized")
    if len(frame) == 0:
        raise EmptyPopulation(f"population '{frame.name}' has no rows")

    table = frame.table.copy()
    means: Dict[str, float] = {}
    sds: Dict[str, float] = {}
    for tag in VARIABLES:
        x = frame.raw(tag)
        # constant columns can still give a tiny nonzero std from rounding
        if x.max() == x.min():
            raise DegenerateVariable(f'var_{tag}', frame.name)
        mean = float(x.mean())
        sd = float(x.std(ddof=0))
        table[f'z_{tag}'] = (x - mean) / sd
        means[tag] = mean
        sds[tag] = sd
    return PopulationFrame(frame.name, table, True, means, sds)


def partition_by_group(frame: PopulationFrame) -> Partition:
    """Split a frame into one population per group_id plus the whole frame.

    The whole frame comes first under its own name; groups follow in sorted
    order. Each population is standardized on its own; a population with a
    zero-variance variable is logged and recorded as skipped.
    """
    candidates = [frame.unstandardized()]
    groups = frame.table['group_id'].to_numpy()
    for group in sorted(set(groups)):
        if group == frame.name:
            logger.warning(f"Group '{group}' has the same name as the whole population; it is reported as '{group}-group'")
            label = f'{group}-group'
        else:
            label = group
        candidates.append(frame.subset(groups == group, label))

    frames: List[PopulationFrame] = []
    skipped: List[SkippedPopulation] = []
    for candidate in candidates:
        try:
            frames.append(standardize(candidate))
        except DegenerateVariable as e:
            logger.warning(f"Skipping population '{candidate.name}' ({len(candidate)} schools): {e}")
            skipped.append(SkippedPopulation(candidate.name, len(candidate), str(e)))
    return Partition(frames, skipped)


def check_correlation(correlation) -> np.ndarray:
    corr = np.asarray(correlation, dtype=float)
    if corr.shape != (3, 3):
        raise InvalidCorrelation("correlation must be 3x3")
    if not np.allclose(corr, corr.T, atol=1e-12, rtol=0):
        raise InvalidCorrelation("correlation matrix is not symmetric")
    if not np.allclose(np.diag(corr), 1.0, atol=1e-12, rtol=0):
        raise InvalidCorrelation("correlation matrix must have a unit diagonal")
    smallest = float(np.linalg.eigvalsh(corr).min())
    if smallest < -1e-10:
        raise InvalidCorrelation(f"correlation matrix is not positive semidefinite (eigenvalue {smallest:.3g})")
    return corr


def generate_synthetic(spec: SyntheticSpec) -> PopulationFrame:
    """Draw a population from a correlated trivariate normal and apply marginal transforms"""
    corr = check_correlation(spec.correlation)
    rng = np.random.default_rng(spec.seed)
    latent = rng.multivariate_normal(np.zeros(3), corr, size=spec.n_schools, method='eigh')

    width = len(str(spec.n_schools))
    table = pd.DataFrame({
        'school_id': [f'S{i:0{width}d}' for i in range(1, spec.n_schools + 1)],
        'group_id': _group_labels(spec),
    })
    for j, (column, marginal) in enumerate(zip(RAW_COLUMNS, spec.marginals)):
        table[column] = transform_marginal(latent[:, j], marginal)

    logger.debug(f"Generated synthetic population '{spec.name}' with {spec.n_schools} schools (seed {spec.seed})")
    return PopulationFrame(spec.name, table)


def transform_marginal(x: np.ndarray, marginal: str) -> np.ndarray:
    if marginal == 'normal':
        return x.copy()
    if marginal == 'lognormal':
        return np.exp(x)
    if marginal == 'bounded-percent':
        return stats.norm.cdf(x) * 100.0
    raise PopulationError(f"unknown marginal transform {marginal!r}")


def _group_labels(spec: SyntheticSpec) -> List[str]:
    if spec.group_sizes is None:
        return [spec.name] * spec.n_schools
    labels: List[str] = []
    for label, size in spec.group_sizes:
        labels.extend([label] * size)
    return labels


def write_population(frame: PopulationFrame, out: Union[str, IO]) -> None:
    """Write the raw columns in the format load_population reads"""
    frame.table[list(CSV_COLUMNS)].to_csv(out, index=False, lineterminator='\n')


def describe(frame: PopulationFrame) -> Dict[str, Any]:
    """N, per-variable mean and population sd, and the Pearson correlation matrix"""
    raw = np.column_stack([frame.raw(tag) for tag in VARIABLES])
    return {
        'name': frame.name,
        'N': len(frame),
        'mean': {tag: float(raw[:, j].mean()) for j, tag in enumerate(VARIABLES)},
        'sd': {tag: float(raw[:, j].std(ddof=0)) for j, tag in enumerate(VARIABLES)},
        'correlation': np.corrcoef(raw, rowvar=False).tolist(),
    }
