"""
Title:        metrics.py
Description:  Bias, variance, MSE and mean stage counts over replications, the
              SRSQ - SRS comparison, the average over the six role
              permutations, and the replication-count stability check.
Date:         2026-10-18
Version:      1.0.0
License:      MIT

Variables are standardized within each population, so the external validity
bias of a sample mean is the mean of the sample means over replications.
Variances divide by the number of replications, which makes
MSE = bias**2 + variance exact.
"""

from typing import Optional, Dict, Any, List, Sequence, Tuple
from dataclasses import dataclass
import logging
import math

import numpy as np

from scripts.srsq_backend import MetricsError, NoReplications, IncomparableSummaries, PermutationSetError
from scripts.design import RoleAssignment, ROLES, enumerate_role_permutations
from scripts.recruitment import ReplicationOutcome, SRS, SRSQ

logger = logging.getLogger(__name__)

MEASURES = ('bias_signed', 'bias_abs', 'variance', 'mse')
COUNT_FIELDS = ('contacted', 'excluded', 'invited', 'declined', 'agreed')
DIFFERENCE = 'SRSQ-SRS'

# kinds of MethodSummary
REPLICATIONS = 'replications'
AVERAGED = 'averaged'
DIFFERENCES = 'difference'


@dataclass(frozen=True)
class RoleMetrics:
    bias_signed: float
    bias_abs: float
    variance: float
    mse: float

    def to_dict(self) -> Dict[str, float]:
        return {m: getattr(self, m) for m in MEASURES}


@dataclass(frozen=True)
class MethodSummary:
    """Performance of one method over a set of replications.

    For kind 'replications' the invariants hold exactly: bias_abs is
    |bias_signed| and mse = bias_signed**2 + variance. Averaged and
    difference summaries are field-wise means or subtractions and carry
    neither.
    """
    method: str
    roles: Optional[RoleAssignment]
    metrics: Dict[str, RoleMetrics]
    counts: Dict[str, float]
    achieved_n: float
    replications: int
    zero_size: int = 0
    kind: str = REPLICATIONS

    def __post_init__(self):
        if self.kind != REPLICATIONS:
            return
        for role, m in self.metrics.items():
            if math.isnan(m.bias_signed):
                continue
            if m.bias_abs != abs(m.bias_signed):
                raise MetricsError(f"{self.method} {role}: bias_abs is not |bias_signed|")
            if abs(m.mse - m.bias_signed ** 2 - m.variance) > 1e-12:
                raise MetricsError(f"{self.method} {role}: MSE decomposition off by "
                                   f"{m.mse - m.bias_signed ** 2 - m.variance:.3g}")

    def flatten(self) -> Dict[str, float]:
        """Every numeric field under a dotted key, in a fixed order"""
        flat: Dict[str, float] = {}
        for role in ROLES:
            for measure in MEASURES:
                flat[f'{role}.{measure}'] = getattr(self.metrics[role], measure)
        for name in COUNT_FIELDS:
            flat[f'counts.{name}'] = self.counts[name]
        flat['achieved_n'] = self.achieved_n
        return flat

    @classmethod
    def from_flat(cls, method: str, roles: Optional[RoleAssignment], flat: Dict[str, float],
                  replications: int, zero_size: int, kind: str) -> 'MethodSummary':
        metrics = {role: RoleMetrics(*(flat[f'{role}.{m}'] for m in MEASURES)) for role in ROLES}
        counts = {name: flat[f'counts.{name}'] for name in COUNT_FIELDS}
        return cls(method, roles, metrics, counts, flat['achieved_n'], replications, zero_size, kind)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'method': self.method,
            'kind': self.kind,
            'roles': self.roles.to_dict() if self.roles is not None else None,
            'metrics': {role: self.metrics[role].to_dict() for role in ROLES},
            'counts': {name: self.counts[name] for name in COUNT_FIELDS},
            'achieved_n': self.achieved_n,
            'replications': self.replications,
            'zero_size': self.zero_size,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'MethodSummary':
        roles = RoleAssignment.from_dict(data['roles']) if data.get('roles') else None
        metrics = {role: RoleMetrics(**{m: _num(data['metrics'][role][m]) for m in MEASURES}) for role in ROLES}
        counts = {name: float(data['counts'][name]) for name in COUNT_FIELDS}
        return cls(data['method'], roles, metrics, counts, float(data['achieved_n']),
                   int(data['replications']), int(data.get('zero_size', 0)), data.get('kind', REPLICATIONS))


@dataclass(frozen=True)
class ComparisonReport:
    srs: MethodSummary
    srsq: MethodSummary
    difference: MethodSummary

    @property
    def roles(self) -> Optional[RoleAssignment]:
        return self.srs.roles

    @property
    def contact_increase_pct(self) -> float:
        """Percent more schools contacted under SRSQ than under SRS"""
        base = self.srs.counts['contacted']
        return math.nan if base == 0 else 100.0 * self.difference.counts['contacted'] / base

    @property
    def variance_share_of_mse_reduction(self) -> float:
        """Share of the auxiliary-variable MSE change that comes from the variance change"""
        aux = self.difference.metrics['auxiliary']
        return math.nan if aux.mse == 0 else aux.variance / aux.mse

    def to_dict(self) -> Dict[str, Any]:
        return {
            'roles': self.roles.to_dict() if self.roles is not None else None,
            'SRS': self.srs.to_dict(),
            'SRSQ': self.srsq.to_dict(),
            DIFFERENCE: self.difference.to_dict(),
            'contact_increase_pct': _json_num(self.contact_increase_pct),
            'variance_share_of_mse_reduction': _json_num(self.variance_share_of_mse_reduction),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ComparisonReport':
        return cls(MethodSummary.from_dict(data['SRS']), MethodSummary.from_dict(data['SRSQ']),
                   MethodSummary.from_dict(data[DIFFERENCE]))


def _num(value) -> float:
    return math.nan if value is None else float(value)


def _json_num(value: float) -> Optional[float]:
    return None if value is None or math.isnan(value) else value


def summarize(outcomes: Sequence[ReplicationOutcome], roles: RoleAssignment) -> MethodSummary:
    """Bias, variance and MSE of the sample means per role, plus mean stage counts"""
    if not outcomes:
        raise NoReplications("no replication outcomes to summarize")
    methods = {o.method for o in outcomes}
    if len(methods) != 1:
        raise MetricsError(f"outcomes mix methods {sorted(methods)}")
    method = methods.pop()

    # fixed order so the floating-point sums do not depend on arrival order
    ordered = sorted(outcomes, key=lambda o: o.replication_index)
    sized = [o for o in ordered if o.achieved > 0]
    zero_size = len(ordered) - len(sized)
    if zero_size:
        logger.warning(f"{method}: {zero_size} of {len(ordered)} replications recruited no schools")

    metrics: Dict[str, RoleMetrics] = {}
    for role in ROLES:
        tag = roles.variable_for(role)
        if not sized:
            metrics[role] = RoleMetrics(math.nan, math.nan, math.nan, math.nan)
            continue
        m = np.array([o.sample_means[tag] for o in sized])
        bias = float(m.mean())
        variance = float(((m - bias) ** 2).mean())
        mse = float((m ** 2).mean())
        metrics[role] = RoleMetrics(bias, abs(bias), variance, mse)

    stage = np.array([[o.counts.to_dict()[name] for name in COUNT_FIELDS] for o in ordered], dtype=float)
    counts = {name: float(v) for name, v in zip(COUNT_FIELDS, stage.mean(axis=0))}
    achieved = float(np.mean([o.achieved for o in ordered]))
    return MethodSummary(method, roles, metrics, counts, achieved, len(ordered), zero_size)


def compare(srs: MethodSummary, srsq: MethodSummary) -> ComparisonReport:
    """Field-wise SRSQ - SRS"""
    if srs.roles != srsq.roles:
        raise IncomparableSummaries(f"role assignments differ: {srs.roles} vs {srsq.roles}")
    if srs.replications != srsq.replications:
        raise IncomparableSummaries(f"replication counts differ: {srs.replications} vs {srsq.replications}")
    if srs.kind != srsq.kind:
        raise IncomparableSummaries(f"cannot compare a {srs.kind} summary with a {srsq.kind} summary")
    a, b = srs.flatten(), srsq.flatten()
    difference = MethodSummary.from_flat(DIFFERENCE, srs.roles, {k: b[k] - a[k] for k in a},
                                         srs.replications, srsq.zero_size - srs.zero_size, DIFFERENCES)
    return ComparisonReport(srs, srsq, difference)


def average_summaries(summaries: Sequence[MethodSummary], kind: str = AVERAGED) -> MethodSummary:
    """Unweighted field-wise mean; roles are aligned by role, not by variable"""
    flats = [s.flatten() for s in summaries]
    mean = {k: math.fsum(f[k] for f in flats) / len(flats) for k in flats[0]}
    return MethodSummary.from_flat(summaries[0].method, None, mean,
                                   max(s.replications for s in summaries),
                                   sum(s.zero_size for s in summaries), kind)


def average_over_permutations(reports: Sequence[ComparisonReport], require_all: bool = True) -> ComparisonReport:
    """Simple average of the six per-permutation reports.

    With require_all=False any non-empty set of distinct permutations is
    accepted; the result is then a partial average.
    """
    table = enumerate_role_permutations()
    present = [r.roles for r in reports]
    if len(set(present)) != len(present) or not present:
        raise PermutationSetError(f"each role permutation must appear exactly once, got {[p.code for p in present]}")
    if require_all and set(present) != set(table):
        missing = [p.code for p in table if p not in present]
        raise PermutationSetError(f"expected each of the six role permutations once; "
                                  f"got {len(present)} reports, missing {missing}")
    ordered = sorted(reports, key=lambda r: r.roles.row)
    return ComparisonReport(
        average_summaries([r.srs for r in ordered]),
        average_summaries([r.srsq for r in ordered]),
        average_summaries([r.difference for r in ordered], kind=DIFFERENCES),
    )


@dataclass(frozen=True)
class StabilityRow:
    field: str
    first: float
    second: float

    @property
    def gap(self) -> float:
        return self.second - self.first


@dataclass(frozen=True)
class DiffReport:
    """SRSQ - SRS differences from two runs side by side, with their gap (second - first)"""
    first_label: str
    second_label: str
    rows: Tuple[StabilityRow, ...]

    def row(self, field: str) -> StabilityRow:
        for r in self.rows:
            if r.field == field:
                return r
        raise KeyError(field)

    def max_abs_gap(self, prefix: str = '') -> float:
        gaps = [abs(r.gap) for r in self.rows if r.field.startswith(prefix) and not math.isnan(r.gap)]
        return max(gaps) if gaps else 0.0

    def to_records(self) -> List[Dict[str, Any]]:
        return [{'field': r.field, self.first_label: r.first, self.second_label: r.second, 'gap': r.gap}
                for r in self.rows]


def stability_check(summary_r1: ComparisonReport, summary_r2: ComparisonReport,
                    first_label: Optional[str] = None, second_label: Optional[str] = None) -> DiffReport:
    """Compare the SRSQ - SRS differences of two independent runs"""
    first_label = first_label or f'{summary_r1.srs.replications} samples'
    second_label = second_label or f'{summary_r2.srs.replications} samples'
    if first_label == second_label:
        first_label, second_label = f'{first_label} (1)', f'{second_label} (2)'
    a = summary_r1.difference.flatten()
    b = summary_r2.difference.flatten()
    rows = tuple(StabilityRow(k, a[k], b[k]) for k in a)
    return DiffReport(first_label, second_label, rows)
