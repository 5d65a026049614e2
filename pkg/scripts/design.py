"""
Title:        design.py
Description:  Strata, quota bins, proportional targets and the six variable-role
              permutations that make up a sampling design.
Date:         2026-10-18
Version:      1.0.0
License:      MIT
"""

from typing import Optional, Dict, List, Tuple, Sequence, FrozenSet
from dataclasses import dataclass
from functools import lru_cache, cached_property
import logging

import numpy as np

from scripts.srsq_backend import (
    DesignError, InvalidBinCount, InvalidTarget, PopulationError, UnknownSchool, validate_input,
)
from scripts.population import PopulationFrame, VARIABLES

logger = logging.getLogger(__name__)

ROLES = ('auxiliary', 'stratifier', 'unobserved')

VARIABLE_LABELS = {
    'a': 'total enrollment',
    'b': 'expenditures per pupil',
    'c': 'percent FRPL',
}


@dataclass(frozen=True)
class RoleAssignment:
    """Which variable stratifies, which sets quotas, and which is left unobserved"""
    stratifier: str
    auxiliary: str
    unobserved: str

    def __post_init__(self):
        if sorted((self.stratifier, self.auxiliary, self.unobserved)) != list(VARIABLES):
            raise DesignError(f"roles must be a permutation of {VARIABLES}, got "
                              f"{(self.stratifier, self.auxiliary, self.unobserved)}")

    def variable_for(self, role: str) -> str:
        if role not in ROLES:
            raise DesignError(f"unknown role {role!r}")
        return getattr(self, role)

    @property
    def code(self) -> str:
        """Stable key, stratifier-auxiliary-unobserved, e.g. 'c-a-b'"""
        return f'{self.stratifier}-{self.auxiliary}-{self.unobserved}'

    @property
    def row(self) -> int:
        """Position of this assignment in the simulation design table (1..6)"""
        return enumerate_role_permutations().index(self) + 1

    def describe(self) -> str:
        return (f"strata: {VARIABLE_LABELS[self.stratifier]}; quotas: {VARIABLE_LABELS[self.auxiliary]}; "
                f"unobserved: {VARIABLE_LABELS[self.unobserved]}")

    def to_dict(self) -> Dict[str, str]:
        return {'stratifier': self.stratifier, 'auxiliary': self.auxiliary, 'unobserved': self.unobserved}

    @classmethod
    def from_dict(cls, data: Dict[str, str]) -> 'RoleAssignment':
        return cls(data['stratifier'], data['auxiliary'], data['unobserved'])


@lru_cache(maxsize=1)
def _role_table() -> Tuple[RoleAssignment, ...]:
    # stratifier major (FRPL, enrollment, expenditure), auxiliary minor
    return (
        RoleAssignment('c', 'a', 'b'),
        RoleAssignment('c', 'b', 'a'),
        RoleAssignment('a', 'c', 'b'),
        RoleAssignment('a', 'b', 'c'),
        RoleAssignment('b', 'c', 'a'),
        RoleAssignment('b', 'a', 'c'),
    )


def enumerate_role_permutations() -> List[RoleAssignment]:
    """The six ways of assigning the three variables to the three roles"""
    return list(_role_table())


def role_permutation(row: int) -> RoleAssignment:
    """Role assignment for design table row 1..6"""
    if not 1 <= row <= 6:
        raise DesignError(f"permutation row must be 1..6, got {row}")
    return _role_table()[row - 1]


@dataclass(frozen=True)
class BinRule:
    """Value thresholds splitting a variable into k half-open bins.

    A value v falls in bin j (0-based) when exactly j cut points are <= v.
    Mass points can repeat a cut point; the bins between equal cuts are
    empty and keep a zero population count.
    """
    cut_points: Tuple[float, ...]
    population_counts: Tuple[int, ...]

    @property
    def k(self) -> int:
        return len(self.population_counts)

    @property
    def distinct_cut_points(self) -> Tuple[float, ...]:
        return tuple(sorted(set(self.cut_points)))

    @property
    def collapsed(self) -> int:
        """Number of bins emptied by repeated cut points"""
        return self.k - 1 - len(self.distinct_cut_points)

    def assign(self, values) -> np.ndarray:
        return np.searchsorted(np.asarray(self.cut_points, dtype=float),
                               np.asarray(values, dtype=float), side='right')

    def bin_of(self, value: float) -> int:
        return int(self.assign([value])[0])

    def to_dict(self) -> Dict[str, list]:
        return {'cut_points': list(self.cut_points), 'population_counts': list(self.population_counts)}


def _check_quantile_args(values, k: int) -> None:
    if len(values) == 0:
        raise InvalidBinCount("cannot bin an empty list of values")
    if k < 1:
        raise InvalidBinCount(f"number of bins must be at least 1, got {k}")
    if k > len(values):
        raise InvalidBinCount(f"{k} bins requested for {len(values)} values")


@validate_input(_check_quantile_args)
def quantile_bins(values: Sequence[float], k: int) -> BinRule:
    """Quantile thresholds: cut j is the value at zero-based sorted position ceil(N*j/k)"""
    x = np.sort(np.asarray(values, dtype=float))
    n = len(x)
    positions = [-(-n * j // k) for j in range(1, k)]
    cuts = tuple(float(x[p]) for p in positions)
    rule = BinRule(cuts, tuple(int(c) for c in np.bincount(
        np.searchsorted(np.asarray(cuts), x, side='right'), minlength=k)))
    if rule.collapsed:
        logger.debug(f"{rule.collapsed} of {k} bins collapsed by mass points (counts {rule.population_counts})")
    return rule


def _check_targets_args(counts, n_target: int) -> None:
    if n_target <= 0:
        raise InvalidTarget(f"sample size target must be positive, got {n_target}")
    if any(c < 0 for c in counts):
        raise DesignError("cell counts must be non-negative")
    if sum(counts) <= 0:
        raise DesignError("cell counts must have a positive total")


@validate_input(_check_targets_args)
def proportional_targets(counts: Sequence[int], n_target: int) -> Tuple[int, ...]:
    """Largest-remainder apportionment of n_target across cells, ties to the lower index"""
    counts = [int(c) for c in counts]
    total = sum(counts)
    shares = [divmod(c * n_target, total) for c in counts]
    targets = [q for q, _ in shares]
    extra = n_target - sum(targets)
    by_remainder = sorted(range(len(counts)), key=lambda i: (-shares[i][1], i))
    for i in by_remainder[:extra]:
        targets[i] += 1
    return tuple(targets)


@dataclass(frozen=True, eq=False)
class SamplingDesign:
    """Everything a recruitment walk needs about one population and one role assignment.

    Per-school arrays are aligned with the frame's row order.
    """
    population: str
    roles: RoleAssignment
    n_target: int
    ids: np.ndarray
    strata_rule: BinRule
    stratum_index: np.ndarray
    stratum_targets: Tuple[int, ...]
    quota_rule: BinRule
    bin_index: np.ndarray
    quota_caps: Tuple[int, ...]
    p_low: float
    p_high: float
    willing: np.ndarray
    z_values: np.ndarray

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def k_strata(self) -> int:
        return self.strata_rule.k

    @property
    def stratum_sizes(self) -> Tuple[int, ...]:
        return self.strata_rule.population_counts

    @cached_property
    def index(self) -> Dict[str, int]:
        return {school_id: i for i, school_id in enumerate(self.ids.tolist())}

    @cached_property
    def probabilities(self) -> np.ndarray:
        return np.where(self.willing, self.p_low, self.p_high)

    @cached_property
    def walk_tables(self) -> Tuple[List[int], List[int], List[float]]:
        """Plain-list copies of stratum, bin and probability for the Python recruitment loop"""
        return self.stratum_index.tolist(), self.bin_index.tolist(), self.probabilities.tolist()

    @property
    def willing_split(self) -> FrozenSet[str]:
        """Ids of the bottom-half schools on the auxiliary variable"""
        return frozenset(self.ids[self.willing].tolist())

    def position(self, school_id: str) -> int:
        try:
            return self.index[school_id]
        except KeyError:
            raise UnknownSchool(f"school {school_id!r} is not in population '{self.population}'")

    def stratum_of(self, school_id: str) -> int:
        return int(self.stratum_index[self.position(school_id)])

    def bin_of(self, school_id: str) -> int:
        return int(self.bin_index[self.position(school_id)])

    @property
    def mean_agreement_probability(self) -> float:
        return float(self.probabilities.mean())

    @property
    def feasibility_threshold(self) -> float:
        """Population size below which reaching n_target is implausible"""
        p = self.mean_agreement_probability
        return float('inf') if p == 0 else self.n_target / p

    @property
    def feasible(self) -> bool:
        return self.n >= self.feasibility_threshold

    def summary(self) -> Dict[str, object]:
        return {
            'population': self.population,
            'N': self.n,
            'roles': self.roles.to_dict(),
            'n_target': self.n_target,
            'strata': self.strata_rule.to_dict(),
            'stratum_targets': list(self.stratum_targets),
            'quota_rule': self.quota_rule.to_dict(),
            'quota_caps': list(self.quota_caps),
            'p_low': self.p_low,
            'p_high': self.p_high,
            'feasibility_threshold': self.feasibility_threshold,
            'feasible': self.feasible,
        }


def build_design(frame: PopulationFrame, roles: RoleAssignment, n_target: int = 100,
                 k_strata: int = 5, k_bins: int = 5, p_low: float = 0.5,
                 p_high: float = 0.25) -> SamplingDesign:
    """Strata on the stratifier, quota bins on the auxiliary variable, bottom-half willingness split"""
    if not frame.standardized:
        raise PopulationError(f"population '{frame.name}' must be standardized before building a design")
    for label, p in (('p_low', p_low), ('p_high', p_high)):
        if not 0.0 <= p <= 1.0:
            raise DesignError(f"{label} must lie in [0, 1], got {p}")

    strat = frame.z(roles.stratifier)
    aux = frame.z(roles.auxiliary)

    strata_rule = quantile_bins(strat, k_strata)
    stratum_targets = proportional_targets(strata_rule.population_counts, n_target)
    quota_rule = quantile_bins(aux, k_bins)
    quota_caps = proportional_targets(quota_rule.population_counts, n_target)

    ids = frame.ids.astype(str)
    n = len(ids)
    order = np.lexsort((ids, aux))
    willing = np.zeros(n, dtype=bool)
    willing[order[:n // 2]] = True

    design = SamplingDesign(
        population=frame.name,
        roles=roles,
        n_target=n_target,
        ids=ids,
        strata_rule=strata_rule,
        stratum_index=strata_rule.assign(strat),
        stratum_targets=stratum_targets,
        quota_rule=quota_rule,
        bin_index=quota_rule.assign(aux),
        quota_caps=quota_caps,
        p_low=float(p_low),
        p_high=float(p_high),
        willing=willing,
        z_values=frame.z_matrix(),
    )
    logger.debug(f"Design for '{frame.name}' [{roles.code}]: targets {stratum_targets}, caps {quota_caps}")
    return design
