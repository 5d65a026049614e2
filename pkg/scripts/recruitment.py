"""
Title:        recruitment.py
Description:  One paired SRS / SRSQ recruitment replication: random ordering,
              sequential contact, agreement draws, quota enforcement and
              stage-count accounting.
Date:         2026-10-18
Version:      1.0.0
License:      MIT

Both methods walk the same roster with the same per-school agreement draws
(common random numbers). A school in a stratum that is already full is passed
over without being contacted. Under SRSQ the quota bin is checked after
contact and before invitation; an excluded school's draw goes unused.
"""

from typing import Optional, Dict, Any, List, Tuple
from dataclasses import dataclass
from functools import cached_property
import hashlib
import logging
import math

import numpy as np

from scripts.srsq_backend import RecruitmentError
from scripts.population import PopulationFrame, VARIABLES
from scripts.design import SamplingDesign, RoleAssignment

logger = logging.getLogger(__name__)

SRS = 'SRS'
SRSQ = 'SRSQ'


@dataclass(frozen=True, eq=False)
class OrderedRoster:
    """Recruitment order for one replication.

    `order` lists frame row positions in contact order; `stratum` and `rank`
    run parallel to it. `draws` holds one uniform agreement draw per school,
    indexed by frame row position.
    """
    order: np.ndarray
    stratum: np.ndarray
    rank: np.ndarray
    draws: np.ndarray

    def __len__(self) -> int:
        return len(self.order)

    @cached_property
    def order_list(self) -> List[int]:
        return self.order.tolist()

    @cached_property
    def draw_list(self) -> List[float]:
        return self.draws.tolist()

    def entries(self, ids: np.ndarray) -> List[Tuple[str, int, int]]:
        """(school_id, stratum index, within-stratum rank) in contact order"""
        return list(zip(ids[self.order].tolist(), self.stratum.tolist(), self.rank.tolist()))


@dataclass(frozen=True)
class StageCounts:
    contacted: int = 0
    excluded_by_quota: int = 0
    invited: int = 0
    declined: int = 0
    agreed: int = 0

    def __post_init__(self):
        if self.contacted != self.excluded_by_quota + self.invited or self.invited != self.declined + self.agreed:
            raise RecruitmentError(f"stage counts do not add up: {self}")

    def to_dict(self) -> Dict[str, int]:
        return {
            'contacted': self.contacted,
            'excluded': self.excluded_by_quota,
            'invited': self.invited,
            'declined': self.declined,
            'agreed': self.agreed,
        }


@dataclass(frozen=True)
class ReplicationOutcome:
    """Result of one recruitment walk under one method"""
    method: str
    replication_index: int
    accepted_ids: Tuple[str, ...]
    stratum_fill: Tuple[int, ...]
    bin_fill: Tuple[int, ...]
    stratum_contacted: Tuple[int, ...]
    counts: StageCounts
    sample_means: Dict[str, float]

    @property
    def achieved(self) -> int:
        return len(self.accepted_ids)

    def key(self) -> Tuple[Any, ...]:
        """Everything except the method tag, for field-by-field comparisons between methods"""
        return (self.replication_index, self.accepted_ids, self.stratum_fill, self.bin_fill,
                self.stratum_contacted, self.counts,
                tuple(self.sample_means[tag] for tag in VARIABLES))


def recruitment_order(design: SamplingDesign, frame: Optional[PopulationFrame],
                      rng: np.random.Generator) -> OrderedRoster:
    """Shuffle within strata, pool by within-stratum rank, shuffle within rank, draw willingness"""
    if frame is not None and len(frame) != design.n:
        raise RecruitmentError(f"design for '{design.population}' has {design.n} schools, frame has {len(frame)}")
    n = design.n
    stratum = design.stratum_index

    within = rng.random(n)
    by_stratum = np.lexsort((within, stratum))
    sizes = np.bincount(stratum, minlength=design.k_strata)
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    rank = np.empty(n, dtype=np.int64)
    rank[by_stratum] = np.arange(n) - np.repeat(starts, sizes) + 1

    across = rng.random(n)
    order = np.lexsort((across, rank))
    draws = rng.random(n)
    return OrderedRoster(order=order, stratum=stratum[order], rank=rank[order], draws=draws)


def agreement_probability(school_id: str, design: SamplingDesign) -> float:
    """p_low for the bottom half on the auxiliary variable, p_high otherwise"""
    return float(design.probabilities[design.position(school_id)])


def run_srs(roster: OrderedRoster, design: SamplingDesign, replication_index: int = 0) -> ReplicationOutcome:
    return _walk(roster, design, SRS, replication_index)


def run_srsq(roster: OrderedRoster, design: SamplingDesign, replication_index: int = 0) -> ReplicationOutcome:
    return _walk(roster, design, SRSQ, replication_index)


def _walk(roster: OrderedRoster, design: SamplingDesign, method: str, replication_index: int) -> ReplicationOutcome:
    stratum_of, bin_of, probability = design.walk_tables
    draws = roster.draw_list
    targets = design.stratum_targets
    caps = design.quota_caps
    use_quotas = method == SRSQ

    fill = [0] * len(targets)
    bin_fill = [0] * len(caps)
    contacted_in = [0] * len(targets)
    open_strata = sum(1 for t in targets if t > 0)
    contacted = excluded = declined = 0
    accepted: List[int] = []

    for i in roster.order_list:
        if open_strata == 0:
            break
        s = stratum_of[i]
        if fill[s] >= targets[s]:
            continue
        contacted += 1
        contacted_in[s] += 1
        b = bin_of[i]
        if use_quotas and bin_fill[b] >= caps[b]:
            excluded += 1
            continue
        if draws[i] < probability[i]:
            accepted.append(i)
            fill[s] += 1
            bin_fill[b] += 1
            if fill[s] == targets[s]:
                open_strata -= 1
        else:
            declined += 1

    agreed = len(accepted)
    counts = StageCounts(contacted=contacted, excluded_by_quota=excluded,
                         invited=contacted - excluded, declined=declined, agreed=agreed)
    if use_quotas and any(f > c for f, c in zip(bin_fill, caps)):
        raise RecruitmentError(f"quota exceeded: fill {bin_fill}, caps {caps}")

    if accepted:
        means = design.z_values[accepted].mean(axis=0)
        sample_means = {tag: float(means[j]) for j, tag in enumerate(VARIABLES)}
    else:
        sample_means = {tag: math.nan for tag in VARIABLES}

    return ReplicationOutcome(
        method=method,
        replication_index=replication_index,
        accepted_ids=tuple(design.ids[accepted].tolist()),
        stratum_fill=tuple(fill),
        bin_fill=tuple(bin_fill),
        stratum_contacted=tuple(contacted_in),
        counts=counts,
        sample_means=sample_means,
    )


def _name_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode('utf-8')).digest()[:8], 'little')


def replication_stream(master_seed: int, population: str, roles: RoleAssignment,
                       replication_index: int) -> np.random.Generator:
    """Independent counter-based stream keyed by (seed, population, permutation, replication)"""
    seq = np.random.SeedSequence(entropy=master_seed,
                                 spawn_key=(_name_key(population), roles.row, replication_index))
    return np.random.Generator(np.random.Philox(seq))


def run_replication(frame: Optional[PopulationFrame], design: SamplingDesign, replication_index: int,
                    master_seed: int) -> Tuple[ReplicationOutcome, ReplicationOutcome]:
    """Build one roster and run both methods on it"""
    rng = replication_stream(master_seed, design.population, design.roles, replication_index)
    roster = recruitment_order(design, frame, rng)
    return run_srs(roster, design, replication_index), run_srsq(roster, design, replication_index)


def trace_record(outcome: ReplicationOutcome, population: str, roles: RoleAssignment) -> Dict[str, Any]:
    """One JSON-lines trace entry"""
    return {
        'population': population,
        'permutation': roles.row,
        'roles': roles.code,
        'replication': outcome.replication_index,
        'method': outcome.method,
        'counts': outcome.counts.to_dict(),
        'achieved_n': outcome.achieved,
        'sample_means': {tag: (None if math.isnan(v) else v) for tag, v in outcome.sample_means.items()},
    }
