"""
Title:        experiment.py
Description:  Runs the full populations x permutations x replications design and
              writes the result artifacts.
Date:         2026-10-18
Version:      1.0.0
License:      MIT

Work is cut into blocks of replications. Every replication draws from its own
keyed stream and results are merged by (population, permutation, replication),
so the artifacts do not depend on the number of workers.
"""

from typing import Optional, Dict, Any, List, Tuple
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
import logging
import os

from tqdm import tqdm

from scripts.srsq_backend import ExperimentConfig, ConfigError, DesignError
from scripts.population import (
    PopulationFrame, Partition, SkippedPopulation, load_population, generate_synthetic, partition_by_group,
)
from scripts.design import SamplingDesign, build_design, role_permutation
from scripts.recruitment import ReplicationOutcome, run_replication, trace_record
from scripts.metrics import ComparisonReport, summarize, compare, average_over_permutations
from scripts.srsq_utils import OutputUtils, PathUtils, AVERAGED_LABEL, log_simulation_operation

logger = logging.getLogger(__name__)

BLOCK_SIZE = 100


def run_replication_block(design: SamplingDesign, start: int, stop: int,
                          master_seed: int) -> List[Tuple[ReplicationOutcome, ReplicationOutcome]]:
    """Paired outcomes for replications start..stop-1; module level so worker processes can unpickle it"""
    return [run_replication(None, design, i, master_seed) for i in range(start, stop)]


@dataclass
class PopulationResult:
    name: str
    n: int
    feasible: bool
    feasibility_threshold: float
    reports: Dict[int, ComparisonReport] = field(default_factory=dict)
    designs: Dict[int, Dict[str, Any]] = field(default_factory=dict)
    averaged: Optional[ComparisonReport] = None

    def to_dict(self) -> Dict[str, Any]:
        return {'population': self.name, 'N': self.n, 'feasible': self.feasible,
                'feasibility_threshold': self.feasibility_threshold,
                'permutations': sorted(self.reports)}


@dataclass
class SimulationResults:
    config: ExperimentConfig
    populations: List[PopulationResult]
    skipped: List[SkippedPopulation]
    traces: List[Dict[str, Any]] = field(default_factory=list)

    def population(self, name: str) -> PopulationResult:
        for p in self.populations:
            if p.name == name:
                return p
        raise KeyError(name)


class SimulationRunner:
    """Orchestrates one experiment described by an ExperimentConfig"""

    def __init__(self, config: ExperimentConfig, progress: bool = False):
        self.config = config
        self.progress = progress

    def load_source(self) -> PopulationFrame:
        """The whole input population, unstandardized"""
        name = self.config.population_name
        path = self.config.csv_path()
        if path is not None:
            logger.info(f"Loading population '{name}' from {path}")
            with open(path, 'rb') as f:
                return load_population(f, name)
        spec = self.config.synthetic_spec()
        if spec is None:
            raise ConfigError("population needs either 'csv' or 'synthetic'")
        logger.info(f"Generating synthetic population '{name}' ({spec.n_schools} schools, seed {spec.seed})")
        frame = generate_synthetic(spec)
        return PopulationFrame(name, frame.table)

    def populations(self, source: Optional[PopulationFrame] = None) -> Partition:
        """Standardized populations to simulate, after the group and size filters"""
        source = source if source is not None else self.load_source()
        partition = partition_by_group(source)
        config = self.config
        kept: List[PopulationFrame] = []
        skipped = list(partition.skipped)
        for frame in partition:
            national = frame.name == source.name
            if national and not config.include_national:
                skipped.append(SkippedPopulation(frame.name, len(frame), "national population excluded by config"))
                continue
            if not national and config.groups is not None and not self._selected(frame):
                skipped.append(SkippedPopulation(frame.name, len(frame), "group not selected by config"))
                continue
            if config.min_population_size is not None and len(frame) < config.min_population_size:
                skipped.append(SkippedPopulation(
                    frame.name, len(frame), f"fewer than min_population_size={config.min_population_size} schools"))
                continue
            kept.append(frame)
        logger.debug(f"Populations kept: {[f.name for f in kept]}; skipped: {[s.name for s in skipped]}")
        return Partition(kept, skipped)

    def _selected(self, frame: PopulationFrame) -> bool:
        """A group matches the config by its reported name or by its group_id in the input"""
        groups = self.config.groups or ()
        original = str(frame.table['group_id'].iloc[0]) if len(frame) else frame.name
        return frame.name in groups or original in groups

    def build_designs(self, partition: Partition) -> Tuple[Partition, List[Tuple[int, int, SamplingDesign]]]:
        """(population position, permutation row, design) for every cell.

        A population the design cannot be built for (too few schools for the
        strata or quota bins) moves to the skip log; the returned partition
        holds the populations that have cells.
        """
        config = self.config
        kept: List[PopulationFrame] = []
        skipped = list(partition.skipped)
        cells = []
        for frame in partition:
            try:
                designs = [(row, build_design(frame, role_permutation(row), config.n_target, config.k_strata,
                                              config.k_bins, config.p_low, config.p_high))
                           for row in sorted(config.permutations)]
            except DesignError as e:
                logger.warning(f"Skipping population '{frame.name}' ({len(frame)} schools): {e}")
                skipped.append(SkippedPopulation(frame.name, len(frame), str(e)))
                continue
            p = len(kept)
            kept.append(frame)
            cells.extend((p, row, design) for row, design in designs)
            last = designs[-1][1]
            if not last.feasible:
                logger.warning(f"Population '{frame.name}' has {len(frame)} schools, below the feasibility "
                               f"threshold of {last.feasibility_threshold:.1f}; results are flagged")
        return Partition(kept, skipped), cells

    def run(self, source: Optional[PopulationFrame] = None) -> SimulationResults:
        config = self.config
        partition, cells = self.build_designs(self.populations(source))

        results = [PopulationResult(f.name, len(f), True, 0.0) for f in partition]
        for p, row, design in cells:
            results[p].feasible = design.feasible
            results[p].feasibility_threshold = design.feasibility_threshold
            results[p].designs[row] = design.summary()

        tasks = []
        for c, (_, _, design) in enumerate(cells):
            for start in range(0, config.replications, BLOCK_SIZE):
                tasks.append((c, start, min(start + BLOCK_SIZE, config.replications)))

        buckets: Dict[int, List[Tuple[ReplicationOutcome, ReplicationOutcome]]] = {c: [] for c in range(len(cells))}
        traces: Dict[Tuple[int, int], List[Dict[str, Any]]] = {}

        def collect(c: int, pairs: List[Tuple[ReplicationOutcome, ReplicationOutcome]]) -> None:
            buckets[c].extend(pairs)
            if len(buckets[c]) < config.replications:
                return
            p, row, design = cells[c]
            done = buckets.pop(c)
            if config.trace:
                traces[(p, row)] = [trace_record(o, design.population, design.roles)
                                    for pair in sorted(done, key=lambda x: x[0].replication_index) for o in pair]
            report = compare(summarize([s for s, _ in done], design.roles),
                             summarize([q for _, q in done], design.roles))
            results[p].reports[row] = report
            log_simulation_operation(f"{design.population} [{design.roles.code}]", "done",
                                     f"SRS aux bias {report.srs.metrics['auxiliary'].bias_abs:.4f}, "
                                     f"SRSQ aux bias {report.srsq.metrics['auxiliary'].bias_abs:.4f}")

        bar = tqdm(total=len(tasks), desc="Replication blocks", disable=not self.progress)
        try:
            if config.jobs <= 1:
                for c, start, stop in tasks:
                    collect(c, run_replication_block(cells[c][2], start, stop, config.master_seed))
                    bar.update(1)
            else:
                with ProcessPoolExecutor(max_workers=config.jobs) as executor:
                    futures = {executor.submit(run_replication_block, cells[c][2], start, stop,
                                               config.master_seed): c
                               for c, start, stop in tasks}
                    for future in as_completed(futures):
                        collect(futures[future], future.result())
                        bar.update(1)
        finally:
            bar.close()

        for result in results:
            reports = [result.reports[row] for row in sorted(result.reports)]
            if not reports:
                continue
            complete = len(reports) == 6
            if not complete:
                logger.warning(f"Population '{result.name}': averaging over {len(reports)} of 6 role permutations")
            result.averaged = average_over_permutations(reports, require_all=complete)

        ordered_traces = [t for key in sorted(traces) for t in traces[key]]
        return SimulationResults(config, results, partition.skipped, ordered_traces)


def population_directories(names: List[str]) -> Dict[str, str]:
    """Distinct directory names; names that slug to the same string get a numeric suffix"""
    directories: Dict[str, str] = {}
    used = set()
    for name in names:
        base = candidate = PathUtils.slug(name)
        suffix = 2
        while candidate in used:
            candidate = f'{base}_{suffix}'
            suffix += 1
        used.add(candidate)
        directories[name] = candidate
    return directories


def write_results(results: SimulationResults, output_dir: str) -> None:
    """Write reports, metrics.csv, populations.json, skipped.json and the optional trace"""
    rows: List[Dict[str, Any]] = []
    directories = population_directories([r.name for r in results.populations])
    for result in results.populations:
        pop_dir = directories[result.name]
        for row in sorted(result.reports):
            report = result.reports[row]
            perm_dir = PathUtils.permutation_dir(row, report.roles.code)
            OutputUtils.write_json(os.path.join(output_dir, pop_dir, perm_dir, 'report.json'),
                                   {'population': result.name, 'N': result.n, 'permutation': row,
                                    'feasible': result.feasible, 'design': result.designs[row],
                                    'report': report.to_dict()})
            rows.extend(OutputUtils.metric_rows(result.name, result.n, str(row), report, result.feasible))
        if result.averaged is not None:
            OutputUtils.write_json(os.path.join(output_dir, pop_dir, 'averaged.json'),
                                   {'population': result.name, 'N': result.n, 'feasible': result.feasible,
                                    'permutations': sorted(result.reports),
                                    'report': result.averaged.to_dict()})
            rows.extend(OutputUtils.metric_rows(result.name, result.n, AVERAGED_LABEL, result.averaged,
                                                result.feasible))

    OutputUtils.write_json(os.path.join(output_dir, 'populations.json'),
                           [dict(r.to_dict(), directory=directories[r.name]) for r in results.populations])
    OutputUtils.write_json(os.path.join(output_dir, 'skipped.json'), [s.to_dict() for s in results.skipped])
    OutputUtils.write_json(os.path.join(output_dir, 'config.json'), results.config.to_dict())
    if results.config.trace:
        OutputUtils.write_text(os.path.join(output_dir, 'trace.jsonl'),
                               ''.join(OutputUtils.dumps_line(t) for t in results.traces))
    OutputUtils.write_csv(os.path.join(output_dir, 'metrics.csv'), OutputUtils.metrics_frame(rows))
    logger.info(f"Wrote {len(rows)} metric rows for {len(results.populations)} populations to {output_dir}")
