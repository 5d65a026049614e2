"""
Title:        srsq_backend.py
Description:  Errors, input schemas and configuration objects shared by the
              SRS / SRSQ recruitment simulation.
Date:         2026-10-18
Version:      1.0.0
License:      MIT

Everything the rest of the package validates goes through the schemas here;
schema failures surface as ConfigError so callers only ever deal with the
SamplingError family.
"""

from typing import Optional, Dict, Any, List, Tuple
from dataclasses import dataclass, field, replace
from functools import wraps
import json
import logging
import os

import yaml
from dotenv import load_dotenv
from schema import Schema, Or, And, Use, Optional as SchemaOptional, SchemaError

logger = logging.getLogger(__name__)

# .env lives in the repository root, one level above scripts/
load_dotenv(os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), '.env'))


class SamplingError(Exception):
    """Base exception for the recruitment simulation"""
    pass

class PopulationError(SamplingError):
    """Raised for problems with a population frame"""
    pass

class DuplicateId(PopulationError):
    """Raised when a school_id occurs twice in one frame"""
    pass

class ParseError(PopulationError):
    """Raised when a population table cannot be parsed"""

    def __init__(self, message: str, row: Optional[int] = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row

class EmptyPopulation(PopulationError):
    """Raised when a population has no schools"""
    pass

class DegenerateVariable(PopulationError):
    """Raised when a variable has zero population variance"""

    def __init__(self, variable: str, population: str = ""):
        where = f" in population '{population}'" if population else ""
        super().__init__(f"variable {variable} has zero variance{where}")
        self.variable = variable
        self.population = population

class InvalidCorrelation(PopulationError):
    """Raised when a synthetic correlation matrix is not a valid correlation matrix"""
    pass

class DesignError(SamplingError):
    """Raised when a sampling design cannot be built"""
    pass

class InvalidBinCount(DesignError):
    """Raised when more bins are requested than there are values"""
    pass

class InvalidTarget(DesignError):
    """Raised for a non-positive sample size target"""
    pass

class RecruitmentError(SamplingError):
    """Raised during a recruitment walk"""
    pass

class UnknownSchool(RecruitmentError):
    """Raised when a school_id is not part of the design"""
    pass

class MetricsError(SamplingError):
    """Raised while aggregating replication outcomes"""
    pass

class NoReplications(MetricsError):
    """Raised when there is nothing to summarize"""
    pass

class IncomparableSummaries(MetricsError):
    """Raised when two summaries cannot be compared"""
    pass

class PermutationSetError(MetricsError):
    """Raised when the six role permutations are not all present exactly once"""
    pass

class ConfigError(SamplingError):
    """Raised when a config or spec document fails validation"""
    pass


def validate_input(validator):
    """Decorator running `validator` on the call arguments before the function.

    The validator raises a SamplingError subclass; it is logged and passed on
    unchanged. Anything else is a bug in the validator and is wrapped as
    ConfigError.
    """
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            try:
                validator(*args, **kwargs)
            except SamplingError as e:
                logger.debug(f"Validation error in {func.__name__}: {e}")
                raise
            except Exception as e:
                logger.debug(f"Validation error in {func.__name__}: {e}")
                raise ConfigError(str(e)) from e
            return func(*args, **kwargs)
        return wrapper
    return decorator


# Schemas -------------------------------------------------------------------

MARGINALS = ('normal', 'lognormal', 'bounded-percent')

_number = Or(int, float)
_probability = And(_number, lambda p: 0.0 <= p <= 1.0, error="probabilities must lie in [0, 1]")
_positive_int = And(int, lambda n: n > 0, error="expected a positive integer")

SYNTHETIC_SPEC_SCHEMA = Schema({
    'n_schools': _positive_int,
    'correlation': And([[_number]], lambda m: len(m) == 3 and all(len(r) == 3 for r in m),
                       error="correlation must be a 3x3 matrix"),
    SchemaOptional('marginals', default=['normal', 'normal', 'normal']):
        And([And(str, lambda s: s in MARGINALS)], lambda m: len(m) == 3,
            error=f"marginals must list three of {MARGINALS}"),
    'seed': And(int, lambda s: 0 <= s < 2 ** 64, error="seed must be a 64-bit non-negative integer"),
    SchemaOptional('group_sizes', default=None): Or(None, {str: _positive_int}),
    SchemaOptional('name', default='synthetic'): And(str, len),
})

POPULATION_SCHEMA = Or(
    {'csv': And(str, len), SchemaOptional('name', default='national'): And(str, len)},
    {'synthetic': Or(And(str, len), dict), SchemaOptional('name', default='national'): And(str, len)},
)

CONFIG_SCHEMA = Schema({
    'population': POPULATION_SCHEMA,
    SchemaOptional('n_target', default=100): _positive_int,
    SchemaOptional('k_strata', default=5): _positive_int,
    SchemaOptional('k_bins', default=5): _positive_int,
    SchemaOptional('p_low', default=0.5): _probability,
    SchemaOptional('p_high', default=0.25): _probability,
    SchemaOptional('replications', default=1000): _positive_int,
    SchemaOptional('master_seed', default=0): And(int, lambda s: s >= 0, error="master_seed must be non-negative"),
    SchemaOptional('groups', default=None): Or(None, [And(Use(str), len)]),
    SchemaOptional('min_population_size', default=None): Or(None, And(int, lambda n: n >= 0)),
    SchemaOptional('include_national', default=True): bool,
    SchemaOptional('permutations', default=[1, 2, 3, 4, 5, 6]):
        And([And(int, lambda i: 1 <= i <= 6)], lambda p: len(p) == len(set(p)) and len(p) > 0,
            error="permutations must be distinct role permutation rows 1..6"),
    SchemaOptional('output_dir', default=None): Or(None, And(str, len)),
    SchemaOptional('trace', default=False): bool,
    SchemaOptional('jobs', default=None): Or(None, _positive_int),
})


def read_document(path: str) -> Dict[str, Any]:
    """Read a JSON (or YAML) document into a dict"""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a JSON object")
    return data


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic population"""
    n_schools: int
    correlation: Tuple[Tuple[float, ...], ...]
    marginals: Tuple[str, str, str] = ('normal', 'normal', 'normal')
    seed: int = 0
    group_sizes: Optional[Tuple[Tuple[str, int], ...]] = None
    name: str = 'synthetic'

    @classmethod
    def from_dict(cls, inp: Dict[str, Any]) -> 'SyntheticSpec':
        try:
            data = SYNTHETIC_SPEC_SCHEMA.validate(dict(inp))
        except SchemaError as e:
            raise ConfigError(str(e))
        groups = data['group_sizes']
        if groups is not None and sum(groups.values()) != data['n_schools']:
            raise ConfigError("group_sizes must sum to n_schools")
        return cls(
            n_schools=data['n_schools'],
            correlation=tuple(tuple(float(x) for x in row) for row in data['correlation']),
            marginals=tuple(data['marginals']),
            seed=data['seed'],
            group_sizes=tuple(groups.items()) if groups is not None else None,
            name=data['name'],
        )

    @classmethod
    def from_file(cls, path: str) -> 'SyntheticSpec':
        return cls.from_dict(read_document(path))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'n_schools': self.n_schools,
            'correlation': [list(row) for row in self.correlation],
            'marginals': list(self.marginals),
            'seed': self.seed,
            'group_sizes': dict(self.group_sizes) if self.group_sizes is not None else None,
            'name': self.name,
        }


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment configuration; defaults give the national five-by-five design"""
    population: Dict[str, Any]
    n_target: int = 100
    k_strata: int = 5
    k_bins: int = 5
    p_low: float = 0.5
    p_high: float = 0.25
    replications: int = 1000
    master_seed: int = 0
    groups: Optional[Tuple[str, ...]] = None
    min_population_size: Optional[int] = None
    include_national: bool = True
    permutations: Tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    output_dir: str = 'out'
    trace: bool = False
    jobs: int = 1
    base_dir: str = field(default='.', compare=False)

    @property
    def population_name(self) -> str:
        return self.population.get('name', 'national')

    def synthetic_spec(self) -> Optional[SyntheticSpec]:
        """The synthetic population recipe, or None when the source is a CSV"""
        source = self.population.get('synthetic')
        if source is None:
            return None
        if isinstance(source, str):
            return SyntheticSpec.from_file(self.resolve(source))
        return SyntheticSpec.from_dict(source)

    def csv_path(self) -> Optional[str]:
        path = self.population.get('csv')
        return self.resolve(path) if path else None

    def resolve(self, path: str) -> str:
        """Paths in a config file are relative to the file's directory"""
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)

    def with_overrides(self, seed: Optional[int] = None, replications: Optional[int] = None,
                       jobs: Optional[int] = None) -> 'ExperimentConfig':
        changes: Dict[str, Any] = {}
        if seed is not None:
            if seed < 0:
                raise ConfigError("--seed must be non-negative")
            changes['master_seed'] = seed
        if replications is not None:
            if replications <= 0:
                raise ConfigError("--replications must be positive")
            changes['replications'] = replications
        if jobs is not None:
            if jobs <= 0:
                raise ConfigError("--jobs must be positive")
            changes['jobs'] = jobs
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'population': self.population,
            'n_target': self.n_target,
            'k_strata': self.k_strata,
            'k_bins': self.k_bins,
            'p_low': self.p_low,
            'p_high': self.p_high,
            'replications': self.replications,
            'master_seed': self.master_seed,
            'groups': list(self.groups) if self.groups is not None else None,
            'min_population_size': self.min_population_size,
            'include_national': self.include_national,
            'permutations': list(self.permutations),
            'trace': self.trace,
        }


def env_int(name: str, default: int) -> int:
    value = os.getenv(name)
    if value is None or value == '':
        return default
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"environment variable {name} must be an integer, got {value!r}")


def initialize_experiment(inp: Dict[str, Any], base_dir: str = '.') -> ExperimentConfig:
    """Validate a raw config dict and build an ExperimentConfig"""
    try:
        data = CONFIG_SCHEMA.validate(dict(inp))
    except SchemaError as e:
        raise ConfigError(str(e))

    jobs = data['jobs'] if data['jobs'] is not None else env_int('SRSQ_JOBS', 1)
    if jobs <= 0:
        raise ConfigError("SRSQ_JOBS must be positive")
    output_dir = data['output_dir'] or os.getenv('SRSQ_OUTPUT_DIR') or 'out'

    return ExperimentConfig(
        population=data['population'],
        n_target=data['n_target'],
        k_strata=data['k_strata'],
        k_bins=data['k_bins'],
        p_low=float(data['p_low']),
        p_high=float(data['p_high']),
        replications=data['replications'],
        master_seed=data['master_seed'],
        groups=tuple(data['groups']) if data['groups'] is not None else None,
        min_population_size=data['min_population_size'],
        include_national=data['include_national'],
        permutations=tuple(data['permutations']),
        output_dir=output_dir,
        trace=data['trace'],
        jobs=jobs,
        base_dir=base_dir,
    )


def load_config(path: str) -> ExperimentConfig:
    """Read and validate an experiment config file"""
    config = initialize_experiment(read_document(path), base_dir=os.path.dirname(os.path.abspath(path)))
    logger.debug(f"Loaded config from {path}: {json.dumps(config.to_dict(), sort_keys=True)}")
    return config
