"""INI run configurations validated into pydantic models.

    [fields]   a, V                 presets, expressions or nodal CSV paths
    [problem]  p, d, f, lower, upper, theta, xi
    [grids]    n, m, eps, elements_per_period, subcells, validation_m
    [solver]   tolerances, delta schedule, damping, macro iteration, cache
    [study]    studies, test functions, thresholds, ansatz, form
    [output]   directory, format

Lists are comma separated (``eps = 1/8, 1/16``); expression lists in
``[study]`` are separated by ``;`` because presets carry commas.
"""
import configparser
import hashlib
import json
import logging
import os
import re
from fractions import Fraction
from typing import Dict, List, Literal, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from twoscale.src.config import (BACKTRACK, CACHE_QUANTUM, DECREASE_FACTOR, DELTA_SCHEDULE, ELEMENTS_PER_PERIOD,
                                 GROWTH_FACTOR, LINEAR_TOL, MACRO_MAX_ITERATIONS, MAX_DELTA_INSERTS, MAX_ITERATIONS,
                                 MEAN_SAMPLES, MEAN_TOL, MIN_STEP, PICARD_AFTER, RELAXATION, RESIDUAL_TOL, SUBCELLS)
from twoscale.src.errors import ConfigError
from twoscale.src.utils.config import Config

logger = logging.getLogger(__name__)

KNOWN_STUDIES = ('limit', 'scaled-pairing', 'potential-pairing', 'apriori')


def _split(value, sep=','):
    if isinstance(value, str):
        return [v.strip() for v in value.split(sep) if v.strip()]
    return value


def _number(text):
    if isinstance(text, str):
        return float(Fraction(text.strip()))
    return float(text)


class _Section(BaseModel):
    model_config = ConfigDict(extra='forbid')


class FieldsSection(_Section):
    a: str = '2 + sin(2*pi*y)'
    V: str = 'sin(2*pi*y)'


class ProblemSection(_Section):
    p: float = 2.0
    d: int = 1
    f: str = '1'
    lower: float = 0.0
    upper: float = 1.0
    theta: float = 1.0
    xi: List[float] = [1.0]

    @field_validator('p')
    @classmethod
    def _p(cls, v):
        if v < 2:
            raise ValueError("p must be >= 2")
        return v

    @field_validator('d')
    @classmethod
    def _d(cls, v):
        if v not in (1, 2):
            raise ValueError("d must be 1 or 2")
        return v

    @field_validator('xi', mode='before')
    @classmethod
    def _xi(cls, v):
        return [_number(x) for x in _split(v)]


class GridsSection(_Section):
    n: int = 16
    m: int = 64
    eps: List[float] = [1 / 8, 1 / 16, 1 / 32, 1 / 64]
    elements_per_period: int = ELEMENTS_PER_PERIOD
    subcells: int = SUBCELLS
    validation_m: int = MEAN_SAMPLES

    @field_validator('eps', mode='before')
    @classmethod
    def _eps(cls, v):
        return [_number(x) for x in _split(v)]

    @field_validator('n', 'm', 'elements_per_period', 'validation_m')
    @classmethod
    def _at_least_two(cls, v, info):
        if v < 2:
            raise ValueError(f"{info.field_name} must be >= 2")
        return v


class SolverSection(_Section):
    residual_tol: float = RESIDUAL_TOL
    max_iterations: int = MAX_ITERATIONS
    backtrack: float = BACKTRACK
    min_step: float = MIN_STEP
    picard_after: int = PICARD_AFTER
    delta_schedule: Tuple[float, ...] = DELTA_SCHEDULE
    max_delta_inserts: int = MAX_DELTA_INSERTS
    linear_tol: float = LINEAR_TOL
    relaxation: float = RELAXATION
    macro_newton: bool = True
    macro_max_iterations: int = MACRO_MAX_ITERATIONS
    cache_quantum: float = CACHE_QUANTUM
    use_cache: bool = True
    n_jobs: int = Config.N_JOBS

    @field_validator('delta_schedule', mode='before')
    @classmethod
    def _schedule(cls, v):
        return tuple(_number(x) for x in _split(v))


class StudySection(_Section):
    studies: List[str] = ['limit']
    phi1: str = 'x(1-x)'
    phi2: List[str] = ['sin(2*pi*y)']
    psi: List[str] = ['sin(2*pi*y)']
    alpha: float = DECREASE_FACTOR
    final_threshold: Optional[float] = None
    growth_factor: float = GROWTH_FACTOR
    mean_tol: float = MEAN_TOL
    ansatz: Literal['split', 'reduced'] = 'split'
    form: Literal['direct', 'ibp'] = 'direct'

    @field_validator('studies', mode='before')
    @classmethod
    def _studies(cls, v):
        return _split(v)

    @field_validator('studies')
    @classmethod
    def _known(cls, v):
        unknown = [s for s in v if s not in KNOWN_STUDIES]
        if unknown:
            raise ValueError(f"unknown studies {unknown}, expected some of {list(KNOWN_STUDIES)}")
        return v

    @field_validator('phi2', 'psi', mode='before')
    @classmethod
    def _expressions(cls, v):
        return _split(v, ';')

    @field_validator('final_threshold', mode='before')
    @classmethod
    def _optional(cls, v):
        return None if isinstance(v, str) and v.strip().lower() in ('', 'none') else v


class OutputSection(_Section):
    directory: str = 'outputs'
    format: Literal['csv', 'json'] = 'csv'


class RunConfig(_Section):
    fields: FieldsSection = FieldsSection()
    problem: ProblemSection = ProblemSection()
    grids: GridsSection = GridsSection()
    solver: SolverSection = SolverSection()
    study: StudySection = StudySection()
    output: OutputSection = OutputSection()

    def canonical(self) -> dict:
        return self.model_dump(mode='json')

    def spec_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(blob.encode('utf-8')).hexdigest()

    def output_dir(self) -> str:
        return Config.output_root(self.output.directory)


SECTIONS = tuple(RunConfig.model_fields)


def parse_override(text: str) -> Tuple[str, str, str]:
    match = re.fullmatch(r'\s*([A-Za-z_]\w*)\.([A-Za-z_]\w*)\s*=(.*)', text, flags=re.S)
    if match is None:
        raise ConfigError(f"Override '{text}' is not of the form section.key=value")
    section, key, value = match.groups()
    return section, key, value.strip()


def _line_of(lines: Sequence[str], section: str, key: str) -> Optional[int]:
    current = None
    for no, line in enumerate(lines, start=1):
        stripped = line.strip()
        head = re.fullmatch(r'\[(.+)\]', stripped)
        if head:
            current = head.group(1).strip()
        elif current == section and re.match(rf'{re.escape(key)}\s*[=:]', stripped):
            return no
    return None


def _anchor(loc, lines, overridden) -> str:
    parts = [str(x) for x in loc]
    if len(parts) >= 2:
        section, key = parts[0], parts[1]
        where = f"{section}.{key}"
        if (section, key) in overridden:
            return f"{where} (--set)"
        no = _line_of(lines, section, key)
        return f"{where} (line {no})" if no else where
    return '.'.join(parts) or '<root>'


def load_run_config(path: Optional[str] = None, overrides: Sequence[str] = ()) -> Tuple[RunConfig, List[str]]:
    """Parse ``path`` (defaults only when None), apply ``section.key=value`` overrides and validate."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=('#',))
    parser.optionxform = str
    lines: List[str] = []
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"Config file not found: {path}")
        with open(path, 'r', encoding='utf-8') as fh:
            text = fh.read()
        lines = text.splitlines()
        try:
            parser.read_string(text, source=path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    overridden = set()
    for item in overrides:
        section, key, value = parse_override(item)
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, value)
        overridden.add((section, key))

    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"Unknown section(s) {unknown}; expected {list(SECTIONS)}")
    data: Dict[str, Dict[str, str]] = {s: dict(parser.items(s)) for s in parser.sections()}
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        messages = [f"{_anchor(err['loc'], lines, overridden)}: {err['msg']}" for err in exc.errors()]
        raise ConfigError("Invalid run configuration: " + "; ".join(messages)) from exc
    logger.info("[CONFIG] loaded %s with %d override(s), hash %s", path or '<defaults>', len(overrides),
                cfg.spec_hash()[:12])
    return cfg, list(overrides)
