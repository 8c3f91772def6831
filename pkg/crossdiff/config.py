"""
Simulation documents.

A document is JSON with a schema_version and the sections coefficients,
reaction, grid, initial, time, output and seed::

    {
      "schema_version": 1,
      "coefficients": {"skt": {"a10": 1, "a20": 1, "a11": 0.5, "a12": 0.5, "a21": 0.5, "a22": 0.5}},
      "reaction": {"kind": "lotka_volterra", "b": [[1, 2, 2], [1, 2, 2]]},
      "grid": {"n_cells": 64, "length": 1.0},
      "initial": {"profile": "cosine", "base": [0.2, 0.3], "amplitude": [0.1, 0.0]},
      "time": {"tau": 1e-3, "t_end": 1.0},
      "output": {"cadence": 1, "plots": true},
      "seed": 0
    }

The coefficients section holds either ``skt`` or explicit ``alpha``,
``beta`` and ``gamma`` 2x2 lists.
"""

import copy
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from crossdiff_project import settings
from .coeff_conditions import (
    CoeffSet, ConditionReport, SktParams, SKT_DIFFUSION_FIELDS, SKT_REACTION_FIELDS,
    check_remark_case, check_skt_corollary, check_symmetry, check_theorem_conditions, from_skt,
)
from .exceptions import AdmissibilityError, ConfigError
from .reactions import LotkaVolterra, NoReaction, ReactionKind, lv_band
from .solver import Grid1D


class Profile(str, Enum):
    CONSTANT = 'constant'
    COSINE = 'cosine'
    STEP = 'step'
    TWO_BUMP = 'two-bump'
    RANDOM = 'random'


@dataclass(frozen=True)
class InitialProfile:
    """Named initial preset; base and amplitude are per-species pairs"""
    profile: Profile = Profile.CONSTANT
    base: tuple = (1.0 / 3.0, 1.0 / 3.0)
    amplitude: tuple = (0.0, 0.0)
    modes: int = 1
    position: float = 0.5
    width: float = 0.1

    def evaluate(self, grid, seed=0):
        x = grid.centers / grid.length
        base = np.asarray(self.base, dtype=float)[:, None]
        amplitude = np.asarray(self.amplitude, dtype=float)[:, None]
        if self.profile is Profile.CONSTANT:
            shape = np.zeros((2, x.size))
        elif self.profile is Profile.COSINE:
            shape = np.broadcast_to(np.cos(self.modes * math.pi * x), (2, x.size))
        elif self.profile is Profile.STEP:
            shape = np.broadcast_to((x < self.position).astype(float), (2, x.size))
        elif self.profile is Profile.TWO_BUMP:
            # species 1 peaks at position, species 2 at the mirrored point
            centres = np.array([self.position, 1.0 - self.position])[:, None]
            shape = np.exp(-((x[None, :] - centres) / self.width) ** 2)
        else:
            rng = np.random.default_rng(seed)
            shape = rng.uniform(-1.0, 1.0, size=(2, x.size))
        u = base + amplitude * shape
        return u[0], u[1]

    def to_dict(self):
        return {
            'profile': self.profile.value,
            'base': list(self.base),
            'amplitude': list(self.amplitude),
            'modes': self.modes,
            'position': self.position,
            'width': self.width,
        }


@dataclass(frozen=True)
class SimConfig:
    coefficients: CoeffSet
    reaction: object
    grid: Grid1D
    initial: InitialProfile
    tau: float
    t_end: float
    skt: SktParams = None
    tau_min: float = None
    rescale_initial: bool = False
    output_dir: str = None
    cadence: int = 1
    plots: bool = True
    seed: int = 0
    report: ConditionReport = field(default=None, compare=False, repr=False)

    def with_overrides(self, seed=None, output_dir=None, plots=None):
        changes = {}
        if seed is not None:
            changes['seed'] = seed
        if output_dir is not None:
            changes['output_dir'] = str(output_dir)
        if plots is not None:
            changes['plots'] = plots
        return replace(self, **changes)


# Field readers; each names the dotted key it rejects

def _section(document, key, required=True):
    if key not in document:
        if required:
            raise ConfigError(key, "missing section")
        return {}
    value = document[key]
    if not isinstance(value, dict):
        raise ConfigError(key, "must be an object")
    return value


def _number(section, key, path, default=None, required=False):
    if key not in section:
        if required:
            raise ConfigError(key, f"missing from {path}")
        return default
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"{path}.{key}", f"must be a finite number, got {value!r}")
    return float(value)


def _integer(section, key, path, default=None, minimum=None):
    if key not in section:
        return default
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}.{key}", f"must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path}.{key}", f"must be at least {minimum}, got {value}")
    return value


def _boolean(section, key, path, default):
    value = section.get(key, default)
    if not isinstance(value, bool):
        raise ConfigError(f"{path}.{key}", f"must be true or false, got {value!r}")
    return value


def _pair(section, key, path, default):
    value = section.get(key, default)
    if (not isinstance(value, (list, tuple)) or len(value) != 2
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) for v in value)):
        raise ConfigError(f"{path}.{key}", f"must be a pair of finite numbers, got {value!r}")
    return (float(value[0]), float(value[1]))


def _matrix_entries(section, key, path, shape):
    if key not in section:
        raise ConfigError(f"{path}.{key}", "missing")
    try:
        matrix = np.array(section[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}.{key}", "must be a nested list of numbers") from exc
    if matrix.shape != shape or not np.all(np.isfinite(matrix)):
        raise ConfigError(f"{path}.{key}", f"must be a finite {shape[0]}x{shape[1]} list")
    return matrix


def read_coefficients(section, path='coefficients'):
    """Schema-check a coefficients section; returns (CoeffSet, SktParams or None)"""
    if not isinstance(section, dict):
        raise ConfigError(path, "must be an object")
    if 'skt' in section:
        skt = section['skt']
        if not isinstance(skt, dict):
            raise ConfigError(f"{path}.skt", "must be an object")
        known = SKT_DIFFUSION_FIELDS + SKT_REACTION_FIELDS
        for key in skt:
            if key not in known:
                raise ConfigError(f"{path}.skt.{key}", "unknown parameter")
        values = {key: _number(skt, key, f"{path}.skt", default=0.0) for key in known}
        for key, value in values.items():
            if value < 0:
                raise ConfigError(f"{path}.skt.{key}", f"must be nonnegative, got {value!r}")
        s = SktParams(**values)
        return from_skt(s), s
    entries = {key: _matrix_entries(section, key, path, (2, 2)) for key in ('alpha', 'beta', 'gamma')}
    return CoeffSet(**entries), None


def admit_coefficients(c, skt=None):
    """Reject sets outside the regime where the solver's boundedness argument applies"""
    if skt is not None:
        report = check_skt_corollary(skt)
        if not report.passed:
            raise AdmissibilityError("SKT parameters fail the corollary conditions", report)
        return report
    symmetry = check_symmetry(c)
    if not symmetry.passed:
        raise AdmissibilityError("coefficients are not in the symmetric family", symmetry)
    theorem = check_theorem_conditions(c)
    if theorem.passed:
        return theorem
    remark = check_remark_case(c)
    if remark.passed:
        return remark
    raise AdmissibilityError("coefficients satisfy neither the strict nor the remark conditions", theorem)


def read_reaction(section, skt=None, path='reaction'):
    kind = section.get('kind', ReactionKind.NONE.value)
    if kind == ReactionKind.NONE.value:
        return NoReaction()
    if kind != ReactionKind.LOTKA_VOLTERRA.value:
        raise ConfigError(f"{path}.kind", f"must be 'none' or 'lotka_volterra', got {kind!r}")
    if 'b' in section:
        rows = _matrix_entries(section, 'b', path, (2, 3))
        if np.any(rows < 0):
            raise ConfigError(f"{path}.b", "rates must be nonnegative")
        reaction = LotkaVolterra.from_rows(rows.tolist())
    elif skt is not None:
        reaction = LotkaVolterra.from_skt(skt)
    else:
        raise ConfigError(f"{path}.b", "missing")
    _, report = lv_band(reaction)
    if not report.passed:
        raise AdmissibilityError("Lotka-Volterra rates leave no band below u1 + u2 = 1", report)
    return reaction


def read_initial(section, path='initial'):
    name = section.get('profile', Profile.CONSTANT.value)
    try:
        profile = Profile(name)
    except ValueError as exc:
        choices = ', '.join(p.value for p in Profile)
        raise ConfigError(f"{path}.profile", f"must be one of {choices}, got {name!r}") from exc
    initial = InitialProfile(
        profile=profile,
        base=_pair(section, 'base', path, InitialProfile.base),
        amplitude=_pair(section, 'amplitude', path, InitialProfile.amplitude),
        modes=_integer(section, 'modes', path, default=1, minimum=0),
        position=_number(section, 'position', path, default=0.5),
        width=_number(section, 'width', path, default=0.1),
    )
    if not 0.0 <= initial.position <= 1.0:
        raise ConfigError(f"{path}.position", "must lie in [0, 1]")
    if initial.width <= 0:
        raise ConfigError(f"{path}.width", "must be positive")
    return initial, _boolean(section, 'rescale', path, False)


def _check_initial_values(initial, grid, seed, rescale):
    u1, u2 = initial.evaluate(grid, seed=seed)
    tol = settings.MEMBERSHIP_TOL
    if not (np.all(np.isfinite(u1)) and np.all(np.isfinite(u2))):
        raise ConfigError('initial', "profile produces non-finite densities")
    if min(np.min(u1), np.min(u2)) < -tol:
        raise ConfigError('initial', "profile produces negative densities")
    if np.max(u1 + u2) > 1.0 + tol and not rescale:
        raise ConfigError('initial', "profile exceeds u1 + u2 = 1; enable rescale to scale it down")


def parse_config(document):
    """Validate a simulation document (JSON text or an already decoded dict) into a SimConfig"""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ConfigError('document', f"not valid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise ConfigError('document', "must be a JSON object")

    version = document.get('schema_version')
    if version != settings.SCHEMA_VERSION:
        raise ConfigError('schema_version', f"expected {settings.SCHEMA_VERSION}, got {version!r}")

    c, skt = read_coefficients(_section(document, 'coefficients'))
    report = admit_coefficients(c, skt)
    reaction = read_reaction(_section(document, 'reaction', required=False), skt)

    grid_section = _section(document, 'grid')
    n_cells = _integer(grid_section, 'n_cells', 'grid', minimum=2)
    if n_cells is None:
        raise ConfigError('n_cells', "missing from grid")
    length = _number(grid_section, 'length', 'grid', default=1.0)
    if length <= 0:
        raise ConfigError('grid.length', "must be positive")
    grid = Grid1D(n_cells=n_cells, length=length)

    time = _section(document, 'time')
    tau = _number(time, 'tau', 'time', required=True)
    t_end = _number(time, 't_end', 'time', required=True)
    tau_min = _number(time, 'tau_min', 'time')
    if tau <= 0:
        raise ConfigError('time.tau', "must be positive")
    if t_end < 0:
        raise ConfigError('time.t_end', "must be nonnegative")
    if tau_min is not None and tau_min <= 0:
        raise ConfigError('time.tau_min', "must be positive")

    output = _section(document, 'output', required=False)
    directory = output.get('directory')
    if directory is not None and not isinstance(directory, str):
        raise ConfigError('output.directory', "must be a string")
    cadence = _integer(output, 'cadence', 'output', default=1, minimum=1)
    plots = _boolean(output, 'plots', 'output', True)

    seed = document.get('seed', 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise ConfigError('seed', f"must be an unsigned 64-bit integer, got {seed!r}")

    initial, rescale = read_initial(_section(document, 'initial', required=False))
    _check_initial_values(initial, grid, seed, rescale)

    return SimConfig(
        coefficients=c, reaction=reaction, grid=grid, initial=initial, tau=tau, t_end=t_end,
        skt=skt, tau_min=tau_min, rescale_initial=rescale, output_dir=directory, cadence=cadence,
        plots=plots, seed=seed, report=report,
    )


def config_to_dict(config):
    if config.skt is not None:
        coefficients = {'skt': config.skt.to_dict()}
    else:
        coefficients = config.coefficients.to_dict()
    initial = config.initial.to_dict()
    initial['rescale'] = config.rescale_initial
    time = {'tau': config.tau, 't_end': config.t_end}
    if config.tau_min is not None:
        time['tau_min'] = config.tau_min
    output = {'cadence': config.cadence, 'plots': config.plots}
    if config.output_dir is not None:
        output['directory'] = config.output_dir
    return {
        'schema_version': settings.SCHEMA_VERSION,
        'coefficients': coefficients,
        'reaction': config.reaction.to_dict(),
        'grid': {'n_cells': config.grid.n_cells, 'length': config.grid.length},
        'initial': initial,
        'time': time,
        'output': output,
        'seed': config.seed,
    }


def serialize_config(config):
    return json.dumps(config_to_dict(config), indent=2)


def load_document(path):
    try:
        with open(path, 'r', encoding='utf-8') as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError('document', f"{path} is not valid JSON: {exc}") from exc


def load_config(path):
    return parse_config(load_document(path))


def load_coefficients(path):
    """Read a coefficient file: a bare coefficients section or a whole simulation document"""
    document = load_document(path)
    if not isinstance(document, dict):
        raise ConfigError('coefficients', "must be a JSON object")
    if 'coefficients' in document:
        return read_coefficients(document['coefficients'])
    return read_coefficients(document)


def apply_override(document, dotted, value):
    """Copy of document with the value at a dotted path replaced, e.g. 'coefficients.skt.a11'"""
    updated = copy.deepcopy(document)
    keys = dotted.split('.')
    node = updated
    for key in keys[:-1]:
        if not isinstance(node, dict) or key not in node:
            raise ConfigError(dotted, f"no section {key!r} in the document")
        node = node[key]
    if not isinstance(node, dict):
        raise ConfigError(dotted, "does not name a field")
    current = node.get(keys[-1])
    if isinstance(current, int) and not isinstance(current, bool) and float(value).is_integer():
        value = int(value)
    node[keys[-1]] = value
    return updated


def parse_range(text):
    """'start:stop:count' as an inclusive linspace"""
    parts = text.split(':')
    try:
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
    except (IndexError, ValueError) as exc:
        raise ConfigError('range', f"expected start:stop:count, got {text!r}") from exc
    if len(parts) != 3 or count < 1:
        raise ConfigError('range', f"expected start:stop:count with count >= 1, got {text!r}")
    return np.linspace(start, stop, count).tolist()
