"""
Run configuration: defaults, JSON loading, overrides and simulator specs.

Defaults reproduce the toy study (150 learning points, basis of 4
functions, 101 probability levels, 10^4 replications per call, p = 0.4,
20 adaptive iterations, 30 repetitions).
"""

from __future__ import annotations

import copy
import json
import logging
import os
from dataclasses import asdict, dataclass, fields
from numbers import Number
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from .curves import ProbGrid
from .errors import ConfigError, DomainError
from .gp import KERNELS, THETA_BOUNDS, InputSpace
from .qfei import BEST_FROM, QfeiConfig
from .qmeta import TRANSFORMS, MetamodelConfig
from .simulators import ExternalSimulator, ReplaySimulator, Simulator, ToySimulator

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass
class RunConfig:
    """All settings of a command-line run."""

    # learning set and metamodel
    n: int = 150
    k: int = 4
    m: int = 101
    n_mc: int = 10_000
    kernel: str = "matern52"
    transform: str = "identity"
    n_starts: int = 10
    theta_bounds: Tuple[float, float] = THETA_BOUNDS
    maxiter: int = 200

    # optimization
    p: float = 0.4
    iterations: int = 20
    repetitions: int = 30
    candidates: int = 2000
    refit_every: int = 1
    stop_rel_tol: Optional[float] = None
    best_from: str = "projected"

    # execution
    seed: int = 0
    n_workers: int = 1
    sim: str = "toy"
    external_timeout: float = 60.0
    external_pool: int = 1
    input_levels: Optional[List[List[float]]] = None
    out: str = "results"

    def snapshot(self) -> Dict[str, Any]:
        """JSON-safe copy of the configuration."""
        data = asdict(self)
        data["theta_bounds"] = list(self.theta_bounds)
        if self.input_levels is not None:
            data["input_levels"] = [[float(v) for v in lv] for lv in self.input_levels]
        return data

    def copy_with_overrides(self, overrides: Optional[Dict[str, Any]] = None) -> "RunConfig":
        """Return a new config with ``overrides`` merged in; ``None`` values are skipped."""
        new_cfg = copy.deepcopy(self)
        if overrides:
            _apply_overrides(new_cfg, {k: v for k, v in overrides.items() if v is not None})
        return new_cfg

    def validate(self, d: Optional[int] = None, check_output: bool = False) -> "RunConfig":
        """Check every setting and return ``self``.

        Raises
        ------
        ConfigError
            With a message naming the offending setting.
        """
        for name in ("n", "k", "n_mc", "n_starts", "maxiter", "repetitions", "candidates",
                     "refit_every", "n_workers", "external_pool"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.iterations, (int, np.integer)) or self.iterations < 0:
            raise ConfigError(f"iterations must be a non-negative integer, got {self.iterations!r}")
        if not isinstance(self.m, (int, np.integer)) or self.m < 2:
            raise ConfigError(f"m must be an integer >= 2, got {self.m!r}")
        if not isinstance(self.p, Number) or not 0.0 < float(self.p) < 1.0:
            raise ConfigError(f"p must lie in (0, 1), got {self.p!r}")
        if self.kernel not in KERNELS:
            raise ConfigError(f"kernel must be one of {sorted(KERNELS)}, got {self.kernel!r}")
        if self.transform not in TRANSFORMS:
            raise ConfigError(f"transform must be one of {TRANSFORMS}, got {self.transform!r}")
        if self.best_from not in BEST_FROM:
            raise ConfigError(f"best_from must be one of {BEST_FROM}, got {self.best_from!r}")
        lo, hi = self.theta_bounds
        if not 0 < lo < hi:
            raise ConfigError(f"theta_bounds must satisfy 0 < lower < upper, got {self.theta_bounds}")
        if self.stop_rel_tol is not None and self.stop_rel_tol <= 0:
            raise ConfigError(f"stop_rel_tol must be positive, got {self.stop_rel_tol}")
        if self.external_timeout <= 0:
            raise ConfigError(f"external_timeout must be positive, got {self.external_timeout}")
        if self.k > self.n:
            raise ConfigError(f"k={self.k} exceeds the learning set size n={self.n}")
        if d is not None and self.n <= d + 1:
            raise ConfigError(f"n={self.n} must exceed d+1={d + 1} for the trend estimate")
        if self.input_levels is not None:
            space = self.input_space()
            if d is not None and space.d != d:
                raise ConfigError(f"input_levels describe {space.d} dimensions, the inputs have {d}")
        parse_simulator_spec(self.sim)
        if check_output:
            out = Path(self.out)
            try:
                out.mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise ConfigError(f"cannot create output directory {out}: {exc}")
            if not os.access(out, os.W_OK):
                raise ConfigError(f"output directory {out} is not writable")
        return self

    def grid(self) -> ProbGrid:
        return ProbGrid.uniform(self.m)

    def input_space(self) -> Optional[InputSpace]:
        """Product space of ``input_levels``, or ``None`` when unset."""
        if self.input_levels is None:
            return None
        try:
            return InputSpace(tuple(tuple(float(v) for v in lv) for lv in self.input_levels))
        except (TypeError, ValueError, DomainError) as exc:
            raise ConfigError(f"invalid input_levels: {exc}")

    def metamodel_config(self) -> MetamodelConfig:
        return MetamodelConfig(k=self.k, kernel=self.kernel, transform=self.transform,
                               n_starts=self.n_starts, theta_bounds=tuple(self.theta_bounds),
                               maxiter=self.maxiter, seed=self.seed, n_workers=self.n_workers)

    def qfei_config(self, candidate_set: np.ndarray, seed: Optional[int] = None) -> QfeiConfig:
        return QfeiConfig(p=float(self.p), iterations=self.iterations, n_mc=self.n_mc, k=self.k,
                          candidate_set=candidate_set,
                          seed=self.seed if seed is None else int(seed),
                          refit_every=self.refit_every, stop_rel_tol=self.stop_rel_tol,
                          best_from=self.best_from, metamodel=self.metamodel_config(),
                          n_workers=self.n_workers)


def _apply_overrides(config: RunConfig, overrides: Dict[str, Any]) -> None:
    known = {f.name for f in fields(config)}
    for key, value in overrides.items():
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"Unknown configuration attribute '{key}'")
        current = getattr(config, key)
        if isinstance(current, tuple):
            value = tuple(value)
        setattr(config, key, copy.deepcopy(value))


def load_config(path: PathLike) -> RunConfig:
    """Read a JSON object of settings on top of the defaults.

    Raises
    ------
    ConfigError
        If the file is missing, is not a JSON object or names an unknown
        setting.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Configuration file not found: {path}")
    try:
        with path.open("r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"Configuration file {path} is not valid JSON: {exc}")
    if not isinstance(payload, dict):
        raise ConfigError(f"Configuration file {path} must hold a JSON object")
    return RunConfig().copy_with_overrides(payload)


def parse_simulator_spec(spec: str) -> Tuple[str, str]:
    """Split ``toy``, ``replay:<path>`` or ``external:<cmd>`` into kind and argument."""
    if not isinstance(spec, str) or not spec:
        raise ConfigError(f"simulator spec must be a non-empty string, got {spec!r}")
    kind, _, arg = spec.partition(":")
    if kind == "toy" and not arg:
        return kind, ""
    if kind in ("replay", "external") and arg.strip():
        return kind, arg.strip()
    raise ConfigError(f"invalid simulator spec {spec!r}; expected toy, replay:<path> "
                      f"or external:<command>")


def build_simulator(spec: str, config: Optional[RunConfig] = None,
                    input_space: Optional[InputSpace] = None) -> Simulator:
    """Instantiate the simulator named by ``spec``."""
    config = config or RunConfig()
    kind, arg = parse_simulator_spec(spec)
    if kind == "toy":
        return ToySimulator()
    if kind == "replay":
        path = Path(arg)
        if not path.is_file():
            raise ConfigError(f"replay table not found: {path}")
        return ReplaySimulator.from_csv(path)
    if input_space is None:
        input_space = config.input_space()
    return ExternalSimulator(arg, input_space=input_space, timeout=config.external_timeout,
                             pool_size=config.external_pool)


__all__ = [
    "RunConfig",
    "load_config",
    "parse_simulator_spec",
    "build_simulator",
]
