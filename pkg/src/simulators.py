"""
Stochastic simulators: the analytic toy function, a replay table and an
adapter for external processes.

Every simulator implements ``draw_batch(x, n, seed)`` and must return the
same draws for the same ``(x, n, seed)``.  Streams use numpy's counter-based
``Philox`` generator keyed directly by the 64-bit seed, so any stream can be
rebuilt from its seed alone.

External wire protocol
----------------------
One child process serves one request at a time over standard input/output,
UTF-8, newline-delimited JSON::

    request   {"x":[0.1,0.2],"n":1000,"seed":1234567}\\n
    response  {"draws":[...]}\\n
"""

from __future__ import annotations

import abc
import json
import logging
import math
import queue
import shlex
import subprocess
import threading
from collections import deque
from pathlib import Path
from typing import Deque, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .empirical import read_batches_csv
from .errors import (DomainError, MalformedResponseError, ReplayError, SimulatorError,
                     SimulatorTimeoutError)
from .gp import InputSpace, point_key

logger = logging.getLogger(__name__)

TOY_LEVELS = tuple(round(0.1 * i, 1) for i in range(1, 11))
TOY_SPACE = InputSpace((TOY_LEVELS, TOY_LEVELS, TOY_LEVELS))
TOY_OPTIMUM = (1.0, 0.1, 0.5)


def make_stream(seed: int) -> np.random.Generator:
    """Philox generator keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=int(seed) % (1 << 64)))


class Simulator(abc.ABC):
    """A stochastic simulator ``G(x, omega)``.

    Attributes
    ----------
    input_space : InputSpace or None
        Admissible inputs, if known.
    """

    input_space: Optional[InputSpace] = None
    name = "simulator"

    @abc.abstractmethod
    def draw_batch(self, x: Sequence[float], n: int, seed: int) -> np.ndarray:
        """Return ``n`` independent draws at ``x`` from the stream ``seed``."""

    def candidate_points(self) -> Optional[np.ndarray]:
        """Inputs the simulator can serve, when narrower than ``input_space``."""
        return None

    def close(self) -> None:
        """Release resources held by the simulator."""

    def __enter__(self) -> "Simulator":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


# ======================================================================
# Toy function
# ======================================================================

def _check_toy(x: Sequence[float]) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if not TOY_SPACE.contains(x, tol=1e-9):
        raise DomainError(f"toy input must lie on the grid {{0.1, ..., 1.0}}^3, got {list(x)}")
    return x


def toy_draw(x: Sequence[float], stream: np.random.Generator) -> float:
    """One draw of ``sin(x1 + U1) + cos(x2 + U2) + x3 * U3``.

    ``U1 ~ N(0, 1)``, ``U2 ~ Exp(1)`` and ``U3 ~ U([-0.5, 0.5])`` are
    independent.

    Raises
    ------
    DomainError
        If ``x`` is not on the toy grid.
    """
    x = _check_toy(x)
    u1 = stream.standard_normal()
    u2 = stream.standard_exponential()
    u3 = stream.uniform(-0.5, 0.5)
    return float(math.sin(x[0] + u1) + math.cos(x[1] + u2) + x[2] * u3)


class ToySimulator(Simulator):
    """The three-dimensional analytic test simulator."""

    input_space = TOY_SPACE
    name = "toy"

    def terms(self, x: Sequence[float], n: int,
              stream: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """The three additive terms of ``n`` draws sharing one stream."""
        x = _check_toy(x)
        u1 = stream.standard_normal(n)
        u2 = stream.standard_exponential(n)
        u3 = stream.uniform(-0.5, 0.5, n)
        return np.sin(x[0] + u1), np.cos(x[1] + u2), x[2] * u3

    def draw_batch(self, x: Sequence[float], n: int, seed: int) -> np.ndarray:
        t1, t2, t3 = self.terms(x, n, make_stream(seed))
        return t1 + t2 + t3


# ======================================================================
# Replay table
# ======================================================================

class ReplaySimulator(Simulator):
    """Serve stored draws in order, ignoring seeds.

    Parameters
    ----------
    table : mapping
        Input point to its stored draws.
    """

    name = "replay"

    def __init__(self, table: Mapping[Sequence[float], Sequence[float]]):
        self._table: Dict[Tuple[float, ...], np.ndarray] = {}
        for x, draws in table.items():
            self._table[point_key(x)] = np.asarray(draws, dtype=float).ravel()
        if not self._table:
            raise ReplayError("replay table is empty")
        self._cursor: Dict[Tuple[float, ...], int] = {k: 0 for k in self._table}
        self._lock = threading.Lock()
        self.input_space = InputSpace.from_points(np.array(list(self._table.keys())))

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "ReplaySimulator":
        """Load a long-format batch table ``x1..xd,draw``."""
        return cls({b.input: b.draws for b in read_batches_csv(path)})

    def candidate_points(self) -> np.ndarray:
        return np.array(sorted(self._table.keys()), dtype=float)

    def _take(self, x: Sequence[float], n: int) -> np.ndarray:
        key = point_key(x)
        with self._lock:
            if key not in self._table:
                raise ReplayError("input not present in the replay table", x=x)
            start = self._cursor[key]
            stored = self._table[key]
            if start + n > stored.size:
                raise ReplayError(
                    f"replay table exhausted: {stored.size - start} draws left, {n} requested", x=x)
            self._cursor[key] = start + n
            return stored[start:start + n].copy()

    def replay_draw(self, x: Sequence[float], stream: Optional[np.random.Generator] = None) -> float:
        """Next stored draw at ``x``; ``stream`` is accepted and ignored."""
        return float(self._take(x, 1)[0])

    def draw_batch(self, x: Sequence[float], n: int, seed: int) -> np.ndarray:
        return self._take(x, n)

    def reset(self) -> None:
        """Rewind every input to its first stored draw."""
        with self._lock:
            self._cursor = {k: 0 for k in self._table}


# ======================================================================
# External process
# ======================================================================

class _Worker:
    """One child process with background readers for stdout and stderr."""

    def __init__(self, argv: List[str], env: Optional[Mapping[str, str]] = None):
        self.proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                     stderr=subprocess.PIPE, text=True, encoding="utf-8",
                                     bufsize=1, env=None if env is None else dict(env))
        self.lines: "queue.Queue[Optional[str]]" = queue.Queue()
        self.stderr_tail: Deque[str] = deque(maxlen=50)
        threading.Thread(target=self._pump_stdout, daemon=True).start()
        threading.Thread(target=self._pump_stderr, daemon=True).start()

    def _pump_stdout(self) -> None:
        for line in self.proc.stdout:
            self.lines.put(line)
        self.lines.put(None)

    def _pump_stderr(self) -> None:
        for line in self.proc.stderr:
            self.stderr_tail.append(line.rstrip("\n"))

    def diagnostics(self) -> str:
        return "\n".join(self.stderr_tail)

    def kill(self) -> None:
        if self.proc.poll() is None:
            self.proc.kill()
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            pass


class ExternalSimulator(Simulator):
    """Adapter for a simulator running as a child process.

    Parameters
    ----------
    command : str or list of str
        Command line of the child process.
    input_space : InputSpace, optional
        Admissible inputs.
    timeout : float
        Seconds to wait for each response line.
    pool_size : int
        Number of child processes serving batches in parallel.
    env : mapping, optional
        Environment of the child processes.
    """

    name = "external"

    def __init__(self, command: Union[str, Sequence[str]], input_space: Optional[InputSpace] = None,
                 timeout: float = 60.0, pool_size: int = 1,
                 env: Optional[Mapping[str, str]] = None):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.argv:
            raise SimulatorError("external simulator command is empty")
        if pool_size < 1:
            raise DomainError(f"pool_size must be >= 1, got {pool_size}")
        self.input_space = input_space
        self.timeout = float(timeout)
        self.pool_size = int(pool_size)
        self.env = env
        self._idle: "queue.Queue[_Worker]" = queue.Queue()
        self._spawned = 0
        self._lock = threading.Lock()
        self._all: List[_Worker] = []

    def _checkout(self) -> _Worker:
        while True:
            try:
                return self._idle.get_nowait()
            except queue.Empty:
                pass
            with self._lock:
                if self._spawned < self.pool_size:
                    try:
                        worker = _Worker(self.argv, self.env)
                    except OSError as exc:
                        raise SimulatorError(
                            f"cannot start external simulator {self.argv}: {exc}")
                    self._spawned += 1
                    self._all.append(worker)
                    return worker
            # a discarded worker frees a slot without going through the idle queue
            try:
                return self._idle.get(timeout=0.1)
            except queue.Empty:
                continue

    def _discard(self, worker: _Worker) -> None:
        worker.kill()
        with self._lock:
            self._spawned -= 1
            if worker in self._all:
                self._all.remove(worker)

    def external_draw_batch(self, x: Sequence[float], n: int, seed: int = 0) -> List[float]:
        """Request ``n`` draws at ``x`` from a child process.

        Raises
        ------
        SimulatorError
            If the process exits.
        SimulatorTimeoutError
            If no response arrives within ``timeout`` seconds.
        MalformedResponseError
            If the response is not ``{"draws": [n finite reals]}``.
        """
        coords = [float(v) for v in np.asarray(x, dtype=float).ravel()]
        request = json.dumps({"x": coords, "n": int(n), "seed": int(seed)},
                             separators=(",", ":")) + "\n"
        worker = self._checkout()
        try:
            try:
                worker.proc.stdin.write(request)
                worker.proc.stdin.flush()
            except (BrokenPipeError, OSError, ValueError):
                raise SimulatorError("external simulator closed its input", x=coords,
                                     diagnostics=worker.diagnostics())
            try:
                line = worker.lines.get(timeout=self.timeout)
            except queue.Empty:
                raise SimulatorTimeoutError(f"no response within {self.timeout:g} s", x=coords,
                                            diagnostics=worker.diagnostics())
            if line is None:
                worker.proc.wait(timeout=5)
                raise SimulatorError(
                    f"external simulator exited with code {worker.proc.returncode}",
                    x=coords, diagnostics=worker.diagnostics())
            draws = _parse_response(line, n, coords)
        except SimulatorError as exc:
            logger.error("External simulator failure: %s", exc.message)
            self._discard(worker)
            raise
        self._idle.put(worker)
        return draws

    def draw_batch(self, x: Sequence[float], n: int, seed: int) -> np.ndarray:
        return np.asarray(self.external_draw_batch(x, n, seed), dtype=float)

    def close(self) -> None:
        with self._lock:
            workers, self._all = list(self._all), []
            self._spawned = 0
        for worker in workers:
            try:
                worker.proc.stdin.close()
            except OSError:
                pass
            worker.kill()
        self._idle = queue.Queue()


def _parse_response(line: str, n: int, coords: List[float]) -> List[float]:
    try:
        payload = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedResponseError(f"response is not JSON: {exc}: {line[:200]!r}", x=coords)
    draws = payload.get("draws") if isinstance(payload, dict) else None
    if not isinstance(draws, list):
        raise MalformedResponseError("response has no 'draws' array", x=coords)
    if len(draws) != n:
        raise MalformedResponseError(f"response holds {len(draws)} draws, expected {n}", x=coords)
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)
               for v in draws):
        raise MalformedResponseError("response draws must be finite numbers", x=coords)
    return [float(v) for v in draws]


__all__ = [
    "TOY_LEVELS",
    "TOY_SPACE",
    "TOY_OPTIMUM",
    "make_stream",
    "Simulator",
    "toy_draw",
    "ToySimulator",
    "ReplaySimulator",
    "ExternalSimulator",
]
