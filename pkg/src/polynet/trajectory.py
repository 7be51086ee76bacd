"""Time series containers and their CSV formats."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def fmt(v) -> str:
    """Shortest decimal text that parses back to the same double."""
    return repr(float(v))


@dataclass
class Trajectory:
    """States ``x_0 .. x_n`` on the grid ``t_k = k * h``."""

    times: np.ndarray
    states: np.ndarray
    method: str = ""
    h: float = 0.0
    matched: bool = False
    engine: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        if len(self.times) != len(self.states):
            raise ValueError(
                f"{len(self.times)} times but {len(self.states)} states"
            )

    @classmethod
    def from_states(cls, states, h, **kw) -> Trajectory:
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        return cls(grid(len(states), h), states, h=h, **kw)

    def __len__(self):
        return len(self.times)

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def n_vars(self) -> int:
        return self.states.shape[1]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def write_csv(self, path):
        """Write ``step,t,x0,...,x{N-1}`` rows with round-trip precision."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "t"] + [f"x{i}" for i in range(self.n_vars)])
            for k, (t, x) in enumerate(zip(self.times, self.states)):
                w.writerow([k, fmt(t)] + [fmt(v) for v in x])

    @classmethod
    def read_csv(cls, path, **kw) -> Trajectory:
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header[:2] != ["step", "t"]:
            raise ValueError(f"{path}: not a trajectory CSV (header {header})")
        times = [float(r[1]) for r in body]
        states = [[float(v) for v in r[2:]] for r in body]
        if not body:
            states = np.zeros((0, len(header) - 2))
        h = times[1] - times[0] if len(times) > 1 else 0.0
        return cls(np.array(times), np.array(states, dtype=np.float64).reshape(len(body), -1),
                   h=kw.pop("h", h), **kw)


def grid(n_points: int, h: float) -> np.ndarray:
    return np.arange(n_points, dtype=np.float64) * h


@dataclass
class DivergenceSeries:
    """Euclidean distance between two trajectories at each grid time."""

    times: np.ndarray
    distances: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.distances = np.asarray(self.distances, dtype=np.float64)
        if self.times.shape != self.distances.shape:
            raise ValueError("times and distances differ in length")

    def __len__(self):
        return len(self.times)

    @property
    def max_distance(self) -> float:
        return float(self.distances.max()) if len(self) else 0.0

    def first_exceedance(self, threshold: float):
        """Index of the first distance strictly above ``threshold``, or ``None``."""
        hits = np.flatnonzero(self.distances > threshold)
        return int(hits[0]) if hits.size else None

    def write_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "distance"])
            for t, d in zip(self.times, self.distances):
                w.writerow([fmt(t), fmt(d)])

    @classmethod
    def read_csv(cls, path, label="") -> DivergenceSeries:
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        return cls([float(r[0]) for r in rows], [float(r[1]) for r in rows], label)
