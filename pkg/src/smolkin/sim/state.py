"""Particle configurations and collision records."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .cells import CellIndex


@dataclass(frozen=True)
class Particle:
    id: int
    position: np.ndarray
    mass: int
    alive: bool
    vanish_time: float | None = None

    @property
    def status(self) -> str:
        return "alive" if self.alive else "cemetery"


@dataclass(frozen=True)
class CollisionEvent:
    time: float
    id_i: int
    id_j: int
    m_i: int
    m_j: int
    survivor: int | None
    location: tuple

    def row(self):
        loc = list(self.location) + [float("nan")] * (3 - len(self.location))
        return [repr(float(self.time)), self.id_i, self.id_j, self.m_i, self.m_j,
                "" if self.survivor is None else self.survivor] + [repr(float(c)) for c in loc[:3]]


EVENT_HEADER = ["time", "id_i", "id_j", "m_i", "m_j", "survivor_id", "x", "y", "z"]


def write_events_csv(events, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EVENT_HEADER)
        for e in events:
            w.writerow(e.row())


@dataclass
class SimState:
    """Whole configuration: arrays indexed by particle id.

    Dead particles keep their last position and mass; ``death_time`` is
    ``nan`` while alive.
    """

    positions: np.ndarray
    masses: np.ndarray
    alive: np.ndarray
    death_time: np.ndarray
    time: float = 0.0
    periodic: bool = False
    L: float = 1.0
    seed: int = 0
    step_index: int = 0
    events: list = field(default_factory=list)
    annihilation: bool = False

    @classmethod
    def fresh(cls, positions, masses, periodic=False, L=1.0, seed=0, annihilation=False):
        positions = np.array(positions, dtype=float, ndmin=2)
        n = positions.shape[0]
        return cls(positions=positions, masses=np.array(masses, dtype=np.int64).reshape(n),
                   alive=np.ones(n, dtype=bool), death_time=np.full(n, np.nan),
                   periodic=periodic, L=L, seed=int(seed) % 2 ** 64, annihilation=annihilation)

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def n_alive(self) -> int:
        return int(self.alive.sum())

    @property
    def alive_mass(self) -> int:
        return int(self.masses[self.alive].sum())

    def particle(self, i: int) -> Particle:
        return Particle(i, self.positions[i].copy(), int(self.masses[i]), bool(self.alive[i]),
                        None if self.alive[i] else float(self.death_time[i]))

    def cell_index(self, cell: float) -> CellIndex:
        return CellIndex(self.positions, self.alive, cell, self.periodic, self.L)

    def copy(self) -> "SimState":
        return SimState(self.positions.copy(), self.masses.copy(), self.alive.copy(),
                        self.death_time.copy(), self.time, self.periodic, self.L, self.seed,
                        self.step_index, list(self.events), self.annihilation)

    def snapshot(self):
        """Light copy of the alive configuration for observers."""
        a = self.alive
        return Snapshot(self.time, self.positions[a].copy(), self.masses[a].copy(),
                        np.flatnonzero(a))


@dataclass(frozen=True)
class Snapshot:
    time: float
    positions: np.ndarray
    masses: np.ndarray
    ids: np.ndarray

    @property
    def n_alive(self) -> int:
        return int(self.ids.size)
