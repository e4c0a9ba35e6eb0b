"""Deterministic benign KPI emulation for a small multi-gNB RAN.

Each UE carries two AR(1) throughput processes (UL and DL). PRB usage and
packet rates are derived from the throughputs each second, plus small
integer noise, so the six reported KPIs are correlated the way a real
report would be.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError
from .records import Dataset, KpiRecord, quantize

PER_PRB_RATE_MBPS = 10.0
MEAN_PACKET_BYTES = 1200

# slice archetypes: (UL lo, UL hi), (DL lo, DL hi) throughput means in Mbps
SLICE_THP_RANGES = {
    "eMBB": ((5.0, 20.0), (20.0, 80.0)),
    "URLLC": ((0.5, 5.0), (1.0, 10.0)),
}
RHO_RANGE = (0.6, 0.9)
# stationary coefficient of variation of the throughput processes
CV_RANGE = (0.20, 0.40)
PRB_NOISE_STD = 0.5
PACKET_NOISE_REL = 0.02


class Slice(str, enum.Enum):
    EMBB = "eMBB"
    URLLC = "URLLC"


@dataclass(frozen=True)
class Gnb:
    gnb_id: str
    ocu_id: str
    odu_ids: tuple[str, str, str]
    cell_ids: tuple[str, str, str]


@dataclass(frozen=True)
class Topology:
    gnbs: tuple[Gnb, ...]

    @property
    def odu_ids(self) -> list[str]:
        return [o for g in self.gnbs for o in g.odu_ids]

    @property
    def cell_ids(self) -> list[str]:
        return [c for g in self.gnbs for c in g.cell_ids]

    def odu_of_cell(self, cell_id: str) -> str:
        for g in self.gnbs:
            for odu, cell in zip(g.odu_ids, g.cell_ids):
                if cell == cell_id:
                    return odu
        raise KeyError(cell_id)

    def home_cell(self, ue_id: int) -> str:
        """Round-robin UE placement; UE ids start at 1."""
        cells = self.cell_ids
        return cells[(ue_id - 1) % len(cells)]

    def odu_of_ue(self, ue_id: int) -> str:
        return self.odu_of_cell(self.home_cell(ue_id))


@dataclass(frozen=True)
class UeProfile:
    ue_id: int
    slice: Slice
    home_cell: str
    mean: np.ndarray  # 6 features, dataset order
    rho: float
    sigma: np.ndarray  # thp: innovation std; counts: integer-noise std

    def __post_init__(self):
        if np.any(self.mean < 0) or np.any(self.sigma < 0):
            raise ConfigError(f"UE {self.ue_id}: negative traffic parameter")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError(f"UE {self.ue_id}: rho={self.rho} outside [0, 1)")

    def stationary_std(self) -> np.ndarray:
        """Stationary std of the two throughput processes (UL, DL)."""
        return self.sigma[[0, 2]] / math.sqrt(1.0 - self.rho**2)


@dataclass
class EmulationConfig:
    n_ues: int = 50
    duration_s: int = 10800
    report_period_s: int = 1
    slice_split: tuple[int, int] = (25, 25)
    n_gnbs: int = 3
    seed: int = 0

    def __post_init__(self):
        self.slice_split = tuple(int(s) for s in self.slice_split)

    def validate(self) -> None:
        if self.n_ues < 1:
            raise ConfigError("n_ues must be >= 1")
        if self.duration_s < 1:
            raise ConfigError("duration_s must be >= 1")
        if self.report_period_s != 1:
            raise ConfigError("report_period_s is fixed at 1")
        if len(self.slice_split) != 2 or any(s < 0 for s in self.slice_split):
            raise ConfigError("slice_split must be two non-negative counts (eMBB, URLLC)")
        if sum(self.slice_split) != self.n_ues:
            raise ConfigError(f"slice_split {self.slice_split} does not sum to n_ues={self.n_ues}")
        if self.n_gnbs < 1:
            raise ConfigError("n_gnbs must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["slice_split"] = list(self.slice_split)
        return d


def build_topology(config: EmulationConfig) -> Topology:
    config.validate()
    gnbs = []
    for g in range(config.n_gnbs):
        odus = tuple(f"odu-{g}-{k}" for k in range(3))
        cells = tuple(f"cell-{g}-{k}" for k in range(3))
        gnbs.append(Gnb(f"gnb-{g}", f"ocu-{g}", odus, cells))
    return Topology(tuple(gnbs))


def derived_means(thp_ul: float, thp_dl: float) -> np.ndarray:
    """Six-feature fixed point implied by the throughput means."""
    return np.array(
        [
            thp_ul,
            _prb(thp_ul),
            thp_dl,
            _prb(thp_dl),
            _packets(thp_ul),
            _packets(thp_dl),
        ]
    )


def _prb(thp):
    return np.ceil(np.asarray(thp) / PER_PRB_RATE_MBPS)


def _packets(thp):
    return np.rint(np.asarray(thp) * 1e6 / (8 * MEAN_PACKET_BYTES))


def make_population(config: EmulationConfig, rng: np.random.Generator) -> list[UeProfile]:
    config.validate()
    topo = build_topology(config)
    slices = [Slice.EMBB] * config.slice_split[0] + [Slice.URLLC] * config.slice_split[1]
    profiles = []
    for i, sl in enumerate(slices):
        ue_id = i + 1
        (ul_lo, ul_hi), (dl_lo, dl_hi) = SLICE_THP_RANGES[sl.value]
        mu_ul = rng.uniform(ul_lo, ul_hi)
        mu_dl = rng.uniform(dl_lo, dl_hi)
        rho = rng.uniform(*RHO_RANGE)
        cv = rng.uniform(*CV_RANGE)
        innov = cv * math.sqrt(1.0 - rho**2)
        mean = derived_means(mu_ul, mu_dl)
        sigma = np.array(
            [
                innov * mu_ul,
                PRB_NOISE_STD,
                innov * mu_dl,
                PRB_NOISE_STD,
                PACKET_NOISE_REL * mean[4],
                PACKET_NOISE_REL * mean[5],
            ]
        )
        profiles.append(UeProfile(ue_id, sl, topo.home_cell(ue_id), mean, rho, sigma))
    return profiles


@dataclass
class EmulatorState:
    """Per-UE AR(1) state for the two throughput processes."""

    profiles: list[UeProfile]
    thp: np.ndarray  # (n_ues, 2): last UL, DL throughput
    _mu: np.ndarray = field(init=False, repr=False)
    _rho: np.ndarray = field(init=False, repr=False)
    _sigma: np.ndarray = field(init=False, repr=False)
    _ids: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._mu = np.array([p.mean[[0, 2]] for p in self.profiles]).reshape(-1, 2)
        self._rho = np.array([p.rho for p in self.profiles]).reshape(-1, 1)
        self._sigma = np.array([p.sigma for p in self.profiles]).reshape(-1, 6)
        self._ids = np.array([p.ue_id for p in self.profiles], dtype=np.int64)

    @classmethod
    def initial(cls, profiles: list[UeProfile], rng: np.random.Generator) -> "EmulatorState":
        """Start every UE from its stationary distribution."""
        mu = np.array([p.mean[[0, 2]] for p in profiles]).reshape(-1, 2)
        std = np.array([p.stationary_std() for p in profiles]).reshape(-1, 2)
        thp = np.maximum(mu + std * rng.standard_normal(mu.shape), 0.0)
        return cls(profiles, thp)


def _step_features(state: EmulatorState, rng: np.random.Generator) -> np.ndarray:
    n = len(state.profiles)
    eps = rng.standard_normal((n, 2)) * state._sigma[:, [0, 2]]
    thp = state._mu + state._rho * (state.thp - state._mu) + eps
    thp = np.maximum(thp, 0.0)
    state.thp = thp
    noise = np.rint(rng.standard_normal((n, 4)) * state._sigma[:, [1, 3, 4, 5]])
    out = np.empty((n, 6))
    out[:, 0] = thp[:, 0]
    out[:, 2] = thp[:, 1]
    out[:, 1] = _prb(thp[:, 0]) + noise[:, 0]
    out[:, 3] = _prb(thp[:, 1]) + noise[:, 1]
    out[:, 4] = _packets(thp[:, 0]) + noise[:, 2]
    out[:, 5] = _packets(thp[:, 1]) + noise[:, 3]
    return quantize(out)


def step(state: EmulatorState, t: int, rng: np.random.Generator) -> list[KpiRecord]:
    """Advance every UE by one report period and emit one record each."""
    if t < 0:
        raise ValueError("t must be >= 0")
    feats = _step_features(state, rng)
    return [KpiRecord.from_row(t, uid, row) for uid, row in zip(state._ids, feats)]


def run(config: EmulationConfig, profiles: Optional[list[UeProfile]] = None) -> Dataset:
    """Emulate ``config.duration_s`` seconds of per-UE reports."""
    config.validate()
    rng = np.random.default_rng([config.seed, 0xE11])
    if profiles is None:
        profiles = make_population(config, rng)
    state = EmulatorState.initial(profiles, rng)
    n, T = len(profiles), config.duration_s
    feats = np.empty((T, n, 6))
    for t in range(T):
        feats[t] = _step_features(state, rng)
    # profiles are built in ue_id order, so (t, ue) order is row-major here
    ts = np.repeat(np.arange(T, dtype=np.int64), n)
    ues = np.tile(state._ids, T)
    return Dataset(ts, ues, feats.reshape(-1, 6), check=False)


def population(config: EmulationConfig) -> list[UeProfile]:
    """The profiles ``run`` would draw for this config."""
    return make_population(config, np.random.default_rng([config.seed, 0xE11]))
