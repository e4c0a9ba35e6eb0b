"""KPI-poisoning attack: amplified per-UE multivariate normal replacement.

For every victim UE the attacker fits a Gaussian to the UE's genuine
KPI vectors, scales both the mean and the covariance by a factor ``f``, and
overwrites the reports inside the attack intervals with draws from the
amplified model.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import INTEGER_COLS, N_FEATURES
from .emulator import Slice, population, EmulationConfig
from .errors import DomainError, InsufficientDataError, NumericError, PlanError, PlanningError
from .records import BENIGN, POISONED, Dataset, quantize

JITTER_REL = 1e-6
JITTER_ABS = 1e-12  # floor so an all-zero covariance still factorises


@dataclass(frozen=True)
class MvnModel:
    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray
    jitter: float

    @classmethod
    def from_moments(cls, mean, cov) -> "MvnModel":
        mean = np.asarray(mean, dtype=np.float64).copy()
        cov = np.asarray(cov, dtype=np.float64).copy()
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of length {d}")
        jitter = max(JITTER_REL * np.trace(cov) / d, JITTER_ABS)
        try:
            chol = np.linalg.cholesky(cov + jitter * np.eye(d))
        except np.linalg.LinAlgError as e:
            raise NumericError(f"covariance not positive definite after jitter {jitter:g}") from e
        if not np.all(np.isfinite(chol)):
            raise NumericError("non-finite Cholesky factor")
        return cls(mean, cov, chol, jitter)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def mahalanobis(self, x: np.ndarray) -> np.ndarray:
        """Distance of each row of ``x`` from the mean under the jittered covariance."""
        diff = np.atleast_2d(x) - self.mean
        z = _solve_lower(self.chol, diff.T)
        return np.sqrt(np.sum(z * z, axis=0))


def _solve_lower(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Forward substitution for lower-triangular ``L``; ``b`` may have columns."""
    n = L.shape[0]
    x = np.array(b, dtype=np.float64, copy=True)
    for i in range(n):
        x[i] = (x[i] - L[i, :i] @ x[:i]) / L[i, i]
    return x


def fit_mvn(features: np.ndarray) -> MvnModel:
    """Sample mean and unbiased covariance over rows of ``features``."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] <= x.shape[1]:
        raise InsufficientDataError(
            f"need more than {x.shape[-1]} records to fit a {x.shape[-1]}-D normal, got {x.shape[0]}"
        )
    mean = x.mean(axis=0)
    centred = x - mean
    cov = centred.T @ centred / (x.shape[0] - 1)
    cov = 0.5 * (cov + cov.T)
    return MvnModel.from_moments(mean, cov)


def amplify(model: MvnModel, f: float) -> MvnModel:
    if not f > 0:
        raise DomainError(f"amplification factor must be > 0, got {f}")
    if f == 1.0:
        return model
    return MvnModel.from_moments(f * model.mean, f * model.cov)


def sample(model: MvnModel, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """Draw KPI vectors, snapped onto the record domain.

    Returns one 6-vector, or ``(size, 6)`` when ``size`` is given.
    """
    n = 1 if size is None else size
    z = rng.standard_normal((n, model.dim))
    x = model.mean + z @ model.chol.T
    x = quantize(x)
    return x[0] if size is None else x


def raw_sample(model: MvnModel, rng: np.random.Generator, size: int) -> np.ndarray:
    z = rng.standard_normal((size, model.dim))
    return model.mean + z @ model.chol.T


class InjectionPoint(str, enum.Enum):
    E2_INTERFACE_MITM = "E2_INTERFACE_MITM"
    COMPROMISED_E2_NODE = "COMPROMISED_E2_NODE"


@dataclass(frozen=True)
class IntervalSpec:
    n_intervals: int = 6
    min_len_s: int = 60
    max_len_s: int = 300


@dataclass
class AttackPlan:
    victims: dict[int, list[tuple[int, int]]]
    amplification_factor: float
    injection_point: InjectionPoint = InjectionPoint.E2_INTERFACE_MITM
    seed: int = 0

    def validate(self, duration_s: Optional[int] = None) -> None:
        if not self.amplification_factor > 0:
            raise DomainError("amplification factor must be > 0")
        for ue, ivs in self.victims.items():
            prev_end = None
            for a, b in sorted(ivs):
                if a >= b or a < 0 or (duration_s is not None and b > duration_s):
                    raise PlanningError(f"UE {ue}: bad interval [{a}, {b})")
                if prev_end is not None and a < prev_end:
                    raise PlanningError(f"UE {ue}: overlapping intervals")
                prev_end = b

    def with_factor(self, f: float) -> "AttackPlan":
        return AttackPlan(
            {u: list(iv) for u, iv in self.victims.items()}, f, self.injection_point, self.seed
        )

    def n_poisoned(self) -> int:
        return sum(b - a for ivs in self.victims.values() for a, b in ivs)

    def to_json(self) -> str:
        doc = {
            "amplification_factor": self.amplification_factor,
            "injection_point": self.injection_point.value,
            "seed": self.seed,
            "victims": [
                {"ue_id": ue, "intervals": [[a, b] for a, b in ivs]}
                for ue, ivs in sorted(self.victims.items())
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "AttackPlan":
        doc = json.loads(text)
        victims = {
            int(v["ue_id"]): [(int(a), int(b)) for a, b in v["intervals"]] for v in doc["victims"]
        }
        plan = cls(
            victims,
            float(doc["amplification_factor"]),
            InjectionPoint(doc.get("injection_point", "E2_INTERFACE_MITM")),
            int(doc.get("seed", 0)),
        )
        plan.validate()
        return plan


def _draw_intervals(duration: int, spec: IntervalSpec, rng: np.random.Generator):
    """Non-overlapping ``[start, end)`` intervals placed uniformly at random.

    Lengths are drawn first; the free time is then scattered uniformly
    into the gaps (stars-and-bars), which yields uniformly placed,
    non-overlapping intervals without rejection.
    """
    k = spec.n_intervals
    if k == 0:
        return []
    lengths = rng.integers(spec.min_len_s, spec.max_len_s + 1, size=k)
    slack = duration - int(lengths.sum())
    if slack < 0:
        raise PlanningError(
            f"{k} intervals of {spec.min_len_s}-{spec.max_len_s} s cannot fit in {duration} s"
        )
    cuts = np.sort(rng.integers(0, slack + 1, size=k))
    out, cursor, used_gap = [], 0, 0
    for length, cut in zip(lengths, cuts):
        cursor += int(cut) - used_gap
        used_gap = int(cut)
        out.append((cursor, cursor + int(length)))
        cursor += int(length)
    return out


def make_plan(
    dataset: Dataset,
    n_victims_per_slice: int,
    f: float,
    interval_spec: IntervalSpec,
    rng: np.random.Generator,
    *,
    slices: Optional[dict[int, Slice]] = None,
    injection_point: InjectionPoint = InjectionPoint.E2_INTERFACE_MITM,
) -> AttackPlan:
    """Pick victims per slice and schedule their attack intervals.

    ``slices`` maps ue_id to slice; when omitted every UE is treated as
    one slice.
    """
    if not f > 0:
        raise DomainError(f"amplification factor must be > 0, got {f}")
    spec = interval_spec
    if spec.n_intervals < 0 or spec.min_len_s < 1 or spec.max_len_s < spec.min_len_s:
        raise PlanningError(f"invalid interval spec {spec}")
    ue_ids = [int(u) for u in dataset.ue_ids()]
    if slices is None:
        slices = {u: Slice.EMBB for u in ue_ids}
    duration = int(dataset.timestamp.max()) + 1 if len(dataset) else 0
    if spec.n_intervals and spec.n_intervals * spec.min_len_s > duration:
        raise PlanningError(
            f"{spec.n_intervals} intervals of >= {spec.min_len_s} s cannot fit in {duration} s"
        )
    victims: dict[int, list[tuple[int, int]]] = {}
    for sl in Slice:
        members = sorted(u for u in ue_ids if slices.get(u) == sl)
        if not members:
            continue
        if n_victims_per_slice > len(members):
            raise PlanningError(
                f"{n_victims_per_slice} victims requested from a {sl.value} population of {len(members)}"
            )
        chosen = rng.choice(members, size=n_victims_per_slice, replace=False)
        for ue in sorted(int(u) for u in chosen):
            victims[ue] = _draw_intervals(duration, spec, rng)
    plan = AttackPlan(victims, float(f), injection_point, int(rng.integers(0, 2**63)))
    plan.validate(duration)
    return plan


def plan_for_config(
    dataset: Dataset,
    config: EmulationConfig,
    n_victims_per_slice: int,
    f: float,
    interval_spec: IntervalSpec,
    rng: np.random.Generator,
    **kwargs,
) -> AttackPlan:
    slices = {p.ue_id: p.slice for p in population(config)}
    return make_plan(dataset, n_victims_per_slice, f, interval_spec, rng, slices=slices, **kwargs)


@dataclass
class GroundTruth:
    labels: np.ndarray  # per dataset row, BENIGN / POISONED

    def __len__(self):
        return len(self.labels)

    @property
    def n_poisoned(self) -> int:
        return int(np.sum(self.labels == POISONED))


def interval_mask(dataset: Dataset, plan: AttackPlan) -> np.ndarray:
    mask = np.zeros(len(dataset), dtype=bool)
    for ue, ivs in plan.victims.items():
        rows = dataset.ue_id == ue
        for a, b in ivs:
            mask |= rows & (dataset.timestamp >= a) & (dataset.timestamp < b)
    return mask


def poison(dataset: Dataset, plan: AttackPlan) -> tuple[Dataset, GroundTruth]:
    """Overwrite every in-interval record of each victim with an amplified draw.

    Each victim's generator is derived from ``(plan.seed, ue_id)`` so the
    result does not depend on processing order.
    """
    present = set(int(u) for u in dataset.ue_ids())
    missing = sorted(set(plan.victims) - present)
    if missing:
        raise PlanError(f"victim UE(s) {missing} not present in dataset")
    out = dataset.copy()
    labels = np.full(len(dataset), BENIGN, dtype=np.int8)
    f = plan.amplification_factor
    for ue in sorted(plan.victims):
        rows = dataset.ue_id == ue
        hit = np.zeros(len(dataset), dtype=bool)
        for a, b in plan.victims[ue]:
            hit |= rows & (dataset.timestamp >= a) & (dataset.timestamp < b)
        n_hit = int(hit.sum())
        if n_hit == 0:
            continue
        model = amplify(fit_mvn(dataset.features[rows & ~hit]), f)
        rng = np.random.default_rng([plan.seed, ue])
        out.features[hit] = sample(model, rng, size=n_hit)
        labels[hit] = POISONED
    return out, GroundTruth(labels)
