from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, NamedTuple, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from models.errors import ParseError, SchemaError


DistanceKind = Literal["proximity", "mahalanobis", "semi_oracle"]


class MatchSpec(BaseModel):
    """Multiplicity bounds: treated units take m_t..M_t controls, controls m_c..M_c treateds."""

    model_config = ConfigDict(frozen=True)

    m_t: int = Field(default=1, ge=0)
    m_c: int = Field(default=1, ge=0)
    M_t: int = Field(default=2, ge=1)
    M_c: int = Field(default=2, ge=1)

    @model_validator(mode="after")
    def check_bounds(self: "MatchSpec") -> "MatchSpec":
        if self.m_t > self.M_t:
            raise ValueError(f"m_t={self.m_t} exceeds M_t={self.M_t}")
        if self.m_c > self.M_c:
            raise ValueError(f"m_c={self.m_c} exceeds M_c={self.M_c}")
        return self


class Pair(NamedTuple):
    treated: int
    control: int
    distance: float


@dataclass(frozen=True)
class Match:
    """A set of treated-control pairs; indices are positions in the treated/control groups."""

    pairs: tuple[Pair, ...]
    treated_count: int
    control_count: int
    _keys: frozenset = field(init=False, repr=False, compare=False)

    def __post_init__(self: "Match") -> None:
        pairs = tuple(sorted(Pair(int(t), int(c), float(d)) for t, c, d in self.pairs))
        keys = frozenset((p.treated, p.control) for p in pairs)
        if len(keys) != len(pairs):
            raise ValueError("match contains a duplicate (treated, control) pair")
        for p in pairs:
            if not (0 <= p.treated < self.treated_count and 0 <= p.control < self.control_count):
                raise ValueError(f"pair {p[:2]} out of range")
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "_keys", keys)

    @classmethod
    def from_edges(
        cls,
        edges: Sequence[tuple[int, int]],
        distances: np.ndarray,
    ) -> "Match":
        n_t, n_c = distances.shape
        return cls(
            pairs=tuple(Pair(t, c, float(distances[t, c])) for t, c in edges),
            treated_count=n_t,
            control_count=n_c,
        )

    def __len__(self: "Match") -> int:
        return len(self.pairs)

    def __contains__(self: "Match", edge: object) -> bool:
        return edge in self._keys

    @property
    def edges(self: "Match") -> frozenset:
        return self._keys

    @property
    def total(self: "Match") -> float:
        return float(sum(p.distance for p in self.pairs))

    @property
    def average(self: "Match") -> float:
        return self.total / len(self.pairs) if self.pairs else float("nan")

    def treated_degrees(self: "Match") -> np.ndarray:
        counts = Counter(p.treated for p in self.pairs)
        return np.array([counts.get(i, 0) for i in range(self.treated_count)], dtype=int)

    def control_degrees(self: "Match") -> np.ndarray:
        counts = Counter(p.control for p in self.pairs)
        return np.array([counts.get(j, 0) for j in range(self.control_count)], dtype=int)

    @property
    def max_treated_multiplicity(self: "Match") -> int:
        return int(self.treated_degrees().max(initial=0))

    @property
    def max_control_multiplicity(self: "Match") -> int:
        return int(self.control_degrees().max(initial=0))

    def satisfies(self: "Match", spec: MatchSpec, lower_bounds: bool = True) -> bool:
        t_deg, c_deg = self.treated_degrees(), self.control_degrees()
        if np.any(t_deg > spec.M_t) or np.any(c_deg > spec.M_c):
            return False
        if lower_bounds:
            return bool(np.all(t_deg >= spec.m_t) and np.all(c_deg >= spec.m_c))
        return True

    def without(self: "Match", edge: tuple[int, int]) -> "Match":
        return Match(
            pairs=tuple(p for p in self.pairs if (p.treated, p.control) != edge),
            treated_count=self.treated_count,
            control_count=self.control_count,
        )


class DistanceMatrix(BaseModel):
    """Dense treated x control cost matrix with the provenance of the distance."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray
    kind: DistanceKind
    treated_ids: tuple[str, ...]
    control_ids: tuple[str, ...]

    @field_validator("values", mode="before")
    @classmethod
    def coerce_values(cls, value) -> np.ndarray:
        values = np.array(value, dtype=float, copy=True)
        if values.ndim != 2:
            raise ValueError("distance values must be a 2-d matrix")
        if not np.all(np.isfinite(values)) or np.any(values < 0.0):
            raise ValueError("distances must be finite and nonnegative")
        values.setflags(write=False)
        return values

    @field_validator("treated_ids", "control_ids", mode="before")
    @classmethod
    def coerce_ids(cls, value) -> tuple[str, ...]:
        return tuple(str(item) for item in value)

    @model_validator(mode="after")
    def check_shape(self: "DistanceMatrix") -> "DistanceMatrix":
        if self.values.shape != (len(self.treated_ids), len(self.control_ids)):
            raise ValueError(
                f"distance shape {self.values.shape} does not match "
                f"{len(self.treated_ids)} treated x {len(self.control_ids)} control ids"
            )
        return self

    @classmethod
    def from_values(cls, values, kind: DistanceKind = "proximity") -> "DistanceMatrix":
        values = np.asarray(values, dtype=float)
        return cls(
            values=values,
            kind=kind,
            treated_ids=[f"t{i + 1}" for i in range(values.shape[0])],
            control_ids=[f"c{j + 1}" for j in range(values.shape[1])],
        )

    @property
    def shape(self: "DistanceMatrix") -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class MatchSolution:
    match: Match
    objective: Literal["avg", "total"]
    probes: dict[int, float] = field(default_factory=dict, compare=False)

    @property
    def total(self: "MatchSolution") -> float:
        return self.match.total

    @property
    def average(self: "MatchSolution") -> float:
        return self.match.average

    @property
    def pairs_count(self: "MatchSolution") -> int:
        return len(self.match)


PAIR_COLUMNS = ("treated_id", "control_id", "distance")


def save_pairs(
    match: Match, treated_ids: Sequence[str], control_ids: Sequence[str], path: str | Path
) -> None:
    frame = pd.DataFrame(
        [(treated_ids[p.treated], control_ids[p.control], repr(p.distance)) for p in match.pairs],
        columns=list(PAIR_COLUMNS),
    )
    frame.to_csv(path, index=False, encoding="utf-8")


def load_pairs(
    path: str | Path, D: DistanceMatrix | None = None
) -> tuple[Match, tuple[str, ...], tuple[str, ...]]:
    """Read a pair CSV; ids index into D when given, else into their order of appearance."""
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    missing = [name for name in PAIR_COLUMNS if name not in frame.columns]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")

    if D is not None:
        treated_ids, control_ids = D.treated_ids, D.control_ids
    else:
        treated_ids = tuple(dict.fromkeys(frame["treated_id"]))
        control_ids = tuple(dict.fromkeys(frame["control_id"]))
    treated_pos = {name: i for i, name in enumerate(treated_ids)}
    control_pos = {name: j for j, name in enumerate(control_ids)}

    pairs = []
    for row, (t, c, distance) in enumerate(frame[list(PAIR_COLUMNS)].itertuples(index=False), start=1):
        if t not in treated_pos or c not in control_pos:
            raise ParseError(f"unknown unit id in pair ({t}, {c})", row)
        try:
            value = float(distance)
        except ValueError:
            raise ParseError(f"distance {distance!r} is not a number", row) from None
        pairs.append(Pair(treated_pos[t], control_pos[c], value))
    match = Match(pairs=tuple(pairs), treated_count=len(treated_ids), control_count=len(control_ids))
    return match, tuple(treated_ids), tuple(control_ids)
