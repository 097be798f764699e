"""Discrete-time, place-based epidemic simulation.

A declarative state machine (states, transition probabilities, dwell times)
drives agents over the places of a synthetic population. Susceptible agents
sharing a place with m transmissible agents are exposed with probability
1 - (1 - tau)^m per step (Reed-Frost contact model). Entries into logged
states emit geolocated incidents at the agent's household coordinates.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import yaml

from .errors import ConfigurationError, ModelValidationError
from .synthpop import Population

PROB_TOL = 1e-9


@dataclass(frozen=True)
class DwellSpec:
    """Either a fixed number of steps or a uniform integer range [a, b]."""

    kind: str  # 'fixed' | 'uniform'
    a: int
    b: int

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "fixed":
            return np.full(size, self.a, dtype=np.int64)
        return rng.integers(self.a, self.b + 1, size=size)


@dataclass
class TransitionModel:
    name: str
    step_unit: str  # 'day' | 'month'
    states: list[str]
    susceptible_state: str
    exposed_state: str
    transitions: dict[str, list[tuple[str, float]]]
    dwell: dict[str, DwellSpec]
    transmissible_states: set[str]
    transmissibility: float
    logged_states: set[str]
    stay_home_states: set[str] = field(default_factory=set)

    def state_index(self, name: str) -> int:
        return self.states.index(name)

    @property
    def terminal_states(self) -> set[str]:
        return {
            s
            for s in self.states
            if s != self.susceptible_state and s not in self.transitions
        }

    def validate(self) -> None:
        if len(set(self.states)) != len(self.states):
            raise ModelValidationError(f"{self.name}: duplicate state names")
        if self.step_unit not in ("day", "month"):
            raise ModelValidationError(
                f"{self.name}: step_unit must be 'day' or 'month'"
            )
        known = set(self.states)
        for attr, names in [
            ("susceptible_state", {self.susceptible_state}),
            ("exposed_state", {self.exposed_state}),
            ("transmissible_states", self.transmissible_states),
            ("logged_states", self.logged_states),
            ("stay_home_states", self.stay_home_states),
        ]:
            bad = names - known
            if bad:
                raise ModelValidationError(
                    f"{self.name}: unknown state(s) in {attr}: {sorted(bad)}"
                )
        if self.exposed_state == self.susceptible_state:
            raise ModelValidationError(
                f"{self.name}: exposed_state must differ from susceptible_state"
            )
        if self.susceptible_state in self.transitions:
            raise ModelValidationError(
                f"{self.name}: susceptible state is left only via exposure, "
                "it cannot have a transition row"
            )
        if self.susceptible_state in self.dwell:
            raise ModelValidationError(
                f"{self.name}: susceptible state cannot have a dwell time"
            )
        if self.transmissibility < 0:
            raise ModelValidationError(f"{self.name}: transmissibility must be >= 0")
        for state, row in self.transitions.items():
            if state not in known:
                raise ModelValidationError(f"{self.name}: unknown state '{state}'")
            for to, p in row:
                if to not in known:
                    raise ModelValidationError(
                        f"{self.name}: transition {state} -> unknown state '{to}'"
                    )
                if not (0.0 <= p <= 1.0):
                    raise ModelValidationError(
                        f"{self.name}: probability {state} -> {to} = {p} outside [0, 1]"
                    )
            total = sum(p for _, p in row)
            if abs(total - 1.0) > PROB_TOL:
                raise ModelValidationError(
                    f"{self.name}: outgoing probabilities from '{state}' "
                    f"sum to {total}, expected 1"
                )
        for state, spec in self.dwell.items():
            if state not in known:
                raise ModelValidationError(f"{self.name}: dwell for unknown state '{state}'")
            if spec.kind == "fixed" and spec.a < 1:
                raise ModelValidationError(
                    f"{self.name}: fixed dwell for '{state}' must be >= 1"
                )
            if spec.kind == "uniform" and not (1 <= spec.a <= spec.b):
                raise ModelValidationError(
                    f"{self.name}: uniform dwell for '{state}' needs 1 <= a <= b"
                )


def _parse_dwell(raw: dict) -> DwellSpec:
    if not isinstance(raw, dict) or len(raw) != 1:
        raise ModelValidationError(f"dwell spec must be {{fixed: k}} or {{uniform: [a, b]}}, got {raw!r}")
    ((kind, val),) = raw.items()
    if kind == "fixed":
        return DwellSpec("fixed", int(val), int(val))
    if kind == "uniform":
        if not (isinstance(val, (list, tuple)) and len(val) == 2):
            raise ModelValidationError(f"uniform dwell needs [a, b], got {val!r}")
        return DwellSpec("uniform", int(val[0]), int(val[1]))
    raise ModelValidationError(f"unknown dwell kind '{kind}'")


def load_model(source) -> TransitionModel:
    """Load and validate a TransitionModel from a YAML file path or a dict."""
    if isinstance(source, dict):
        raw = source
    else:
        try:
            with open(source) as fh:
                raw = yaml.safe_load(fh)
        except FileNotFoundError:
            raise ConfigurationError(f"model config not found: {source}")
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"cannot parse model config {source}: {exc}")
        if not isinstance(raw, dict):
            raise ConfigurationError(f"model config {source} must be a mapping")
    required = {"name", "step_unit", "states", "susceptible_state", "exposed_state",
                "transitions", "transmissibility", "logged_states"}
    missing = required - set(raw)
    if missing:
        raise ModelValidationError(f"model config missing keys: {sorted(missing)}")
    transitions = {}
    for state, row in (raw["transitions"] or {}).items():
        if not isinstance(row, dict):
            raise ModelValidationError(f"transition row for '{state}' must be a mapping")
        transitions[state] = [(to, float(p)) for to, p in row.items()]
    dwell = {s: _parse_dwell(d) for s, d in (raw.get("dwell") or {}).items()}
    # states that progress but carry no explicit dwell stay one step
    for state in transitions:
        dwell.setdefault(state, DwellSpec("fixed", 1, 1))
    model = TransitionModel(
        name=str(raw["name"]),
        step_unit=str(raw["step_unit"]).lower(),
        states=[str(s) for s in raw["states"]],
        susceptible_state=str(raw["susceptible_state"]),
        exposed_state=str(raw["exposed_state"]),
        transitions=transitions,
        dwell=dwell,
        transmissible_states=set(raw.get("transmissible_states") or []),
        transmissibility=float(raw["transmissibility"]),
        logged_states=set(raw["logged_states"]),
        stay_home_states=set(raw.get("stay_home_states") or []),
    )
    model.validate()
    return model


@dataclass(frozen=True)
class IncidentRecord:
    step: int
    agent_id: int
    state: str
    x: float
    y: float
    zone_id: int


@dataclass
class IncidentLog:
    records: list[IncidentRecord]

    def __len__(self) -> int:
        return len(self.records)

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "agent_id", "state", "x", "y", "zone_id"])
            for r in self.records:
                w.writerow([r.step, r.agent_id, r.state, repr(r.x), repr(r.y), r.zone_id])

    @classmethod
    def from_csv(cls, path: str) -> "IncidentLog":
        records = []
        try:
            with open(path, newline="") as fh:
                for i, row in enumerate(csv.DictReader(fh), start=2):
                    records.append(
                        IncidentRecord(
                            step=int(row["step"]),
                            agent_id=int(row["agent_id"]),
                            state=row["state"],
                            x=float(row["x"]),
                            y=float(row["y"]),
                            zone_id=int(row["zone_id"]),
                        )
                    )
        except FileNotFoundError:
            raise ConfigurationError(f"incident log not found: {path}")
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigurationError(f"malformed incident CSV {path}, line {i}: {exc}")
        return cls(records)


@dataclass(frozen=True)
class SeedingSpec:
    """How initial cases are injected: k agents moved to target_state.

    When `zones` is given, seeds are drawn only from agents whose household
    lies in one of those zones (clustered seeding).
    """

    count: int
    target_state: str
    zones: Optional[list[int]] = None


class Simulation:
    """One replicate of a transition-model simulation over a population.

    Holds vectorized agent state; the RNG sequence defines the result, so a
    replicate is single-threaded. Distinct replicates share nothing mutable.
    """

    def __init__(self, model: TransitionModel, pop: Population, seed: int):
        model.validate()
        self.model = model
        self.pop = pop
        self.rng = np.random.default_rng(seed)
        n = pop.n_agents
        ns = len(model.states)

        self._code = {s: i for i, s in enumerate(model.states)}
        self._susceptible = self._code[model.susceptible_state]
        self._exposed = self._code[model.exposed_state]
        self._transmissible = np.zeros(ns, dtype=bool)
        for s in model.transmissible_states:
            self._transmissible[self._code[s]] = True
        self._logged = np.zeros(ns, dtype=bool)
        for s in model.logged_states:
            self._logged[self._code[s]] = True
        self._stay_home = np.zeros(ns, dtype=bool)
        for s in model.stay_home_states:
            self._stay_home[self._code[s]] = True
        self._has_row = np.zeros(ns, dtype=bool)
        self._cum_probs: list[Optional[np.ndarray]] = [None] * ns
        self._row_targets: list[Optional[np.ndarray]] = [None] * ns
        for s, row in model.transitions.items():
            c = self._code[s]
            self._has_row[c] = True
            probs = np.array([p for _, p in row])
            self._cum_probs[c] = np.cumsum(probs)
            self._row_targets[c] = np.array([self._code[t] for t, _ in row])

        # compact place indexing for bincount-based mixing
        self._household = np.array([a.household_id for a in pop.agents], dtype=np.int64)
        self._daytime = np.array(
            [-1 if a.daytime_place_id is None else a.daytime_place_id for a in pop.agents],
            dtype=np.int64,
        )
        self._n_places = max((p.place_id for p in pop.places), default=-1) + 1
        self._home_xy = pop.household_locations() if n else np.zeros((0, 2))
        self._home_zone = pop.household_zones() if n else np.zeros(0, dtype=int)

        self.step_no = 0
        self.state = np.full(n, self._susceptible, dtype=np.int64)
        self.remaining = np.zeros(n, dtype=np.int64)

    def _sample_dwell(self, codes: np.ndarray, agents: np.ndarray) -> None:
        """Assign fresh dwell counters for `agents` entering states `codes`."""
        for c in np.unique(codes):
            mask = codes == c
            name = self.model.states[c]
            spec = self.model.dwell.get(name)
            idx = agents[mask]
            if spec is None:
                self.remaining[idx] = 0  # terminal or susceptible: no dwell
            else:
                self.remaining[idx] = spec.sample(self.rng, idx.size)

    def seed_infections(self, k: int, target_state: str, zones: Optional[Sequence[int]] = None) -> None:
        """Move k distinct susceptible agents into target_state."""
        if target_state not in self._code:
            raise ConfigurationError(f"unknown seeding state '{target_state}'")
        if target_state == self.model.susceptible_state:
            raise ConfigurationError("cannot seed into the susceptible state")
        eligible = self.state == self._susceptible
        if zones is not None:
            eligible &= np.isin(self._home_zone, np.asarray(list(zones)))
        pool = np.flatnonzero(eligible)
        if k < 0 or k > pool.size:
            raise ConfigurationError(
                f"cannot seed {k} agents; only {pool.size} eligible susceptible agents"
            )
        if k == 0:
            return
        chosen = self.rng.choice(pool, size=k, replace=False)
        code = self._code[target_state]
        self.state[chosen] = code
        self._sample_dwell(np.full(k, code), chosen)

    def _mixing_day(self) -> bool:
        if self.model.step_unit == "month":
            return True
        return self.step_no % 7 < 5

    def step(self) -> list[IncidentRecord]:
        """Advance one step: exposure, then progression, then logging."""
        tau = self.model.transmissibility
        susceptible = self.state == self._susceptible
        infectious = self._transmissible[self.state]

        newly_exposed = np.zeros(0, dtype=np.int64)
        if tau > 0 and infectious.any() and susceptible.any():
            m = np.zeros(self.state.size, dtype=np.int64)
            home_counts = np.bincount(
                self._household[infectious], minlength=self._n_places
            )
            m += home_counts[self._household]
            if self._mixing_day():
                out = infectious & ~self._stay_home[self.state]
                day = self._daytime
                day_counts = np.bincount(day[out & (day >= 0)], minlength=self._n_places)
                has_day = day >= 0
                m[has_day] += day_counts[day[has_day]]
            exposable = susceptible & (m > 0)
            idx = np.flatnonzero(exposable)
            if idx.size:
                p = 1.0 - (1.0 - tau) ** m[idx]
                hit = self.rng.random(idx.size) < p
                newly_exposed = idx[hit]

        # progression applies only to agents non-susceptible at step start
        progressing = (
            ~susceptible & self._has_row[self.state] & (self.remaining > 0)
        )
        self.remaining[progressing] -= 1
        due = np.flatnonzero(progressing & (self.remaining == 0))
        old_codes = self.state[due]
        new_codes = old_codes.copy()
        if due.size:
            u = self.rng.random(due.size)
            for c in np.unique(old_codes):
                sel = old_codes == c
                cum = self._cum_probs[c]
                picks = np.searchsorted(cum, u[sel], side="right")
                picks = np.minimum(picks, cum.size - 1)  # guard fp edge at u ~ 1
                new_codes[sel] = self._row_targets[c][picks]
            self.state[due] = new_codes
            self._sample_dwell(new_codes, due)

        if newly_exposed.size:
            self.state[newly_exposed] = self._exposed
            self._sample_dwell(
                np.full(newly_exposed.size, self._exposed), newly_exposed
            )

        records = []
        entered = [
            (a, int(self.state[a]))
            for a in due[new_codes != old_codes]
            if self._logged[self.state[a]]
        ]
        if self._logged[self._exposed]:
            entered += [(int(a), self._exposed) for a in newly_exposed]
        for a, c in sorted(entered):
            records.append(
                IncidentRecord(
                    step=self.step_no,
                    agent_id=int(a),
                    state=self.model.states[c],
                    x=float(self._home_xy[a, 0]),
                    y=float(self._home_xy[a, 1]),
                    zone_id=int(self._home_zone[a]),
                )
            )
        self.step_no += 1
        return records

    def state_counts(self) -> np.ndarray:
        return np.bincount(self.state, minlength=len(self.model.states))


def run(
    model: TransitionModel,
    pop: Population,
    init: SeedingSpec,
    horizon: int,
    seed: int,
) -> tuple[IncidentLog, np.ndarray]:
    """Run a full replicate; returns the incident log and per-step tallies.

    Tallies row t holds the state counts after step t, shape (horizon, n_states).
    Deterministic in (model, pop, init, horizon, seed).
    """
    if horizon < 1:
        raise ConfigurationError(f"horizon must be >= 1, got {horizon}")
    sim = Simulation(model, pop, seed)
    sim.seed_infections(init.count, init.target_state, init.zones)
    records: list[IncidentRecord] = []
    tallies = np.zeros((horizon, len(model.states)), dtype=np.int64)
    for t in range(horizon):
        records.extend(sim.step())
        tallies[t] = sim.state_counts()
    return IncidentLog(records), tallies


def write_tallies_csv(model: TransitionModel, tallies: np.ndarray, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step"] + list(model.states))
        for t, row in enumerate(tallies):
            w.writerow([t] + [int(v) for v in row])
