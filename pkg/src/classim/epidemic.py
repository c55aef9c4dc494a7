"""Per-agent SEIR state machine and the stochastic transmission step.

Compartments flow one way: Susceptible -> Exposed -> Infectious -> Recovered.
All of an agent's future transition times are sampled the moment it is
infected (latency is deterministic; incubation and recovery are drawn from
the run's generator), so a compartment is always a pure function of the
scheduled times and the current clock.  Advancing time never consumes
randomness, which keeps runs deterministic and lets the simulation jump over
nights and weekends in one step.

Transmission happens only while the trajectory is playing.  At each second,
every present susceptible combines the hazards of all present infectious
neighbours as  p = 1 - prod_j (1 - min(beta_ij * dt, 1))  and draws once.
``transmission_step`` applies this to a single frame; ``simulate_session``
runs a whole session vectorized over segments between transition events,
which is distributionally identical and orders of magnitude faster.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import kernel
from .errors import FrameRosterMismatch, UnknownPerson
from .kernel import KernelParams, TransmissionMode
from .trajectory import Observation, TrajectoryFrame

SECONDS_PER_HOUR = 3600.0
SECONDS_PER_DAY = 86400.0

#: Airborne mode: one emission is buffered per infectious person per slot.
EMISSION_SLOT_S = 60.0
#: Airborne mode: emissions older than this no longer contribute.
EMISSION_HORIZON_S = 3.0 * SECONDS_PER_HOUR


class Compartment(Enum):
    SUSCEPTIBLE = "S"
    EXPOSED = "E"
    INFECTIOUS = "I"
    RECOVERED = "R"


class IncubationModel(str, Enum):
    EXPONENTIAL = "exponential"
    POISSON_DAYS = "poisson_days"


class RecoveryModel(str, Enum):
    EXPONENTIAL = "exponential"
    GEOMETRIC_STEPS = "geometric_steps"


@dataclass(frozen=True)
class DiseaseParams:
    """Disease-progression clock parameters.

    latency_h: deterministic infection -> infectious delay, in hours.
    p_symptomatic: probability an infected person ever develops symptoms.
    mean_incubation_days: mean infection -> symptom-onset waiting time.
    gamma_per_day: recovery rate; mean infectious duration = 1/gamma.
    dt_s: transmission step size; must match the 1 Hz trajectory grid.

    incubation_model picks exponential waiting times (default) or
    integer Poisson-distributed days; recovery_model picks exponential
    durations (default) or the exact per-step geometric equivalent.
    """

    latency_h: float = 24.0
    p_symptomatic: float = 0.75
    mean_incubation_days: float = 4.0
    gamma_per_day: float = 0.1
    dt_s: float = 1.0
    incubation_model: IncubationModel = IncubationModel.EXPONENTIAL
    recovery_model: RecoveryModel = RecoveryModel.EXPONENTIAL

    def __post_init__(self):
        if not 0.0 <= self.p_symptomatic <= 1.0:
            raise ValueError(f"p_symptomatic must be in [0, 1], got {self.p_symptomatic}")
        for name in ("latency_h", "mean_incubation_days", "gamma_per_day", "dt_s"):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"{name} must be > 0, got {value}")

    @property
    def latency_s(self) -> float:
        return self.latency_h * SECONDS_PER_HOUR

    @property
    def mean_infectious_days(self) -> float:
        return 1.0 / self.gamma_per_day


@dataclass
class AgentState:
    """One person's epidemiological record.

    All t_* fields are absolute seconds since Day 0 session start and are
    scheduled when the agent is infected; None means "never (so far)".
    Immune agents are permanently susceptible and never acquire times.
    """

    person_id: str
    immune: bool = False
    t_infected: float | None = None
    t_infectious: float | None = None
    t_symptomatic: float | None = None
    t_recovered: float | None = None
    will_be_symptomatic: bool = False
    source_id: str | None = None
    exposure_buffer: list = field(default_factory=list)  # airborne: (t, x, y, fx, fy)
    _last_emission_slot: int = -1

    def compartment_at(self, t: float) -> Compartment:
        if self.t_infected is None:
            return Compartment.SUSCEPTIBLE
        if t < self.t_infectious:
            return Compartment.EXPOSED
        if t < self.t_recovered:
            return Compartment.INFECTIOUS
        return Compartment.RECOVERED


@dataclass
class EpidemicState:
    """Mutable simulation state: clock, agents, and the run's generator.

    Confined to a single worker for the duration of a run; parallelism
    happens one level up, across independent runs.
    """

    clock: float
    agents: list[AgentState]
    rng: np.random.Generator

    @property
    def person_ids(self) -> tuple[str, ...]:
        return tuple(a.person_id for a in self.agents)

    def agent(self, person_id: str) -> AgentState:
        for a in self.agents:
            if a.person_id == person_id:
                return a
        raise UnknownPerson(person_id)

    def counts(self, at: float | None = None) -> tuple[int, int, int, int]:
        """(S, E, I, R) counts at the given time (default: current clock)."""
        t = self.clock if at is None else at
        out = [0, 0, 0, 0]
        order = (Compartment.SUSCEPTIBLE, Compartment.EXPOSED,
                 Compartment.INFECTIOUS, Compartment.RECOVERED)
        for a in self.agents:
            out[order.index(a.compartment_at(t))] += 1
        return tuple(out)


def new_epidemic_state(
    person_ids,
    rng: np.random.Generator,
    immune_ids=frozenset(),
) -> EpidemicState:
    """Fresh all-susceptible state at clock 0."""
    agents = [AgentState(person_id=pid, immune=pid in immune_ids) for pid in person_ids]
    return EpidemicState(clock=0.0, agents=agents, rng=rng)


# ---------------------------------------------------------------------------
# disease clocks
# ---------------------------------------------------------------------------

def sample_incubation(rng: np.random.Generator, dp: DiseaseParams | None = None) -> float:
    """Infection -> symptom-onset waiting time in days.

    The default is an exponential waiting time (the inter-arrival time of a
    unit-rate Poisson process) with the configured mean; the alternative
    model draws whole Poisson-distributed days for sensitivity runs.
    """
    dp = dp or DiseaseParams()
    if dp.incubation_model == IncubationModel.POISSON_DAYS:
        return float(rng.poisson(dp.mean_incubation_days))
    return float(rng.exponential(dp.mean_incubation_days))


def sample_recovery(rng: np.random.Generator, dp: DiseaseParams | None = None) -> float:
    """Infectious-duration draw in days, mean 1/gamma.

    The geometric model is the exact law of per-step Bernoulli(gamma * dt)
    recovery draws, sampled in closed form.
    """
    dp = dp or DiseaseParams()
    if dp.recovery_model == RecoveryModel.GEOMETRIC_STEPS:
        p_step = dp.gamma_per_day * dp.dt_s / SECONDS_PER_DAY
        steps = rng.geometric(p_step)
        return float(steps) * dp.dt_s / SECONDS_PER_DAY
    return float(rng.exponential(dp.mean_infectious_days))


def _schedule_infection(
    state: EpidemicState,
    agent: AgentState,
    t_infected: float,
    source_id: str | None,
    dp: DiseaseParams,
) -> None:
    """Draw an infected agent's whole future: symptoms, infectiousness, recovery.

    Draw order (symptomaticity, incubation, recovery) is part of the
    determinism contract.
    """
    u = state.rng.random()
    incubation_days = sample_incubation(state.rng, dp)
    recovery_days = sample_recovery(state.rng, dp)
    agent.t_infected = t_infected
    agent.t_infectious = t_infected + dp.latency_s
    agent.will_be_symptomatic = bool(u < dp.p_symptomatic)
    agent.t_symptomatic = (
        t_infected + incubation_days * SECONDS_PER_DAY if agent.will_be_symptomatic else None
    )
    agent.t_recovered = agent.t_infectious + recovery_days * SECONDS_PER_DAY
    agent.source_id = source_id


def seed_patient_zero(
    state: EpidemicState, person_id: str, dp: DiseaseParams | None = None
) -> EpidemicState:
    """Make one person infectious at clock 0.

    Infection is back-dated by the latency so that infectiousness starts
    exactly at 0 and the symptom/recovery clocks are well defined.  Seeding
    an immune person is a no-op: that run records no transmissions at all.
    """
    dp = dp or DiseaseParams()
    agent = state.agent(person_id)
    if agent.immune:
        return state
    _schedule_infection(state, agent, -dp.latency_s, None, dp)
    return state


def _combined_infection_prob(per_source: np.ndarray, dt_s: float) -> np.ndarray:
    """p = 1 - prod_j (1 - min(beta_j dt, 1)) along the last axis."""
    contrib = np.clip(per_source * dt_s, 0.0, 1.0)
    return 1.0 - np.prod(1.0 - contrib, axis=-1)


def transmission_step(
    state: EpidemicState,
    frame: TrajectoryFrame,
    kp: KernelParams,
    dp: DiseaseParams,
) -> EpidemicState:
    """Advance one trajectory frame: infect susceptibles, step the clock.

    The frame describes the instant at the current clock (caller aligns
    times).  One uniform is drawn per susceptible non-immune agent in roster
    order, whether or not it can be infected this second; absent people
    neither transmit nor receive.
    """
    n = len(state.agents)
    if frame.positions.shape[0] != n:
        raise FrameRosterMismatch(
            f"frame has {frame.positions.shape[0]} people, roster has {n}"
        )
    if dp.dt_s != 1.0:
        raise ValueError("transmission_step requires dt_s = 1.0 to match the 1 Hz grid")
    now = state.clock
    inf_idx = [k for k, a in enumerate(state.agents)
               if a.compartment_at(now) == Compartment.INFECTIOUS]
    sus_idx = [k for k, a in enumerate(state.agents)
               if a.t_infected is None and not a.immune]

    if kp.mode == TransmissionMode.AIRBORNE:
        _trim_buffers(state, now)

    if inf_idx and sus_idx:
        beta = _frame_source_rates(state, frame, kp, now, sus_idx, inf_idx)
        p = _combined_infection_prob(beta, dp.dt_s)
        u = state.rng.random(len(sus_idx))
        for pos, k in enumerate(sus_idx):
            if u[pos] < p[pos]:
                j = inf_idx[int(np.argmax(beta[pos]))]
                _schedule_infection(
                    state, state.agents[k], now, state.agents[j].person_id, dp
                )
    elif sus_idx:
        state.rng.random(len(sus_idx))  # fixed draw pattern: one per susceptible

    if kp.mode == TransmissionMode.AIRBORNE:
        _record_emissions(state, frame, now, inf_idx)
    state.clock = now + dp.dt_s
    return state


def _frame_source_rates(
    state: EpidemicState,
    frame: TrajectoryFrame,
    kp: KernelParams,
    now: float,
    sus_idx: list[int],
    inf_idx: list[int],
) -> np.ndarray:
    """Per-source rates (n_sus, n_inf) for one frame, inc. airborne history."""
    pos = np.where(frame.present[:, None], frame.positions, 0.0)
    fac = np.where(frame.present[:, None], frame.facings, 0.0)
    beta = kernel.rates_between(pos[sus_idx], fac[sus_idx], pos[inf_idx], fac[inf_idx], kp)
    co_present = frame.present[sus_idx][:, None] & frame.present[inf_idx][None, :]
    beta[~co_present] = 0.0

    if kp.mode == TransmissionMode.AIRBORNE:
        # Emission weight keeps a stationary pair's integrated airborne hazard
        # aligned with the droplet hazard: each slot carries lambda * slot.
        lam_per_s = kp.lambda_decay / SECONDS_PER_HOUR
        weight = lam_per_s * EMISSION_SLOT_S
        current_slot = int(now // EMISSION_SLOT_S)
        sus_present = frame.present[sus_idx]
        for col, j in enumerate(inf_idx):
            buf = state.agents[j].exposure_buffer
            past = [e for e in buf if int(e[0] // EMISSION_SLOT_S) < current_slot]
            if not past:
                continue
            arr = np.asarray(past, dtype=float)
            r = kernel.rates_between(
                pos[sus_idx], fac[sus_idx], arr[:, 1:3], arr[:, 3:5], kp
            )
            decay = np.exp(-kp.lambda_decay * (now - arr[:, 0]) / SECONDS_PER_HOUR)
            extra = (r * decay[None, :]).sum(axis=1) * weight
            beta[:, col] += np.where(sus_present, extra, 0.0)
    return beta


def _record_emissions(state, frame, now, inf_idx) -> None:
    slot = int(now // EMISSION_SLOT_S)
    for j in inf_idx:
        agent = state.agents[j]
        if frame.present[j] and agent._last_emission_slot < slot:
            agent.exposure_buffer.append(
                (now, float(frame.positions[j, 0]), float(frame.positions[j, 1]),
                 float(frame.facings[j, 0]), float(frame.facings[j, 1]))
            )
            agent._last_emission_slot = slot


def _trim_buffers(state: EpidemicState, now: float) -> None:
    horizon = now - EMISSION_HORIZON_S
    for a in state.agents:
        if a.exposure_buffer:
            a.exposure_buffer = [e for e in a.exposure_buffer if e[0] >= horizon]


def progress_offclass(state: EpidemicState, duration_s: float) -> EpidemicState:
    """Advance the clock with no transmission (nights, weekends).

    Scheduled transitions (infectiousness, symptom onset, recovery) take
    effect purely by the clock crossing them; no randomness is consumed.
    """
    if not duration_s > 0:
        raise ValueError(f"duration_s must be > 0, got {duration_s}")
    state.clock += duration_s
    return state


def is_run_complete(state: EpidemicState) -> bool:
    """True when nobody is exposed or infectious any more."""
    return all(
        a.compartment_at(state.clock) in (Compartment.SUSCEPTIBLE, Compartment.RECOVERED)
        for a in state.agents
    )


# ---------------------------------------------------------------------------
# vectorized session engine
# ---------------------------------------------------------------------------

def simulate_session(
    state: EpidemicState,
    obs: Observation,
    session_start_s: float,
    kp: KernelParams,
    dp: DiseaseParams,
    rates: np.ndarray | None = None,
    col_index: np.ndarray | None = None,
) -> EpidemicState:
    """Replay one full session of the observation against the state.

    Equivalent in distribution to calling ``transmission_step`` on every
    frame, but evaluated in segments between transition events of the
    infectious set, with all hazards and uniforms drawn as arrays.  ``rates``
    may carry precomputed all-pairs rates for the source observation (shape
    (T, M, M)); ``col_index`` maps this state's roster positions into its
    columns, enabling half-class runs to reuse a full-roster cache.

    Airborne mode falls back to the per-frame step, which maintains the
    emission buffers.
    """
    if dp.dt_s != 1.0:
        raise ValueError("simulate_session requires dt_s = 1.0 to match the 1 Hz grid")
    n = len(state.agents)
    if obs.n_people != n:
        raise FrameRosterMismatch(f"observation has {obs.n_people} people, roster has {n}")
    if state.clock != session_start_s:
        raise ValueError(
            f"state clock {state.clock} is not at session start {session_start_s}"
        )
    t_total = obs.session_length_s

    if kp.mode == TransmissionMode.AIRBORNE:
        for t in range(t_total):
            transmission_step(state, obs.frame(t), kp, dp)
        return state

    if col_index is None:
        col_index = np.arange(n)
    else:
        col_index = np.asarray(col_index)
    if rates is not None and rates.shape[0] != t_total:
        raise ValueError(f"rate cache covers {rates.shape[0]} s, session is {t_total} s")

    dt = dp.dt_s
    inf_t = np.array([math.inf if a.t_infectious is None else a.t_infectious
                      for a in state.agents])
    rec_t = np.array([math.inf if a.t_recovered is None else a.t_recovered
                      for a in state.agents])
    susceptible = np.array([a.t_infected is None and not a.immune for a in state.agents])
    latency_steps = max(1, int(dp.latency_s // dt))

    cursor = 0
    while cursor < t_total:
        now = session_start_s + cursor * dt
        infectious = (inf_t <= now) & (now < rec_t)
        exposed = ~susceptible & np.isfinite(inf_t) & (now < inf_t) & ~infectious

        # segment ends at the next infectious-set change (someone turning
        # infectious or recovering), capped so no one infected inside the
        # segment could turn infectious before it ends
        boundaries = [t_total, cursor + latency_steps]
        for k in np.nonzero(exposed)[0]:
            boundaries.append(_frame_of(inf_t[k], session_start_s, dt))
        for k in np.nonzero(infectious)[0]:
            boundaries.append(_frame_of(rec_t[k], session_start_s, dt))
        seg_end = min(b for b in boundaries if b > cursor)
        seg_end = min(seg_end, t_total)

        sus_idx = np.nonzero(susceptible)[0]
        inf_idx = np.nonzero(infectious)[0]
        if len(sus_idx) == 0 or len(inf_idx) == 0:
            cursor = seg_end
            continue

        if rates is not None:
            block = rates[cursor:seg_end, col_index[sus_idx][:, None],
                          col_index[inf_idx][None, :]]
        else:
            block = kernel.pairwise_rates(
                obs.positions[cursor:seg_end],
                obs.facings[cursor:seg_end],
                obs.present[cursor:seg_end],
                kp,
            )[:, sus_idx[:, None], inf_idx[None, :]]
        contrib = np.clip(block * dt, 0.0, 1.0)
        p = 1.0 - np.prod(1.0 - contrib, axis=2)       # (seg_len, n_sus)
        u = state.rng.random(p.shape)
        hits = u < p
        hit_any = hits.any(axis=0)
        first = np.argmax(hits, axis=0)

        for pos in np.argsort(first, kind="stable"):
            if not hit_any[pos]:
                continue
            k = int(sus_idx[pos])
            t_rel = int(first[pos])
            t_abs = session_start_s + (cursor + t_rel) * dt
            j = int(inf_idx[int(np.argmax(contrib[t_rel, pos]))])
            _schedule_infection(state, state.agents[k], t_abs,
                                state.agents[j].person_id, dp)
            susceptible[k] = False
            inf_t[k] = state.agents[k].t_infectious
            rec_t[k] = state.agents[k].t_recovered
        cursor = seg_end

    state.clock = session_start_s + t_total * dt
    return state


def _frame_of(t_abs: float, session_start_s: float, dt: float) -> int:
    """First frame index at or after an absolute event time."""
    return math.ceil((t_abs - session_start_s) / dt)


# ---------------------------------------------------------------------------
# event log and counts
# ---------------------------------------------------------------------------

EVENT_ORDER = {"infected": 0, "infectious": 1, "symptomatic": 2, "recovered": 3}


@dataclass(frozen=True)
class Event:
    kind: str
    person_id: str
    t_s: float
    source_person_id: str | None = None


def event_log(state: EpidemicState, horizon_s: float) -> tuple[Event, ...]:
    """All transition events up to the horizon, time-ordered.

    Symptom onsets scheduled by the disease clocks are reported even when
    they land after the epidemic has burnt out, as long as they fall inside
    the horizon (the observation window of every metric).
    """
    events = []
    for a in state.agents:
        if a.t_infected is None:
            continue
        if a.t_infected <= horizon_s:
            events.append(Event("infected", a.person_id, a.t_infected, a.source_id))
        if a.t_infectious <= horizon_s:
            events.append(Event("infectious", a.person_id, a.t_infectious))
        if a.t_symptomatic is not None and a.t_symptomatic <= horizon_s:
            events.append(Event("symptomatic", a.person_id, a.t_symptomatic))
        if a.t_recovered <= horizon_s:
            events.append(Event("recovered", a.person_id, a.t_recovered))
    events.sort(key=lambda e: (e.t_s, EVENT_ORDER[e.kind], e.person_id))
    return tuple(events)


def hourly_compartment_counts(state: EpidemicState, horizon_hours: int) -> np.ndarray:
    """(S, E, I, R) counts at each hour boundary 0..horizon_hours inclusive.

    Returned array has shape (horizon_hours + 1, 4).
    """
    times = np.arange(horizon_hours + 1, dtype=float) * SECONDS_PER_HOUR
    t_infd = np.array([math.inf if a.t_infected is None else a.t_infected
                       for a in state.agents])
    t_infs = np.array([math.inf if a.t_infectious is None else a.t_infectious
                       for a in state.agents])
    t_rec = np.array([math.inf if a.t_recovered is None else a.t_recovered
                      for a in state.agents])
    tt = times[:, None]
    is_s = tt < t_infd[None, :]
    is_e = (tt >= t_infd[None, :]) & (tt < t_infs[None, :])
    is_i = (tt >= t_infs[None, :]) & (tt < t_rec[None, :])
    is_r = tt >= t_rec[None, :]
    out = np.stack(
        [is_s.sum(axis=1), is_e.sum(axis=1), is_i.sum(axis=1), is_r.sum(axis=1)],
        axis=1,
    )
    return out.astype(np.int64)
