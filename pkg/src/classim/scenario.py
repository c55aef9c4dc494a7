"""Scenario construction and the Monte Carlo sweep runner.

A scenario cell crosses classroom density (full / half) with teacher
vaccination (none / teachers).  One run seeds a single patient zero into a
(possibly halved, possibly vaccinated) roster and replays the observed
session every school day over the horizon, with 24 h between weekday
sessions and 72 h over the weekend; the same recording stands in for every
school day.

Sweeps iterate patient zero over the whole roster times a replicate count.
Each task's seed is derived by a stable 64-bit mix of (base_seed, patient
zero index, replicate), so results are independent of execution order and
worker count, and the same (patient zero, replicate) pair shares randomness
across scenario cells for coupled comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from multiprocessing import Pool

import numpy as np

from . import epidemic, kernel
from .epidemic import DiseaseParams, Event
from .errors import ConfigError, NoTeacher, UnknownPerson
from .kernel import KernelParams
from .trajectory import Observation, Role

SECONDS_PER_DAY = 86400.0


class DensityVariant(str, Enum):
    FULL = "full"
    HALF = "half"


class VaccinationVariant(str, Enum):
    NONE = "novax"
    TEACHERS = "vax"


@dataclass(frozen=True)
class ScenarioConfig:
    """One scenario cell plus the sweep bookkeeping."""

    density: DensityVariant = DensityVariant.FULL
    vaccination: VaccinationVariant = VaccinationVariant.NONE
    vaccine_efficacy: float = 0.858
    horizon_days: int = 28
    reps_per_patient_zero: int = 60
    base_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.vaccine_efficacy <= 1.0:
            raise ConfigError(f"vaccine_efficacy must be in [0, 1], got {self.vaccine_efficacy}")
        if self.horizon_days < 1:
            raise ConfigError(f"horizon_days must be >= 1, got {self.horizon_days}")
        if self.reps_per_patient_zero < 1:
            raise ConfigError(f"reps must be >= 1, got {self.reps_per_patient_zero}")

    @property
    def cell_name(self) -> str:
        return f"{self.density.value}-{self.vaccination.value}"


SCENARIO_CELLS = {
    "full-novax": (DensityVariant.FULL, VaccinationVariant.NONE),
    "half-novax": (DensityVariant.HALF, VaccinationVariant.NONE),
    "full-vax": (DensityVariant.FULL, VaccinationVariant.TEACHERS),
    "half-vax": (DensityVariant.HALF, VaccinationVariant.TEACHERS),
}


# ---------------------------------------------------------------------------
# calendar
# ---------------------------------------------------------------------------

MONDAY, FRIDAY = 0, 4


@dataclass(frozen=True)
class SchoolCalendar:
    """Session start times (absolute seconds) and their common length."""

    session_starts_s: tuple[float, ...]
    session_length_s: float

    def __post_init__(self):
        starts = self.session_starts_s
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ConfigError("session starts must be strictly increasing")

    @property
    def n_sessions(self) -> int:
        return len(self.session_starts_s)


def build_calendar(
    horizon_days: int,
    session_length_s: float,
    start_weekday: int = MONDAY,
) -> SchoolCalendar:
    """School-day sessions within the horizon, one per weekday, Day 0 first.

    Day k starts at k * 86400 s; weekends are skipped, giving the 24 h
    weekday / 72 h Friday-to-Monday gaps.  start_weekday must itself be a
    weekday (0 = Monday .. 4 = Friday) so the first session lands on Day 0.
    """
    if horizon_days < 1:
        raise ConfigError(f"horizon_days must be >= 1, got {horizon_days}")
    if not MONDAY <= start_weekday <= FRIDAY:
        raise ConfigError(f"start_weekday must be 0 (Mon) .. 4 (Fri), got {start_weekday}")
    if not 0 < session_length_s <= SECONDS_PER_DAY:
        raise ConfigError(
            f"session_length_s must be in (0, 86400], got {session_length_s}"
        )
    starts = [
        float(day) * SECONDS_PER_DAY
        for day in range(horizon_days)
        if (start_weekday + day) % 7 <= FRIDAY
    ]
    return SchoolCalendar(session_starts_s=tuple(starts), session_length_s=float(session_length_s))


# ---------------------------------------------------------------------------
# scenario transforms
# ---------------------------------------------------------------------------

def apply_half_class(
    obs: Observation,
    rng: np.random.Generator,
    include: str | None = None,
) -> Observation:
    """Halved classroom: ceil(n_children / 2) children plus exactly 1 teacher.

    Children and the teacher are sampled uniformly.  ``include`` forces one
    person into the retained subset (the patient zero of the run, since
    half-class runs are conditional on the infected person attending);
    the remaining slots are sampled uniformly from everyone else.  The room
    itself is unchanged, halving the density.
    """
    child_idx = [k for k, p in enumerate(obs.roster) if p.role == Role.CHILD]
    teacher_idx = [k for k, p in enumerate(obs.roster) if p.role == Role.TEACHER]
    if not teacher_idx:
        raise NoTeacher(f"observation {obs.class_id} has no teacher")
    include_idx = obs.index_of(include) if include is not None else None

    n_keep = math.ceil(len(child_idx) / 2)
    keep: list[int] = []
    if include_idx is not None and include_idx in teacher_idx:
        keep.append(include_idx)
    else:
        keep.append(teacher_idx[int(rng.integers(len(teacher_idx)))])
    pool = list(child_idx)
    n_sample = n_keep
    if include_idx is not None and include_idx in child_idx:
        keep.append(include_idx)
        pool.remove(include_idx)
        n_sample -= 1
    if n_sample > 0:
        chosen = rng.choice(len(pool), size=n_sample, replace=False)
        keep.extend(pool[int(c)] for c in chosen)
    return obs.subset(keep)


def apply_vaccination(
    roster,
    efficacy: float,
    rng: np.random.Generator,
) -> frozenset[str]:
    """Per-run immunity flags: each teacher effective-vaccinated independently.

    Children are never flagged.  Returns the set of immune person_ids.
    """
    immune = []
    for p in roster:
        if p.role == Role.TEACHER and rng.random() < efficacy:
            immune.append(p.person_id)
    return frozenset(immune)


# ---------------------------------------------------------------------------
# seed derivation
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(base_seed: int, patient_zero_index: int, rep: int) -> int:
    """Stable 64-bit per-task seed; order- and worker-count-independent."""
    h = _splitmix64(base_seed & _MASK64)
    h = _splitmix64(h ^ _splitmix64((patient_zero_index + 1) & _MASK64))
    h = _splitmix64(h ^ _splitmix64((rep + 1) & _MASK64))
    return h


# ---------------------------------------------------------------------------
# one run
# ---------------------------------------------------------------------------

#: Above this size (seconds x people^2), runs fall back to computing rates
#: segment by segment instead of holding the whole all-pairs array.
_RATE_CACHE_MAX_ELEMENTS = 50_000_000


@dataclass
class RunOutcome:
    """Everything one simulation run produced."""

    scenario: str
    observation_id: str
    patient_zero: str
    seed: int
    roster_ids: tuple[str, ...]
    immune_ids: frozenset[str]
    events: tuple[Event, ...]
    hourly_counts: np.ndarray  # (horizon_days * 24 + 1, 4) ints
    final_counts: tuple[int, int, int, int]
    horizon_days: int
    beta_hat: float | None = field(default=None)
    exposure_t_s: float | None = field(default=None)


def run_simulation(
    obs: Observation,
    cal: SchoolCalendar,
    sc: ScenarioConfig,
    patient_zero: str,
    seed: int,
    kp: KernelParams,
    dp: DiseaseParams,
    rates: np.ndarray | None = None,
) -> RunOutcome:
    """One complete seeded run of a scenario cell.

    Draw order per run: half-class subset, vaccination flags, patient-zero
    clocks, then transmission.  ``rates`` may hold precomputed all-pairs
    rates for the *full* observation; half-class runs index into it.

    The trajectory replays identically for every session in the calendar;
    between sessions the clock jumps with no transmission.  The run stops
    early once nobody is exposed or infectious, and is evaluated over the
    full horizon regardless.
    """
    if patient_zero not in obs.person_ids:
        raise UnknownPerson(patient_zero)
    if cal.session_length_s != obs.session_length_s:
        raise ConfigError(
            f"calendar session length {cal.session_length_s} != observation "
            f"length {obs.session_length_s}"
        )
    rng = np.random.Generator(np.random.PCG64(seed))

    if sc.density == DensityVariant.HALF:
        obs_run = apply_half_class(obs, rng, include=patient_zero)
    else:
        obs_run = obs
    if sc.vaccination == VaccinationVariant.TEACHERS:
        immune = apply_vaccination(obs_run.roster, sc.vaccine_efficacy, rng)
    else:
        immune = frozenset()

    col_index = None
    if rates is not None:
        col_index = np.array([obs.index_of(pid) for pid in obs_run.person_ids])
    elif 0 < obs_run.session_length_s * obs_run.n_people**2 <= _RATE_CACHE_MAX_ELEMENTS:
        # the same session replays every school day; rate the pairs once
        rates = kernel.pairwise_rates(
            obs_run.positions, obs_run.facings, obs_run.present, kp
        )
        col_index = np.arange(obs_run.n_people)

    state = epidemic.new_epidemic_state(obs_run.person_ids, rng, immune)
    epidemic.seed_patient_zero(state, patient_zero, dp)

    horizon_s = sc.horizon_days * SECONDS_PER_DAY
    for start in cal.session_starts_s:
        if start >= horizon_s or epidemic.is_run_complete(state):
            break
        if state.clock < start:
            epidemic.progress_offclass(state, start - state.clock)
        epidemic.simulate_session(state, obs_run, start, kp, dp,
                                  rates=rates, col_index=col_index)
    if state.clock < horizon_s:
        epidemic.progress_offclass(state, horizon_s - state.clock)

    hourly = epidemic.hourly_compartment_counts(state, sc.horizon_days * 24)
    return RunOutcome(
        scenario=sc.cell_name,
        observation_id=obs.class_id,
        patient_zero=patient_zero,
        seed=seed,
        roster_ids=obs_run.person_ids,
        immune_ids=immune,
        events=epidemic.event_log(state, horizon_s),
        hourly_counts=hourly,
        final_counts=tuple(int(c) for c in hourly[-1]),
        horizon_days=sc.horizon_days,
    )


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

_WORKER: dict = {}


def _worker_init(obs, cal, sc, kp, dp, with_cache):
    _WORKER["args"] = (obs, cal, sc, kp, dp)
    _WORKER["rates"] = (
        kernel.pairwise_rates(obs.positions, obs.facings, obs.present, kp)
        if with_cache else None
    )


def _worker_run(task):
    pz_index, rep = task
    obs, cal, sc, kp, dp = _WORKER["args"]
    return task, _run_task(obs, cal, sc, kp, dp, _WORKER["rates"], pz_index, rep)


def _run_task(obs, cal, sc, kp, dp, rates, pz_index, rep):
    seed = derive_seed(sc.base_seed, pz_index, rep)
    pz = obs.roster[pz_index].person_id
    outcome = run_simulation(obs, cal, sc, pz, seed, kp, dp, rates=rates)
    _attach_transmission_stats(outcome, obs, cal, sc, kp, rates)
    return outcome


def _attach_transmission_stats(outcome, obs, cal, sc, kp, rates):
    """Per-run mean pair rate over the retained roster, and total class time."""
    idx = np.array([obs.index_of(pid) for pid in outcome.roster_ids])
    if rates is None:
        sub = kernel.pairwise_rates(
            obs.positions[:, idx], obs.facings[:, idx], obs.present[:, idx], kp
        )
    elif len(idx) == rates.shape[1]:
        sub = rates
    else:
        sub = rates[:, idx[:, None], idx[None, :]]
    present = obs.present[:, idx]
    k = present.sum(axis=1).astype(np.int64)
    n_pairs = (k * (k - 1)) // 2
    iu = np.triu_indices(len(idx), k=1)
    total = sub[:, iu[0], iu[1]].sum()
    denom = n_pairs.sum()
    n_sessions = sum(
        1 for s in cal.session_starts_s if s < sc.horizon_days * SECONDS_PER_DAY
    )
    outcome.beta_hat = float(total / denom) if denom > 0 else 0.0
    outcome.exposure_t_s = float(cal.session_length_s * n_sessions)


def sweep(
    obs: Observation,
    sc: ScenarioConfig,
    kp: KernelParams,
    dp: DiseaseParams,
    cal: SchoolCalendar | None = None,
    workers: int = 1,
    use_rate_cache: bool = True,
) -> list[RunOutcome]:
    """Every roster member as patient zero x replicates, in a deterministic order.

    Results are returned sorted by (patient zero index, replicate) and are
    bitwise independent of ``workers``.  Each worker builds the all-pairs
    rate cache once; runs then reduce to array gathers and draws.
    """
    if cal is None:
        cal = build_calendar(sc.horizon_days, obs.session_length_s)
    tasks = [
        (pz_index, rep)
        for pz_index in range(obs.n_people)
        for rep in range(sc.reps_per_patient_zero)
    ]
    with_cache = (
        use_rate_cache
        and 0 < obs.session_length_s * obs.n_people**2 <= _RATE_CACHE_MAX_ELEMENTS
    )
    if workers <= 1 or len(tasks) <= 1:
        rates = (
            kernel.pairwise_rates(obs.positions, obs.facings, obs.present, kp)
            if with_cache else None
        )
        return [_run_task(obs, cal, sc, kp, dp, rates, *t) for t in tasks]

    with Pool(
        processes=workers,
        initializer=_worker_init,
        initargs=(obs, cal, sc, kp, dp, with_cache),
    ) as pool:
        chunk = max(1, len(tasks) // (workers * 8))
        tagged = list(pool.imap_unordered(_worker_run, tasks, chunksize=chunk))
    tagged.sort(key=lambda pair: pair[0])
    return [outcome for _task, outcome in tagged]
