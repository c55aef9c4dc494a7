"""Pairwise transmission kernel: geometry, infection rates, calibration.

The infection rate between two people falls off as a Gaussian in their
center-to-center distance and in each person's facing angle relative to the
line connecting them:

    rate = beta_max * exp(-r^2 / (2 sigma_r^2) - (theta_i^2 + theta_j^2) / (2 sigma_theta^2))

Airborne transmission additionally decays exponentially with the age of the
emission (``airborne_decay``); droplet transmission is treated as
contemporaneous-only.

``beta_max`` is an intrinsic pathogen parameter, independent of the room.  It
is recovered from population-level quantities (reproduction number, recovery
rate) via the average-rate identity

    beta_bar = beta_max * sigma_r^2 * sigma_theta^2 * rho

where rho is a contact density in persons per square meter; see
``calibrate_beta_max``.

All functions here are pure and safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import CoincidentPositions, ZeroArea

FEET_TO_M = 0.3048
SECONDS_PER_DAY = 86400.0
MINUTES_PER_DAY = 1440.0

#: Minimum center-to-center distance substituted by callers when tag positions
#: coincide.  The kernel itself is finite at r=0; coincident readings are
#: sensor artifacts, not physical contact at zero range.
R_MIN_M = 0.1

_UNIT_NORM_TOL = 1e-6
_COINCIDENT_TOL = 1e-9


class TransmissionMode(str, Enum):
    DROPLET = "droplet"
    AIRBORNE = "airborne"


@dataclass(frozen=True)
class KernelParams:
    """Parameters of the pairwise infection-rate kernel.

    beta_max is in events per second; sigma_r in meters; sigma_theta in
    radians; lambda_decay in inverse hours.  In droplet mode the temporal
    decay term is never applied (only contemporaneous contact transmits).
    """

    beta_max: float
    sigma_r: float = 2.0
    sigma_theta: float = math.pi / 4
    lambda_decay: float = 0.34
    mode: TransmissionMode = TransmissionMode.DROPLET

    def __post_init__(self):
        if not self.beta_max > 0:
            raise ValueError(f"beta_max must be > 0, got {self.beta_max}")
        if not self.sigma_r > 0:
            raise ValueError(f"sigma_r must be > 0, got {self.sigma_r}")
        if not self.sigma_theta > 0:
            raise ValueError(f"sigma_theta must be > 0, got {self.sigma_theta}")
        if self.lambda_decay < 0:
            raise ValueError(f"lambda_decay must be >= 0, got {self.lambda_decay}")


@dataclass(frozen=True)
class PairGeometry:
    """Relative geometry of one ordered pair: distance and two facing angles.

    r is the planar center-to-center distance in meters.  theta_i is the
    unsigned angle, in [0, pi], between person i's facing direction and the
    line from i to j; theta_j likewise from j toward i.
    """

    r: float
    theta_i: float
    theta_j: float

    def __post_init__(self):
        if self.r < 0:
            raise ValueError(f"r must be >= 0, got {self.r}")
        for name, value in (("theta_i", self.theta_i), ("theta_j", self.theta_j)):
            if not 0.0 <= value <= math.pi:
                raise ValueError(f"{name} must lie in [0, pi], got {value}")

    def swapped(self) -> "PairGeometry":
        return PairGeometry(self.r, self.theta_j, self.theta_i)


@dataclass(frozen=True)
class CalibrationInputs:
    """Inputs for recovering beta_max from population-level contact guidance.

    r0 is the reproduction number (dimensionless), gamma the recovery rate
    per day, n_contacts the average number of daily contacts, contact_radius
    the close-contact radius in meters, contact_duration the cumulative
    close-contact time in minutes per day.
    """

    r0: float = 2.0
    gamma: float = 0.1
    n_contacts: float = 10.0
    contact_radius: float = 6.0 * FEET_TO_M
    contact_duration: float = 15.0
    sigma_r: float = 2.0
    sigma_theta: float = math.pi / 4

    def __post_init__(self):
        if self.r0 < 0:
            raise ValueError(f"r0 must be >= 0, got {self.r0}")
        for name in ("gamma", "n_contacts", "contact_radius",
                     "contact_duration", "sigma_r", "sigma_theta"):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"{name} must be > 0, got {value}")


def _check_unit(name: str, v: np.ndarray) -> None:
    norm = math.hypot(float(v[0]), float(v[1]))
    if abs(norm - 1.0) > _UNIT_NORM_TOL:
        raise ValueError(f"{name} must have unit norm (got |{name}| = {norm})")


def relative_geometry(pos_i, facing_i, pos_j, facing_j) -> PairGeometry:
    """Distance and unsigned facing angles for a pair of agents.

    Positions are 2-vectors in meters; facings are unit 2-vectors (checked to
    1e-6).  Raises CoincidentPositions when the two positions are closer than
    1e-9 m; callers should clamp r to ``R_MIN_M`` instead of evaluating the
    kernel at a sensor-artifact zero distance.
    """
    pos_i = np.asarray(pos_i, dtype=float)
    pos_j = np.asarray(pos_j, dtype=float)
    facing_i = np.asarray(facing_i, dtype=float)
    facing_j = np.asarray(facing_j, dtype=float)
    _check_unit("facing_i", facing_i)
    _check_unit("facing_j", facing_j)

    d = pos_j - pos_i
    r = math.hypot(float(d[0]), float(d[1]))
    if r < _COINCIDENT_TOL:
        raise CoincidentPositions(f"positions coincide (r = {r})")
    cos_i = float(np.dot(facing_i, d)) / r
    cos_j = float(np.dot(facing_j, -d)) / r
    theta_i = math.acos(min(1.0, max(-1.0, cos_i)))
    theta_j = math.acos(min(1.0, max(-1.0, cos_j)))
    return PairGeometry(r=r, theta_i=theta_i, theta_j=theta_j)


def pair_rate(g: PairGeometry, p: KernelParams) -> float:
    """Instantaneous infection rate (per second) for one pair."""
    return p.beta_max * math.exp(
        -g.r * g.r / (2.0 * p.sigma_r * p.sigma_r)
        - (g.theta_i * g.theta_i + g.theta_j * g.theta_j)
        / (2.0 * p.sigma_theta * p.sigma_theta)
    )


def airborne_decay(rate: float, elapsed_hours: float, lambda_decay: float) -> float:
    """Attenuate a rate by exp(-lambda * elapsed); identity at t=0 or lambda=0."""
    if elapsed_hours < 0:
        raise ValueError(f"elapsed_hours must be >= 0, got {elapsed_hours}")
    return rate * math.exp(-lambda_decay * elapsed_hours)


def daily_contact_density(c: CalibrationInputs) -> float:
    """Daily-averaged contact density in persons per square meter.

    n_contacts people inside the close-contact disc, weighted by the fraction
    of the day spent in close contact.
    """
    area = math.pi * c.contact_radius * c.contact_radius
    return (c.n_contacts / area) * (c.contact_duration / MINUTES_PER_DAY)


def calibrate_beta_max(c: CalibrationInputs) -> float:
    """Recover beta_max (per day) from population-level contact guidance.

    Inverts beta_bar = beta_max * sigma_r^2 * sigma_theta^2 * rho_daily with
    beta_bar = r0 * gamma.  Divide by 86400 for the per-second value used at
    1-second simulation steps.
    """
    rho_daily = daily_contact_density(c)
    beta_bar_daily = c.r0 * c.gamma
    return beta_bar_daily / (c.sigma_r**2 * c.sigma_theta**2 * rho_daily)


def default_beta_max_per_s() -> float:
    """beta_max calibrated from the default CalibrationInputs, per second."""
    return calibrate_beta_max(CalibrationInputs()) / SECONDS_PER_DAY


def default_kernel_params(mode: TransmissionMode = TransmissionMode.DROPLET) -> KernelParams:
    """KernelParams with the default calibrated beta_max."""
    return KernelParams(beta_max=default_beta_max_per_s(), mode=mode)


def density(n_people: int, area: float) -> float:
    """Persons per square meter of room space."""
    if n_people < 0:
        raise ValueError(f"n_people must be >= 0, got {n_people}")
    if not area > 0:
        raise ZeroArea(f"room area must be > 0, got {area}")
    return n_people / area


def rates_between(
    pos_a: np.ndarray,
    fac_a: np.ndarray,
    pos_b: np.ndarray,
    fac_b: np.ndarray,
    p: KernelParams,
) -> np.ndarray:
    """Rate matrix between two point sets: entry [a, b] is the rate from b to a.

    pos_a/fac_a are (A, 2), pos_b/fac_b are (B, 2).  Same distance clamp and
    coincident-pair angle convention as ``pairwise_rates``.
    """
    d = pos_b[None, :, :] - pos_a[:, None, :]              # (A, B, 2): a -> b
    r = np.sqrt(np.einsum("abk,abk->ab", d, d))
    r_safe = np.maximum(r, 1e-12)
    cos_a = np.einsum("ak,abk->ab", fac_a, d) / r_safe
    cos_b = -np.einsum("bk,abk->ab", fac_b, d) / r_safe
    th_a = np.arccos(np.clip(cos_a, -1.0, 1.0))
    th_b = np.arccos(np.clip(cos_b, -1.0, 1.0))
    r_eff = np.maximum(r, R_MIN_M)
    return p.beta_max * np.exp(
        -(r_eff * r_eff) / (2.0 * p.sigma_r * p.sigma_r)
        - (th_a * th_a + th_b * th_b) / (2.0 * p.sigma_theta * p.sigma_theta)
    )


def pairwise_rates(
    positions: np.ndarray,
    facings: np.ndarray,
    present: np.ndarray,
    p: KernelParams,
    chunk: int = 2048,
) -> np.ndarray:
    """All-pairs instantaneous rates for a whole trajectory block.

    positions and facings have shape (T, N, 2); present is a (T, N) boolean
    mask.  Returns a (T, N, N) array where entry [t, i, j] is the rate from j
    to i at second t, zero on the diagonal and wherever either person is
    absent.  Distances below ``R_MIN_M`` are clamped, matching the scalar
    caller contract for coincident tags.

    Work proceeds in time chunks to bound peak memory; results are identical
    elementwise regardless of chunking.
    """
    t_total, n, _ = positions.shape
    out = np.zeros((t_total, n, n), dtype=np.float64)
    # Absent slots may carry NaN; substitute zeros so vector math stays clean.
    # Their rates are masked out afterwards.
    pos = np.where(present[:, :, None], positions, 0.0)
    fac = np.where(present[:, :, None], facings, 0.0)
    inv_2sr2 = 1.0 / (2.0 * p.sigma_r * p.sigma_r)
    inv_2st2 = 1.0 / (2.0 * p.sigma_theta * p.sigma_theta)

    for a in range(0, t_total, chunk):
        b = min(a + chunk, t_total)
        pc = pos[a:b]
        fc = fac[a:b]
        d = pc[:, None, :, :] - pc[:, :, None, :]          # (C, i, j, 2): i -> j
        r2 = np.einsum("tijk,tijk->tij", d, d)
        r = np.sqrt(r2)
        # Angles use the true separation direction; exactly coincident pairs
        # get the neutral theta = pi/2 (cos = 0 after the safe division).
        r_safe = np.maximum(r, 1e-12)
        cos_i = np.einsum("tik,tijk->tij", fc, d) / r_safe
        cos_j = -np.einsum("tjk,tijk->tij", fc, d) / r_safe
        th_i = np.arccos(np.clip(cos_i, -1.0, 1.0))
        th_j = np.arccos(np.clip(cos_j, -1.0, 1.0))
        # The distance term clamps sub-resolution separations up to R_MIN_M.
        r_eff = np.maximum(r, R_MIN_M)
        rate = p.beta_max * np.exp(
            -(r_eff * r_eff) * inv_2sr2 - (th_i * th_i + th_j * th_j) * inv_2st2
        )
        both = present[a:b, :, None] & present[a:b, None, :]
        rate[~both] = 0.0
        idx = np.arange(n)
        rate[:, idx, idx] = 0.0
        out[a:b] = rate
    return out
