"""Actuated spring-loaded inverted pendulum baseline.

Point-mass CoM on a massless spring leg: in flight the CoM is ballistic;
in contact the spring pushes the CoM away from the stance foot with a
force proportional to the scalar leg compression, plus gravity and an
additive per-unit-mass actuation.  Used as the comparison baseline for
CoM trajectory prediction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _integrators
from .errors import ValidationError
from .trajectory_data import Phase


@dataclass(frozen=True)
class AslipParams:
    """spring constant (N/m), body mass (kg), rest-length vector (m), gravity (m/s^2)."""

    k_s: float
    m: float
    l0: np.ndarray
    g: float = 9.81

    def __post_init__(self):
        if self.k_s <= 0 or self.m <= 0 or self.g <= 0:
            raise ValidationError("k_s, m, and g must all be positive")
        if float(np.linalg.norm(self.l0)) <= 0:
            raise ValidationError("rest length must be nonzero")

    @property
    def rest_length(self):
        return float(np.linalg.norm(self.l0))


@dataclass(frozen=True)
class AslipState:
    """CoM position/velocity, stance foot position, and contact phase."""

    b: np.ndarray
    db: np.ndarray
    foot: np.ndarray
    phase: Phase

    def __post_init__(self):
        if self.phase not in (Phase.CONTACT, Phase.FLIGHT):
            raise ValidationError(f"aSLIP phase must be Contact or Flight, got {self.phase}")


def aslip_accel(state, params, u=None):
    """CoM acceleration for one state.

    Flight: pure gravity.  Contact: spring force of magnitude
    k_s * |rest_length - leg_length| along the leg direction, per unit
    mass, plus gravity, plus the driving acceleration u.
    """
    gravity = np.array([0.0, 0.0, -params.g])
    if state.phase is Phase.FLIGHT:
        return gravity
    u = np.zeros(3) if u is None else np.asarray(u, dtype=float)
    leg = np.asarray(state.b, dtype=float) - np.asarray(state.foot, dtype=float)
    length = float(np.linalg.norm(leg))
    if length == 0.0:
        raise ValidationError("CoM coincides with the stance foot (zero leg length)")
    spring = params.k_s * abs(params.rest_length - length) / params.m * (leg / length)
    return spring + gravity + u


def simulate_aslip(params, initial_state, u_of_t, contact_schedule, horizon, dt,
                   *, integrator="adaptive", rtol=1e-8, atol=1e-10, rk4_substeps=1,
                   foot_positions=None):
    """Integrate the aSLIP CoM over a sampled horizon.

    contact_schedule: length-``horizon`` phase labels (interval k uses the
    label at index k); u_of_t: (horizon, 3) driving accelerations held
    constant per interval, or None.  foot_positions: (horizon, 3) stance
    foot per step, defaulting to the initial state's foot throughout.

    Returns (b, db): two (horizon, 3) arrays sampled at dt.
    """
    schedule = tuple(contact_schedule)
    if len(schedule) < horizon:
        raise ValidationError(
            f"contact schedule covers {len(schedule)} steps, horizon needs {horizon}"
        )
    if u_of_t is None:
        u_of_t = np.zeros((horizon, 3))
    else:
        u_of_t = np.asarray(u_of_t, dtype=float)
        if u_of_t.shape[0] < horizon:
            raise ValidationError("driving input does not cover the horizon")
    if foot_positions is None:
        foot_positions = np.repeat(np.asarray(initial_state.foot, dtype=float)[None, :], horizon, axis=0)
    else:
        foot_positions = np.asarray(foot_positions, dtype=float)

    y = np.concatenate([np.asarray(initial_state.b, dtype=float),
                        np.asarray(initial_state.db, dtype=float)])
    b_out = np.empty((horizon, 3))
    db_out = np.empty((horizon, 3))
    stiff_warned = False
    for k in range(horizon):
        b_out[k] = y[:3]
        db_out[k] = y[3:]
        if k == horizon - 1:
            break
        phase = Phase.CONTACT if schedule[k] in (Phase.CONTACT, Phase.PARTIAL_CONTACT) else Phase.FLIGHT
        foot_k = foot_positions[k]
        u_k = u_of_t[k]

        def rhs(t, state):
            s = AslipState(b=state[:3], db=state[3:], foot=foot_k, phase=phase)
            return np.concatenate([state[3:], aslip_accel(s, params, u_k)])

        if integrator == "fixed_rk4":
            y = _integrators.rk4_interval(rhs, k * dt, y, dt, rk4_substeps)
        elif integrator == "adaptive":
            y, nfev = _integrators.adaptive_interval(rhs, k * dt, y, dt, rtol, atol)
            if not stiff_warned and nfev > _integrators.STIFF_NFEV_PER_INTERVAL:
                warnings.warn("aSLIP dynamics appear stiff for the configured step", stacklevel=2)
                stiff_warned = True
        else:
            raise ValidationError(f"unknown integrator {integrator!r}")
    return b_out, db_out


def aslip_inputs_from_trajectory(traj, m):
    """Derive baseline inputs from a processed jump recording.

    Phase schedule comes from the recorded contact flags (partial contact
    counts as stance).  The stance foot is the segment-average of the
    in-contact foot positions, held fixed per contact segment.  The
    driving acceleration is the summed recorded ground reaction force per
    unit of the configured body mass, divided out later by the caller via
    params.m; here it is returned as the raw force sum.
    """
    if traj.phase_labels is None:
        raise ValidationError("trajectory has no phase labels; preprocess the dataset first")
    T = traj.n_samples
    labels = traj.phase_labels
    force_sum = np.zeros((T, 3))
    if traj.foot_forces is not None:
        force_sum = traj.foot_forces.reshape(T, 4, 3).sum(axis=1)
    feet = None
    if traj.foot_positions is not None:
        feet = traj.foot_positions.reshape(T, 4, 3)
    foot_per_step = np.zeros((T, 3))
    start = 0
    for i in range(1, T + 1):
        if i == T or labels[i] != labels[start]:
            if labels[start] is not Phase.FLIGHT and feet is not None:
                seg_contact = traj.contact[start:i].astype(bool)
                seg_feet = feet[start:i]
                picked = seg_feet[seg_contact]
                if picked.size:
                    foot_per_step[start:i] = picked.mean(axis=0)
            start = i
    return tuple(labels), foot_per_step, force_sum
