"""Forward integration of learned latent dynamics and error evaluation.

A rollout encodes the initial recorded state, integrates the second-order
latent system as a first-order system of size 2l (switching coefficient
matrices at phase boundaries, holding inputs constant between samples),
decodes every latent configuration back to configuration space, and scores
per-dimension RMSE against the recording.  The periodic-reset mode
re-encodes the recorded state every fixed number of steps to bound error
accumulation, emulating medium-horizon prediction inside a planning loop.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _integrators
from .autoencoder import decode, encode, transform_input
from .errors import DivergenceError, MissingPhaseError, ValidationError
from .sindy import build_library_row
from .trajectory_data import Phase


@dataclass(frozen=True)
class RolloutConfig:
    """Integration settings.

    step_rate: output sampling rate in Hz.  reset_interval: steps between
    re-encodings of the recorded state (0 disables resets).  integrator:
    "adaptive" (embedded RK pair) or "fixed_rk4" (bit-reproducible).
    """

    step_rate: float = 500.0
    reset_interval: int = 0
    integrator: str = "adaptive"
    rtol: float = 1e-8
    atol: float = 1e-10
    rk4_substeps: int = 1

    def __post_init__(self):
        if self.step_rate <= 0:
            raise ValidationError(f"step_rate must be > 0, got {self.step_rate}")
        if self.reset_interval < 0:
            raise ValidationError(f"reset_interval must be >= 0, got {self.reset_interval}")
        if self.integrator not in ("adaptive", "fixed_rk4"):
            raise ValidationError(f"unknown integrator {self.integrator!r}")
        if self.rk4_substeps < 1:
            raise ValidationError("rk4_substeps must be >= 1")


@dataclass(frozen=True)
class RolloutResult:
    """Predicted trajectories plus per-dimension errors.

    latent_pred: (T, 2l) predicted (state, velocity); q_pred: (T, d)
    decoded configurations; q_true: recorded configurations the RMSE was
    computed against; rmse: (d,).
    """

    timestamps: np.ndarray
    latent_pred: np.ndarray
    q_pred: np.ndarray
    q_true: np.ndarray
    rmse: np.ndarray
    phase_schedule: tuple[Phase, ...]
    reset_indices: tuple[int, ...] = ()


def _phase_table(model, schedule):
    needed = []
    for ph in schedule:
        if ph not in needed:
            needed.append(ph)
    table = {pm.phase: pm.coefficients for pm in model.phases}
    for ph in needed:
        if ph not in table:
            raise MissingPhaseError(ph)
    return table


def integrate(model, xi0, dxi0, nu_seq, phase_schedule, config, reset_states=None):
    """Integrate the latent dynamics over a sampled horizon.

    nu_seq: (T, l) inputs sampled at the output rate, held constant over
    each interval (zero-order), or None for zero input.  phase_schedule:
    length-T phase labels; interval k uses the label and input at index k.
    reset_states: optional (T, 2l) states to overwrite the integrated
    state with at every config.reset_interval-th step.

    Returns a (T, 2l) array of latent states at 1/step_rate spacing, row 0
    being the initial condition.  Raises DivergenceError when the state
    leaves the finite range and MissingPhaseError for unscheduled phases.
    """
    schedule = tuple(phase_schedule)
    n_steps = len(schedule)
    if n_steps == 0:
        raise ValidationError("empty phase schedule")
    table = _phase_table(model, schedule)
    l = model.autoencoder.latent_dim
    xi0 = np.asarray(xi0, dtype=float).reshape(l)
    dxi0 = np.asarray(dxi0, dtype=float).reshape(l)
    if nu_seq is None:
        nu_seq = np.zeros((n_steps, l))
    else:
        nu_seq = np.asarray(nu_seq, dtype=float)
        if nu_seq.shape != (n_steps, l):
            raise ValidationError(f"inputs must have shape {(n_steps, l)}, got {nu_seq.shape}")

    h = 1.0 / config.step_rate
    out = np.empty((n_steps, 2 * l))
    y = np.concatenate([xi0, dxi0])
    interval = config.reset_interval
    nfev_total = 0
    stiff_warned = False

    for k in range(n_steps):
        if reset_states is not None and interval > 0 and k > 0 and k % interval == 0:
            y = reset_states[k].copy()
        out[k] = y
        if k == n_steps - 1:
            break
        coeffs = table[schedule[k]]
        nu_k = nu_seq[k]

        def rhs(t, state):
            row = build_library_row(coeffs.library, state[:l], state[l:], nu_k)
            return np.concatenate([state[l:], row @ coeffs.Xi])

        t_k = k * h
        if config.integrator == "fixed_rk4":
            y = _integrators.rk4_interval(rhs, t_k, y, h, config.rk4_substeps)
        else:
            y, nfev = _integrators.adaptive_interval(rhs, t_k, y, h, config.rtol, config.atol)
            nfev_total += nfev
            if not stiff_warned and nfev > _integrators.STIFF_NFEV_PER_INTERVAL:
                warnings.warn(
                    f"adaptive integrator needed {nfev} evaluations in one output "
                    f"interval near t={t_k:.4f}s; dynamics may be stiff",
                    stacklevel=2,
                )
                stiff_warned = True
        if not np.all(np.isfinite(y)):
            raise DivergenceError(f"latent state became non-finite at t={t_k + h:.4f}s", t_k + h)
    return out


def _check_horizon(traj, config):
    dt = float(np.median(np.diff(traj.timestamps))) if traj.n_samples > 1 else 1.0 / config.step_rate
    expected = 1.0 / config.step_rate
    if abs(dt - expected) > 0.01 * expected:
        raise ValidationError(
            f"recorded step {dt:.6g}s does not match the configured rate "
            f"{config.step_rate:g} Hz (expected {expected:.6g}s)"
        )


def _prepare(model, traj, config, horizon):
    if traj.u is None:
        raise ValidationError("trajectory has no input columns u; preprocess the dataset first")
    if traj.phase_labels is None:
        raise ValidationError("trajectory has no phase labels; preprocess the dataset first")
    n = traj.n_samples if horizon is None else min(horizon, traj.n_samples)
    if n < 1:
        raise ValidationError("empty rollout horizon")
    if n > 1:
        _check_horizon(traj, config)
    ae = model.autoencoder
    nu = transform_input(ae, traj.u[:n])
    schedule = tuple(traj.phase_labels[:n])
    return n, nu, schedule


def _finish(model, traj, latent, schedule, reset_indices, n):
    ae = model.autoencoder
    l = ae.latent_dim
    q_pred = decode(ae, latent[:, :l], 0)
    q_true = traj.q[:n]
    err = q_pred - q_true
    rmse = np.sqrt(np.mean(err * err, axis=0))
    return RolloutResult(
        timestamps=traj.timestamps[:n],
        latent_pred=latent,
        q_pred=q_pred,
        q_true=q_true,
        rmse=rmse,
        phase_schedule=schedule,
        reset_indices=tuple(reset_indices),
    )


def rollout_full(model, traj, config, horizon=None):
    """Encode the initial recorded state once and integrate the whole horizon."""
    n, nu, schedule = _prepare(model, traj, config, horizon)
    ae = model.autoencoder
    xi0 = encode(ae, traj.q[0], 0)
    dxi0 = encode(ae, traj.dq[0], 1)
    latent = integrate(model, xi0, dxi0, nu, schedule, config)
    return _finish(model, traj, latent, schedule, (), n)


def rollout_with_reset(model, traj, config, horizon=None):
    """Rollout that re-encodes the recorded state every reset_interval steps.

    At each reset index the pre-integration latent state equals the
    encoding of the recorded (q, dq) exactly, so the latent configuration
    error at those instants is zero by construction.
    """
    if config.reset_interval <= 0:
        raise ValidationError("rollout_with_reset needs reset_interval > 0")
    n, nu, schedule = _prepare(model, traj, config, horizon)
    ae = model.autoencoder
    enc_q = encode(ae, traj.q[:n], 0)
    enc_dq = encode(ae, traj.dq[:n], 1)
    reset_states = np.concatenate([enc_q, enc_dq], axis=1)
    latent = integrate(model, enc_q[0], enc_dq[0], nu, schedule, config, reset_states=reset_states)
    reset_indices = [k for k in range(n) if k > 0 and k % config.reset_interval == 0]
    return _finish(model, traj, latent, schedule, reset_indices, n)


@dataclass(frozen=True)
class ComparisonTable:
    """Aligned per-dimension RMSE of several named rollouts."""

    names: tuple[str, ...]
    rmse: np.ndarray              # (n_models, d)
    error_series: np.ndarray      # (n_models, T) per-step error norms
    timestamps: np.ndarray

    def rows(self):
        return [(name, self.rmse[i]) for i, name in enumerate(self.names)]


def compare_models(named_results):
    """Tabulate named RolloutResults for side-by-side comparison.

    All results must share the same horizon and dimension layout.  The
    per-step series is the Euclidean error norm over dimensions, ready for
    plotting.
    """
    named_results = list(named_results)
    if not named_results:
        raise ValidationError("nothing to compare")
    horizon = named_results[0][1].q_pred.shape
    names, rmses, series = [], [], []
    for name, res in named_results:
        if res.q_pred.shape != horizon:
            raise ValidationError(
                f"result {name!r} has shape {res.q_pred.shape}, expected {horizon}"
            )
        names.append(name)
        rmses.append(res.rmse)
        err = res.q_pred - res.q_true
        series.append(np.linalg.norm(err, axis=1))
    return ComparisonTable(
        names=tuple(names),
        rmse=np.stack(rmses),
        error_series=np.stack(series),
        timestamps=named_results[0][1].timestamps,
    )
