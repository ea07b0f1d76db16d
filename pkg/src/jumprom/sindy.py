"""Candidate-function libraries and sparse regression of latent dynamics.

The latent acceleration of each phase is modeled as a sparse linear
combination of candidate functions of the latent state, latent velocity,
and transformed input.  Sparsity comes from sequentially thresholded least
squares (STLSQ): alternate ridge fits with hard elimination of small
coefficients until the support stabilizes.  When the decoded-acceleration
residual is enabled the two quadratic terms couple the coefficient columns
through the decoder, so the fit runs on the vectorized joint system.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .trajectory_data import Phase

XI = "ξ"                 # latent symbol for pretty printing
DXI = "ξ̇"          # with combining dot
DDXI = "ξ̈"         # with combining diaeresis
NU = "ν"
CDOT = "·"


@dataclass(frozen=True)
class FunctionLibrarySpec:
    """Declarative description of the candidate-function set.

    Canonical term order: constant; states by index; velocities by index;
    higher monomials over (state, velocity) of total degree 2..poly_degree
    in nondecreasing index-tuple order; sin of states; sin of velocities;
    linear input terms.  The order is fixed so model files stay portable.
    """

    poly_degree: int = 2
    include_constant: bool = True
    include_sin_states: bool = True
    include_sin_velocities: bool = True
    include_inputs: bool = True

    def __post_init__(self):
        if self.poly_degree < 0:
            raise ValidationError(f"poly_degree must be >= 0, got {self.poly_degree}")
        if not (
            self.include_constant
            or self.poly_degree >= 1
            or self.include_sin_states
            or self.include_sin_velocities
            or self.include_inputs
        ):
            raise ValidationError("library must enable at least one term class")

    def _monomials(self, latent_dim):
        """Index tuples over the stacked (state, velocity) vector, degree >= 2."""
        out = []
        for degree in range(2, self.poly_degree + 1):
            out.extend(itertools.combinations_with_replacement(range(2 * latent_dim), degree))
        return out

    def term_count(self, latent_dim):
        p = 0
        if self.include_constant:
            p += 1
        if self.poly_degree >= 1:
            p += 2 * latent_dim
        p += len(self._monomials(latent_dim))
        if self.include_sin_states:
            p += latent_dim
        if self.include_sin_velocities:
            p += latent_dim
        if self.include_inputs:
            p += latent_dim
        return p

    def term_names(self, latent_dim, unicode_symbols=False):
        """Canonical term names; ASCII by default (used in model files)."""
        xi, dxi, nu = ("xi", "dxi", "nu")
        if unicode_symbols:
            xi, dxi, nu = (XI, DXI, NU)
        base = [f"{xi}_{i + 1}" for i in range(latent_dim)] + [
            f"{dxi}_{i + 1}" for i in range(latent_dim)
        ]
        names = []
        if self.include_constant:
            names.append("1")
        if self.poly_degree >= 1:
            names.extend(base)
        sep = CDOT if unicode_symbols else "*"
        for combo in self._monomials(latent_dim):
            factors = []
            for idx, reps in itertools.groupby(combo):
                count = len(list(reps))
                factors.append(base[idx] if count == 1 else f"{base[idx]}^{count}")
            names.append(sep.join(factors))
        if self.include_sin_states:
            names.extend(f"sin({xi}_{i + 1})" for i in range(latent_dim))
        if self.include_sin_velocities:
            names.extend(f"sin({dxi}_{i + 1})" for i in range(latent_dim))
        if self.include_inputs:
            names.extend(f"{nu}_{i + 1}" for i in range(latent_dim))
        return names

    def slot(self, name, latent_dim):
        """Index of a term name in the canonical order."""
        names = self.term_names(latent_dim)
        try:
            return names.index(name)
        except ValueError:
            raise ValidationError(f"term {name!r} not in library (l={latent_dim})") from None


def build_library(spec, xi, dxi, nu=None):
    """Evaluate every enabled candidate function on a batch of samples.

    xi, dxi, nu: (N, l) arrays (nu may be omitted when the library has no
    input terms).  Returns the (N, p) design matrix in canonical order.
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    dxi = np.atleast_2d(np.asarray(dxi, dtype=float))
    if xi.shape != dxi.shape:
        raise ValidationError(f"state/velocity shapes differ: {xi.shape} vs {dxi.shape}")
    n, l = xi.shape
    if spec.include_inputs:
        if nu is None:
            raise ValidationError("library includes input terms but no inputs were given")
        nu = np.atleast_2d(np.asarray(nu, dtype=float))
        if nu.shape != (n, l):
            raise ValidationError(f"inputs must have shape {(n, l)}, got {nu.shape}")
    stacked = np.concatenate([xi, dxi], axis=1)
    cols = []
    if spec.include_constant:
        cols.append(np.ones((n, 1)))
    if spec.poly_degree >= 1:
        cols.append(stacked)
    for combo in spec._monomials(l):
        cols.append(np.prod(stacked[:, list(combo)], axis=1, keepdims=True))
    if spec.include_sin_states:
        cols.append(np.sin(xi))
    if spec.include_sin_velocities:
        cols.append(np.sin(dxi))
    if spec.include_inputs:
        cols.append(nu)
    return np.concatenate(cols, axis=1)


def build_library_row(spec, xi, dxi, nu=None):
    """Single-sample version of build_library; returns a (p,) vector."""
    row = build_library(
        spec,
        np.asarray(xi, dtype=float)[None, :],
        np.asarray(dxi, dtype=float)[None, :],
        None if nu is None else np.asarray(nu, dtype=float)[None, :],
    )
    return row[0]


@dataclass(frozen=True)
class SparseCoefficients:
    """Sparse (p, l) coefficient matrix with its active-entry mask."""

    Xi: np.ndarray
    active_mask: np.ndarray
    threshold: float
    library: FunctionLibrarySpec | None = None

    def __post_init__(self):
        if self.Xi.shape != self.active_mask.shape:
            raise ValidationError("coefficient and mask shapes differ")
        if np.any(self.Xi[~self.active_mask] != 0.0):
            raise ValidationError("coefficients must be zero outside the active mask")


@dataclass(frozen=True)
class PhaseModel:
    phase: Phase
    coefficients: SparseCoefficients


def count_active(coeffs):
    """Number of nonzero coefficient entries."""
    return int(coeffs.active_mask.sum())


def predict_latent_accel(coeffs, xi, dxi, nu=None):
    """Latent acceleration(s) predicted by a coefficient matrix."""
    if coeffs.library is None:
        raise ValidationError("coefficients carry no library spec")
    single = np.asarray(xi).ndim == 1
    theta = build_library(
        coeffs.library,
        np.atleast_2d(xi),
        np.atleast_2d(dxi),
        None if nu is None else np.atleast_2d(nu),
    )
    out = theta @ coeffs.Xi
    return out[0] if single else out


def _lstsq(A, b):
    return np.linalg.lstsq(A, b, rcond=None)[0]


def _solve_support(gram, rhs, support, ridge):
    """Ridge solution of the normal equations restricted to a support set."""
    idx = np.flatnonzero(support)
    G = gram[np.ix_(idx, idx)]
    if ridge > 0:
        G = G + ridge * np.eye(idx.size)
        return np.linalg.solve(G, rhs[idx]), idx
    return _lstsq(G, rhs[idx]), idx


def _stlsq_vector(gram, rhs, threshold, ridge, max_iters, init_support=None):
    """STLSQ on one normal-equations system; returns the full-length vector.

    Elimination is strict: entries with |coef| < threshold are dropped,
    entries exactly at the threshold are kept.  Stops when the support is
    stable or after max_iters refits.
    """
    p = rhs.shape[0]
    support = np.ones(p, dtype=bool) if init_support is None else init_support.copy()
    w = np.zeros(p)
    if not support.any():
        return w
    sol, idx = _solve_support(gram, rhs, support, ridge)
    w[idx] = sol
    for _ in range(max_iters):
        small = support & (np.abs(w) < threshold)
        if not small.any():
            break
        support &= ~small
        w[:] = 0.0
        if not support.any():
            break
        sol, idx = _solve_support(gram, rhs, support, ridge)
        w[idx] = sol
    return w


def stlsq(theta, targets, threshold=0.1, ridge=1e-9, max_iters=20, init_support=None):
    """Sequentially thresholded (ridge) least squares, column by column.

    theta: (N, p) design matrix; targets: (N,) or (N, l).  Each target
    column is fit independently.  threshold=0 degenerates to the dense
    ridge solution.  Columns whose support empties out are returned as
    all-zero with a warning (constant-zero dynamics).
    """
    theta = np.asarray(theta, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if targets.ndim == 1:
        targets = targets[:, None]
    n, p = theta.shape
    if threshold < 0:
        raise ValidationError(f"threshold must be >= 0, got {threshold}")
    if n < p:
        warnings.warn(
            f"underdetermined sparse regression: {n} samples for {p} candidate functions",
            stacklevel=2,
        )
    gram = theta.T @ theta
    Xi = np.zeros((p, targets.shape[1]))
    for j in range(targets.shape[1]):
        rhs = theta.T @ targets[:, j]
        sup = None if init_support is None else np.asarray(init_support)[:, j]
        Xi[:, j] = _stlsq_vector(gram, rhs, threshold, ridge, max_iters, sup)
        if not np.any(Xi[:, j]):
            warnings.warn(f"all coefficients of target column {j} eliminated "
                          "(constant-zero dynamics)", stacklevel=2)
    return SparseCoefficients(Xi=Xi, active_mask=Xi != 0.0, threshold=float(threshold))


@dataclass(frozen=True)
class LatentPhaseData:
    """Per-phase training samples in latent coordinates.

    xi, dxi, nu, ddxi: (N, l); ddq: (N, d) decoded-space acceleration
    targets (may be None when the decoded residual is disabled).
    """

    xi: np.ndarray
    dxi: np.ndarray
    nu: np.ndarray
    ddxi: np.ndarray
    ddq: np.ndarray | None = None

    @property
    def n_samples(self):
        return self.xi.shape[0]


def fit_phase_model(
    params,
    spec,
    data,
    threshold=0.1,
    ridge=1e-9,
    *,
    latent_weight=1.0,
    decoded_weight=1.0,
    max_iters=20,
    init_support=None,
    phase=Phase.CONTACT,
):
    """Sparse-regress the latent dynamics of one motion phase.

    Minimizes

        latent_weight  * || ddxi - Theta Xi ||^2
      + decoded_weight * || ddq - W_dec (Theta Xi)^T ||^2

    over sparse Xi with the autoencoder frozen.  Both residuals are linear
    in Xi; because the decoder couples the columns, the joint system is
    vectorized and the normal equations take the Kronecker form
    (M x Gram) with M = latent_weight I + decoded_weight W_dec^T W_dec.
    With decoded_weight=0 the columns decouple and plain stlsq is used.
    """
    if data.n_samples == 0:
        raise ValidationError(f"no data for phase {phase}")
    theta = build_library(spec, data.xi, data.dxi, data.nu if spec.include_inputs else None)
    n, p = theta.shape
    l = data.ddxi.shape[1]
    if n < p:
        warnings.warn(
            f"underdetermined sparse regression: {n} samples for {p} candidate functions",
            stacklevel=2,
        )

    if decoded_weight == 0.0:
        coeffs = stlsq(theta, data.ddxi, threshold, ridge, max_iters, init_support)
    else:
        if data.ddq is None:
            raise ValidationError("decoded-acceleration residual enabled but ddq targets missing")
        W_d = params.W_dec
        gram = theta.T @ theta
        M = latent_weight * np.eye(l) + decoded_weight * W_d.T @ W_d
        H = np.kron(M, gram)
        rhs_mat = theta.T @ (latent_weight * data.ddxi + decoded_weight * data.ddq @ W_d)
        rhs = rhs_mat.flatten(order="F")
        sup = None if init_support is None else np.asarray(init_support).flatten(order="F")
        x = _stlsq_vector(H, rhs, threshold, ridge, max_iters, sup)
        Xi = x.reshape(p, l, order="F")
        for j in range(l):
            if not np.any(Xi[:, j]):
                warnings.warn(f"all coefficients of latent dimension {j + 1} eliminated "
                              "(constant-zero dynamics)", stacklevel=2)
        coeffs = SparseCoefficients(Xi=Xi, active_mask=Xi != 0.0, threshold=float(threshold))

    coeffs = SparseCoefficients(
        Xi=coeffs.Xi, active_mask=coeffs.active_mask, threshold=coeffs.threshold, library=spec
    )
    return PhaseModel(phase=phase, coefficients=coeffs)


def fit_phase_model_l1(
    params,
    spec,
    data,
    l1_weight=1e-3,
    *,
    latent_weight=1.0,
    decoded_weight=1.0,
    step_size=None,
    max_iters=5000,
    tol=1e-10,
    phase=Phase.CONTACT,
):
    """Proximal-gradient (ISTA) alternative that optimizes the L1 penalty
    directly instead of hard thresholding.  Kept for comparison runs; the
    primary solver is fit_phase_model.
    """
    if data.n_samples == 0:
        raise ValidationError(f"no data for phase {phase}")
    theta = build_library(spec, data.xi, data.dxi, data.nu if spec.include_inputs else None)
    l = data.ddxi.shape[1]
    gram = theta.T @ theta
    M = latent_weight * np.eye(l)
    rhs = latent_weight * theta.T @ data.ddxi
    if decoded_weight > 0.0:
        if data.ddq is None:
            raise ValidationError("decoded-acceleration residual enabled but ddq targets missing")
        M = M + decoded_weight * params.W_dec.T @ params.W_dec
        rhs = rhs + decoded_weight * theta.T @ (data.ddq @ params.W_dec)
    lip = np.linalg.eigvalsh(gram)[-1] * np.linalg.eigvalsh(M)[-1]
    if step_size is None:
        step_size = 1.0 / (2.0 * lip)
    Xi = np.zeros((theta.shape[1], l))
    for _ in range(max_iters):
        grad = 2.0 * (gram @ Xi @ M - rhs)
        nxt = Xi - step_size * grad
        nxt = np.sign(nxt) * np.maximum(np.abs(nxt) - step_size * l1_weight, 0.0)
        if np.max(np.abs(nxt - Xi)) < tol:
            Xi = nxt
            break
        Xi = nxt
    coeffs = SparseCoefficients(Xi=Xi, active_mask=Xi != 0.0, threshold=0.0, library=spec)
    return PhaseModel(phase=phase, coefficients=coeffs)


def l1_penalty(coeffs):
    """Monitored sparsity metric: entrywise L1 norm of the coefficients."""
    return float(np.abs(coeffs.Xi).sum())


def print_symbolic(model, precision=2):
    """Render one human-readable equation per latent dimension.

    Terms appear in canonical order, zero entries are omitted, and
    coefficients are rounded to ``precision`` decimals.
    """
    coeffs = model.coefficients
    if coeffs.library is None:
        raise ValidationError("coefficients carry no library spec")
    p, l = coeffs.Xi.shape
    names = coeffs.library.term_names(l, unicode_symbols=True)
    lines = []
    for j in range(l):
        parts = []
        for i in range(p):
            if not coeffs.active_mask[i, j]:
                continue
            c = coeffs.Xi[i, j]
            mag = f"{abs(c):.{precision}f}"
            body = mag if names[i] == "1" else f"{mag}{CDOT}{names[i]}"
            if not parts:
                parts.append(body if c >= 0 else f"-{body}")
            else:
                parts.append(f"{'+' if c >= 0 else '-'} {body}")
        expr = " ".join(parts) if parts else "0"
        lines.append(f"{DDXI}_{j + 1} = {expr}")
    return lines
