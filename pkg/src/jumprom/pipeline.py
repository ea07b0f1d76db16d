"""Three-stage sequential training, latent-dimension selection, fine-tuning.

Stage 1 fits the autoencoder on the configurations of the seed phase (full
contact by default).  Stage 2 freezes the encoder and refits the decoder
on every phase in closed form.  Stage 3 freezes the whole autoencoder and
sparse-regresses the latent dynamics of each phase separately.  The model
selection scan repeats the pipeline over latent dimensions and seeds and
scores each cell with an AIC-style combination of test reconstruction
error and symbolic complexity.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import __about__
from .autoencoder import (
    AutoencoderParams,
    encode,
    finetune_decoder,
    recon_loss,
    train_autoencoder,
    transform_input,
)
from .errors import (
    JumpromError,
    ModelFormatError,
    PipelineStepError,
    UnsupportedModelVersionError,
    ValidationError,
)
from .sindy import (
    FunctionLibrarySpec,
    LatentPhaseData,
    PhaseModel,
    SparseCoefficients,
    count_active,
    fit_phase_model,
)
from .trajectory_data import Phase, is_processed, process_dataset, segment_phases, split_dataset

log = logging.getLogger("jumprom.pipeline")

MODEL_FORMAT_VERSION = 1
_MODEL_MAGIC = "jumprom-model"

PHASE_ORDER = (Phase.CONTACT, Phase.PARTIAL_CONTACT, Phase.FLIGHT)


@dataclass(frozen=True)
class TrainingConfig:
    """Hyperparameters of one pipeline run."""

    latent_dim: int = 2
    seed: int = 0
    learning_rate: float = 1e-3
    momentum: float = 0.9
    epochs: int = 200
    encoder_init: str = "pca"
    standardize: bool = False
    decoder_ridge: float = 1e-10
    stlsq_threshold: float = 0.1
    stlsq_ridge: float = 1e-9
    stlsq_max_iters: int = 20
    library: FunctionLibrarySpec = field(default_factory=FunctionLibrarySpec)
    latent_accel_weight: float = 1.0
    decoded_accel_weight: float = 1.0
    boundary_trim: int = 2
    smooth_window: int = 0
    seed_phase: Phase = Phase.CONTACT
    selection_lambda: float = 0.001
    scan_reshuffle_split: bool = True
    fine_tune_lr_scale: float = 0.1

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValidationError("latent_dim must be >= 1")
        for name in ("learning_rate", "momentum", "epochs", "stlsq_threshold",
                     "stlsq_ridge", "decoder_ridge", "selection_lambda"):
            if getattr(self, name) < 0 or not np.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite and >= 0")

    def hash(self):
        payload = json.dumps(config_to_dict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def config_to_dict(config):
    d = {k: v for k, v in vars(config).items()}
    d["library"] = vars(config.library).copy()
    d["seed_phase"] = str(config.seed_phase)
    return d


def config_from_dict(payload):
    payload = dict(payload)
    if "library" in payload:
        payload["library"] = FunctionLibrarySpec(**payload["library"])
    if "seed_phase" in payload:
        payload["seed_phase"] = Phase(payload["seed_phase"])
    return TrainingConfig(**payload)


@dataclass(frozen=True)
class MultiPhaseModel:
    """Shared autoencoder plus one sparse dynamics model per phase."""

    autoencoder: AutoencoderParams
    phases: tuple[PhaseModel, ...]
    provenance: dict

    def __post_init__(self):
        labels = [pm.phase for pm in self.phases]
        if len(set(labels)) != len(labels):
            raise ValidationError("duplicate phase models")

    def phase_model(self, phase):
        for pm in self.phases:
            if pm.phase == phase:
                return pm
        raise ValidationError(f"model has no phase {phase}")

    @property
    def phase_labels(self):
        return tuple(pm.phase for pm in self.phases)


@dataclass(frozen=True)
class StepSnapshots:
    """Parameter copies taken after stages 1 and 2, for audit tests."""

    after_stage1: AutoencoderParams
    after_stage2: AutoencoderParams


@dataclass(frozen=True)
class SelectionRow:
    latent_dim: int
    seed: int
    decoder_error: float
    active_count: int
    selection_loss: float


@dataclass(frozen=True)
class SelectionReport:
    """Scan rows (sorted by latent dim, then seed) plus per-dim aggregates."""

    rows: tuple[SelectionRow, ...]
    selection_lambda: float

    def aggregates(self):
        """(latent_dim, mean, std) of the selection loss per latent dim."""
        dims = sorted({r.latent_dim for r in self.rows})
        out = []
        for l in dims:
            vals = np.array([r.selection_loss for r in self.rows if r.latent_dim == l])
            out.append((l, float(vals.mean()), float(vals.std())))
        return out

    def best_latent_dim(self, seed=None):
        rows = [r for r in self.rows if seed is None or r.seed == seed]
        best = min(rows, key=lambda r: (r.selection_loss, r.latent_dim))
        return best.latent_dim


def selection_loss(decoder_error, active_count, selection_lambda):
    """AIC-style score: 2 * error + 2 * lambda * ln(active count)."""
    with np.errstate(divide="ignore"):
        return float(2.0 * decoder_error + 2.0 * selection_lambda * np.log(active_count))


# ---------------------------------------------------------------------------
# data assembly


def _ensure_processed(dataset, config):
    if is_processed(dataset):
        return dataset
    return process_dataset(dataset, smooth_window=config.smooth_window)


def _phase_rows(jumps, phase, trim):
    """Indices of samples belonging to a phase, with segment edges trimmed.

    Finite-difference accelerations straddle the dynamics switch at phase
    boundaries, so ``trim`` samples at each end of every contiguous
    segment are excluded from the regression data.
    """
    rows = []
    for j, jump in enumerate(jumps):
        _, segments = segment_phases(jump.contact)
        for seg in segments:
            if seg.phase != phase:
                continue
            lo = seg.start + trim
            hi = seg.end - trim
            if hi >= lo:
                rows.append((j, lo, hi))
    return rows


def _gather(jumps, rows, attr):
    parts = [getattr(jumps[j], attr)[lo : hi + 1] for j, lo, hi in rows]
    return np.concatenate(parts, axis=0) if parts else None


def _phases_present(jumps):
    present = []
    for jump in jumps:
        for ph in jump.phase_labels:
            if ph not in present:
                present.append(ph)
    return tuple(sorted(present, key=PHASE_ORDER.index))


# ---------------------------------------------------------------------------
# pipeline


def run_pipeline(dataset, config, record_steps=False):
    """Run the three sequential training stages on the train split.

    Returns a MultiPhaseModel (and, with ``record_steps``, a
    StepSnapshots capturing the autoencoder after stages 1 and 2, for
    frozen-weight audits).  Deterministic given (dataset, config).
    """
    dataset = _ensure_processed(dataset, config)
    train_jumps = dataset.jumps_in("train")
    if not train_jumps:
        raise ValidationError("dataset has no train split")
    val_jumps = dataset.jumps_in("val")

    # stage 1: autoencoder on the seed phase configurations
    seed_rows = _phase_rows(train_jumps, config.seed_phase, trim=0)
    q_seed = _gather(train_jumps, seed_rows, "q")
    if q_seed is None:
        raise ValidationError(f"no {config.seed_phase} data to seed the autoencoder")
    val_rows = _phase_rows(val_jumps, config.seed_phase, trim=0)
    q_val = _gather(val_jumps, val_rows, "q")
    try:
        ae1, history = train_autoencoder(
            q_seed,
            config.latent_dim,
            epochs=config.epochs,
            learning_rate=config.learning_rate,
            momentum=config.momentum,
            seed=config.seed,
            init=config.encoder_init,
            val_data=q_val,
            standardize=config.standardize,
        )
    except JumpromError as e:
        raise PipelineStepError(1, e) from e
    if history.train_loss.size:
        log.info("stage 1: reconstruction loss %.3e -> %.3e over %d epochs",
                 history.train_loss[0], history.train_loss[-1], config.epochs)

    # stage 2: decoder refit on all phases, encoder frozen
    q_all = np.concatenate([j.q for j in train_jumps], axis=0)
    try:
        ae2 = finetune_decoder(ae1, q_all, ridge=config.decoder_ridge)
    except JumpromError as e:
        raise PipelineStepError(2, e) from e
    log.info("stage 2: all-phase reconstruction loss %.3e", recon_loss(ae2, q_all))

    # stage 3: sparse dynamics per phase, autoencoder frozen
    phases = _phases_present(train_jumps)
    phase_models = []
    for phase in phases:
        data = _latent_phase_data(ae2, train_jumps, phase, config)
        try:
            pm = fit_phase_model(
                ae2,
                config.library,
                data,
                config.stlsq_threshold,
                config.stlsq_ridge,
                latent_weight=config.latent_accel_weight,
                decoded_weight=config.decoded_accel_weight,
                max_iters=config.stlsq_max_iters,
                phase=phase,
            )
        except JumpromError as e:
            raise PipelineStepError(3, e) from e
        log.info("stage 3 [%s]: %d active terms", phase, count_active(pm.coefficients))
        phase_models.append(pm)

    provenance = {
        "dataset": {
            "robot": dataset.meta.robot,
            "m": dataset.meta.m,
            "dt": dataset.meta.dt,
            "noise_sigma": dataset.meta.noise_sigma,
            "n_jumps": dataset.n_jumps,
            "split_counts": list(dataset.split_counts()),
        },
        "seed": config.seed,
        "latent_dim": config.latent_dim,
        "config_hash": config.hash(),
        "package_version": __about__.__version__,
    }
    model = MultiPhaseModel(autoencoder=ae2, phases=tuple(phase_models), provenance=provenance)
    if record_steps:
        return model, StepSnapshots(after_stage1=ae1, after_stage2=ae2)
    return model


def _latent_phase_data(params, jumps, phase, config, trim=None):
    trim = config.boundary_trim if trim is None else trim
    rows = _phase_rows(jumps, phase, trim)
    q = _gather(jumps, rows, "q")
    if q is None:
        raise ValidationError(f"no data for phase {phase}")
    dq = _gather(jumps, rows, "dq")
    ddq = _gather(jumps, rows, "ddq")
    u = _gather(jumps, rows, "u")
    return LatentPhaseData(
        xi=encode(params, q, 0),
        dxi=encode(params, dq, 1),
        nu=transform_input(params, u),
        ddxi=encode(params, ddq, 2),
        ddq=ddq,
    )


def decoder_test_error(model, dataset):
    """Mean squared reconstruction error over the test-split configurations."""
    test_jumps = dataset.jumps_in("test")
    if not test_jumps:
        raise ValidationError("dataset has no test split")
    q = np.concatenate([j.q for j in test_jumps], axis=0)
    return recon_loss(model.autoencoder, q)


def total_active(model):
    return sum(count_active(pm.coefficients) for pm in model.phases)


def model_selection_scan(dataset, l_values, seeds, config):
    """Run the pipeline over every (latent dim, seed) cell and score it.

    Each seed reruns the whole pipeline; with ``config.scan_reshuffle_split``
    the train/val/test assignment is reshuffled per seed (same counts), so
    seeds perturb an otherwise deterministic procedure.  Returns rows
    sorted by latent dim then seed.
    """
    l_values = list(l_values)
    if not l_values:
        raise ValidationError("no latent dimensions to scan")
    dataset = _ensure_processed(dataset, config)
    full_dim = dataset.meta.m + 6
    for l in l_values:
        if not (1 <= l <= full_dim):
            raise ValidationError(f"scan latent dim {l} outside [1, {full_dim}]")
    rows = []
    for seed in seeds:
        cell_dataset = dataset
        if config.scan_reshuffle_split:
            cell_dataset = split_dataset(dataset, dataset.split_counts(), seed=seed)
        for l in sorted(l_values):
            cell_cfg = replace(config, latent_dim=l, seed=seed)
            model = run_pipeline(cell_dataset, cell_cfg)
            e_dec = decoder_test_error(model, cell_dataset)
            active = total_active(model)
            rows.append(SelectionRow(
                latent_dim=l,
                seed=seed,
                decoder_error=e_dec,
                active_count=active,
                selection_loss=selection_loss(e_dec, active, config.selection_lambda),
            ))
            log.info("scan l=%d seed=%d: E_dec=%.3e |Xi|=%d L_mod=%.6f",
                     l, seed, e_dec, active, rows[-1].selection_loss)
    rows.sort(key=lambda r: (r.latent_dim, r.seed))
    return SelectionReport(rows=tuple(rows), selection_lambda=config.selection_lambda)


def write_selection_report(report, path):
    with open(path, "w") as fh:
        fh.write("l,seed,E_dec,active_count,L_mod\n")
        for r in report.rows:
            fh.write(f"{r.latent_dim},{r.seed},{r.decoder_error!r},"
                     f"{r.active_count},{r.selection_loss!r}\n")


def fine_tune(model, dataset, config):
    """Resume all three stages from an existing model on a new dataset.

    Stage 1 restarts gradient descent from the existing weights at a
    reduced learning rate; stage 2 re-solves the decoder in closed form;
    stage 3 warm-starts the sparse regression from the existing support of
    each phase (new phases start cold).  Provenance records the hash of
    the parent model.
    """
    dataset = _ensure_processed(dataset, config)
    train_jumps = dataset.jumps_in("train")
    if not train_jumps:
        raise ValidationError("dataset has no train split")
    full_dim = dataset.meta.m + 6
    if model.autoencoder.full_dim != full_dim:
        raise ValidationError(
            f"model dimension {model.autoencoder.full_dim} does not match dataset ({full_dim})"
        )
    parent_hash = model_hash(model)

    seed_rows = _phase_rows(train_jumps, config.seed_phase, trim=0)
    q_seed = _gather(train_jumps, seed_rows, "q")
    if q_seed is None:
        raise ValidationError(f"no {config.seed_phase} data to resume the autoencoder")
    try:
        ae1, _ = train_autoencoder(
            q_seed,
            model.autoencoder.latent_dim,
            epochs=config.epochs,
            learning_rate=config.learning_rate * config.fine_tune_lr_scale,
            momentum=config.momentum,
            seed=config.seed,
            init_params=model.autoencoder,
            standardize=config.standardize,
        )
    except JumpromError as e:
        raise PipelineStepError(1, e) from e

    q_all = np.concatenate([j.q for j in train_jumps], axis=0)
    try:
        ae2 = finetune_decoder(ae1, q_all, ridge=config.decoder_ridge)
    except JumpromError as e:
        raise PipelineStepError(2, e) from e

    old_supports = {pm.phase: pm.coefficients.active_mask for pm in model.phases}
    phase_models = []
    for phase in _phases_present(train_jumps):
        data = _latent_phase_data(ae2, train_jumps, phase, config)
        try:
            pm = fit_phase_model(
                ae2,
                config.library,
                data,
                config.stlsq_threshold,
                config.stlsq_ridge,
                latent_weight=config.latent_accel_weight,
                decoded_weight=config.decoded_accel_weight,
                max_iters=config.stlsq_max_iters,
                init_support=old_supports.get(phase),
                phase=phase,
            )
        except JumpromError as e:
            raise PipelineStepError(3, e) from e
        phase_models.append(pm)

    provenance = dict(model.provenance)
    provenance.update({
        "parent_hash": parent_hash,
        "fine_tuned_on": dataset.meta.robot,
        "seed": config.seed,
        "config_hash": config.hash(),
    })
    return MultiPhaseModel(autoencoder=ae2, phases=tuple(phase_models), provenance=provenance)


# ---------------------------------------------------------------------------
# model file format


def _write_matrix(out, name, arr):
    arr = np.atleast_2d(np.asarray(arr, dtype=float))
    out.write(f"{name} {arr.shape[0]} {arr.shape[1]}\n")
    for row in arr:
        out.write(" ".join(repr(float(x)) for x in row) + "\n")


def serialize_model(model):
    """Render a model as versioned structured text with full float precision."""
    out = io.StringIO()
    out.write(f"{_MODEL_MAGIC} {MODEL_FORMAT_VERSION}\n")
    out.write("provenance " + json.dumps(model.provenance, sort_keys=True) + "\n")
    ae = model.autoencoder
    out.write(f"autoencoder {ae.latent_dim} {ae.full_dim}\n")
    _write_matrix(out, "W_enc", ae.W_enc)
    _write_matrix(out, "b_enc", ae.b_enc[None, :])
    _write_matrix(out, "W_dec", ae.W_dec)
    _write_matrix(out, "b_dec", ae.b_dec[None, :])
    for pm in model.phases:
        coeffs = pm.coefficients
        lib = coeffs.library
        out.write(f"phase {pm.phase}\n")
        out.write("library " + json.dumps(vars(lib), sort_keys=True) + "\n")
        out.write(f"threshold {coeffs.threshold!r}\n")
        out.write("terms " + " ".join(lib.term_names(ae.latent_dim)) + "\n")
        _write_matrix(out, "coefficients", coeffs.Xi)
    out.write("end\n")
    return out.getvalue()


def model_hash(model):
    return hashlib.sha256(serialize_model(model).encode()).hexdigest()[:16]


def save_model(model, path):
    with open(path, "w") as fh:
        fh.write(serialize_model(model))


class _LineReader:
    """Line iterator that tracks the byte offset of the current line."""

    def __init__(self, text):
        self.lines = text.split("\n")
        self.index = 0
        self.offset = 0
        self._lengths = [len(line.encode()) + 1 for line in self.lines]

    def next_line(self, expect=None):
        while True:
            if self.index >= len(self.lines):
                raise ModelFormatError("unexpected end of file", self.offset)
            line = self.lines[self.index]
            offset = self.offset
            self.offset += self._lengths[self.index]
            self.index += 1
            if line.strip() == "" and self.index < len(self.lines):
                continue
            if line.strip() == "":
                raise ModelFormatError("unexpected end of file", offset)
            if expect is not None and not line.startswith(expect):
                raise ModelFormatError(f"expected {expect!r}, found {line.split(' ')[0]!r}", offset)
            return line, offset

    def peek(self):
        i = self.index
        while i < len(self.lines) and self.lines[i].strip() == "":
            i += 1
        return self.lines[i] if i < len(self.lines) else None


def _read_matrix(reader, name, want_shape=None):
    header, offset = reader.next_line(expect=name)
    parts = header.split()
    if len(parts) != 3:
        raise ModelFormatError(f"malformed {name} header", offset)
    rows, cols = int(parts[1]), int(parts[2])
    if want_shape is not None and (rows, cols) != want_shape:
        raise ModelFormatError(f"{name} has shape {(rows, cols)}, expected {want_shape}", offset)
    data = np.empty((rows, cols))
    for r in range(rows):
        line, offset = reader.next_line()
        vals = line.split()
        if len(vals) != cols:
            raise ModelFormatError(f"{name} row {r} has {len(vals)} values, expected {cols}", offset)
        try:
            data[r] = [float(v) for v in vals]
        except ValueError as e:
            raise ModelFormatError(f"bad float in {name} row {r}: {e}", offset) from e
    return data


def parse_model(text):
    reader = _LineReader(text)
    magic, offset = reader.next_line()
    parts = magic.split()
    if len(parts) != 2 or parts[0] != _MODEL_MAGIC:
        raise ModelFormatError("not a model file", offset)
    if parts[1] != str(MODEL_FORMAT_VERSION):
        raise UnsupportedModelVersionError(parts[1], MODEL_FORMAT_VERSION)

    line, offset = reader.next_line(expect="provenance")
    try:
        provenance = json.loads(line[len("provenance "):])
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"bad provenance JSON: {e}", offset) from e

    line, offset = reader.next_line(expect="autoencoder")
    parts = line.split()
    if len(parts) != 3:
        raise ModelFormatError("malformed autoencoder header", offset)
    l, d = int(parts[1]), int(parts[2])
    ae = AutoencoderParams(
        W_enc=_read_matrix(reader, "W_enc", (l, d)),
        b_enc=_read_matrix(reader, "b_enc", (1, l))[0],
        W_dec=_read_matrix(reader, "W_dec", (d, l)),
        b_dec=_read_matrix(reader, "b_dec", (1, d))[0],
    )

    phase_models = []
    while True:
        line, offset = reader.next_line()
        if line.startswith("end"):
            break
        if not line.startswith("phase "):
            raise ModelFormatError(f"expected 'phase' or 'end', found {line.split(' ')[0]!r}", offset)
        try:
            phase = Phase(line.split(" ", 1)[1].strip())
        except ValueError as e:
            raise ModelFormatError(f"unknown phase {line.split(' ', 1)[1]!r}", offset) from e
        line, offset = reader.next_line(expect="library")
        try:
            lib = FunctionLibrarySpec(**json.loads(line[len("library "):]))
        except (json.JSONDecodeError, TypeError) as e:
            raise ModelFormatError(f"bad library JSON: {e}", offset) from e
        line, offset = reader.next_line(expect="threshold")
        threshold = float(line.split()[1])
        line, offset = reader.next_line(expect="terms")
        terms = line.split()[1:]
        expected_terms = lib.term_names(l)
        if terms != expected_terms:
            raise ModelFormatError("term list does not match the library spec", offset)
        Xi = _read_matrix(reader, "coefficients", (len(expected_terms), l))
        coeffs = SparseCoefficients(
            Xi=Xi, active_mask=Xi != 0.0, threshold=threshold, library=lib
        )
        phase_models.append(PhaseModel(phase=phase, coefficients=coeffs))

    return MultiPhaseModel(autoencoder=ae, phases=tuple(phase_models), provenance=provenance)


def load_model(path):
    with open(path, "r") as fh:
        return parse_model(fh.read())


def models_equal(a, b):
    """Bitwise equality of autoencoder weights and phase coefficients."""
    ae_a, ae_b = a.autoencoder, b.autoencoder
    if not all(
        np.array_equal(getattr(ae_a, n), getattr(ae_b, n))
        for n in ("W_enc", "b_enc", "W_dec", "b_dec")
    ):
        return False
    if a.phase_labels != b.phase_labels:
        return False
    for pa, pb in zip(a.phases, b.phases):
        if not np.array_equal(pa.coefficients.Xi, pb.coefficients.Xi):
            return False
        if pa.coefficients.library != pb.coefficients.library:
            return False
    return True
