"""The bidirectional estimation model.

Two encoder-decoder pairs share a single matcher gate: the forward pair maps
flattened link counts to a flattened OD matrix and the inverse pair maps the
OD matrix back to link counts.  Inputs and outputs are standardized per
dimension with statistics from the training split; dimensions with near-zero
spread keep scale 1 so they pass through unscaled.
"""

from __future__ import annotations

import hashlib
import json
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .matcher import GraphMatcher, gate_vector
from .numcore import MlpCache, MlpParams, mlp_backward, mlp_forward

MODEL_FORMAT_VERSION = 1

SIGMA_FLOOR = 1e-8


@dataclass(frozen=True)
class ModelDims:
    n_links: int
    n_timeslices: int
    n_spots: int
    n_features: int
    n_hidden: int
    n_structures: int

    @property
    def n_inputs(self) -> int:
        return self.n_links * self.n_timeslices

    @property
    def n_outputs(self) -> int:
        return self.n_spots * self.n_spots


@dataclass
class Normalization:
    """Per-dimension z-scoring with a pass-through guard for flat dimensions."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def from_rows(cls, rows: np.ndarray) -> "Normalization":
        mean = rows.mean(axis=0)
        sigma = rows.std(axis=0)
        scale = np.where(sigma < SIGMA_FLOOR, 1.0, sigma)
        return cls(mean=mean, scale=scale)

    @classmethod
    def identity(cls, n: int) -> "Normalization":
        return cls(mean=np.zeros(n), scale=np.ones(n))

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.scale

    def invert(self, values: np.ndarray) -> np.ndarray:
        return values * self.scale + self.mean


@dataclass
class CGameModel:
    dims: ModelDims
    fwd_encoder: MlpParams
    fwd_decoder: MlpParams
    inv_encoder: MlpParams
    inv_decoder: MlpParams
    matcher: GraphMatcher
    input_norm: Normalization  # link-counts side
    output_norm: Normalization  # OD side
    gate_mode: str = "mean"

    def __post_init__(self) -> None:
        d = self.dims
        if self.fwd_encoder.n_out != d.n_features or self.inv_encoder.n_out != d.n_features:
            raise ConfigError("both encoders must produce n_features outputs")
        if self.fwd_decoder.n_in != d.n_features or self.inv_decoder.n_in != d.n_features:
            raise ConfigError("both decoders must consume n_features inputs")
        if self.fwd_encoder.n_in != d.n_inputs or self.inv_decoder.n_out != d.n_inputs:
            raise ConfigError("counts-side widths do not match n_links * n_timeslices")
        if self.inv_encoder.n_in != d.n_outputs or self.fwd_decoder.n_out != d.n_outputs:
            raise ConfigError("OD-side widths do not match n_spots squared")
        if self.matcher.n_features != d.n_features:
            raise ConfigError("matcher feature count does not match the encoders")


def _glorot(rng: np.random.Generator, n_out: int, n_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in))


def _init_mlp(rng: np.random.Generator, n_in: int, n_hidden: int, n_out: int, slope: float) -> MlpParams:
    return MlpParams(
        w1=_glorot(rng, n_hidden, n_in),
        b1=np.zeros(n_hidden),
        w2=_glorot(rng, n_out, n_hidden),
        b2=np.zeros(n_out),
        slope=slope,
    )


def init_model(
    dims: ModelDims,
    rng: np.random.Generator,
    *,
    leaky_slope: float = 0.01,
    structures_per_step: int = 8,
    refresh_substeps: int = 4,
    discount: float = 0.9,
    update_interval: int = 50,
    gate_mode: str = "mean",
    literal_cosine: bool = False,
) -> CGameModel:
    """Fresh model with seeded weight initialization and an identity gate."""
    fwd_enc = _init_mlp(rng, dims.n_inputs, dims.n_hidden, dims.n_features, leaky_slope)
    fwd_dec = _init_mlp(rng, dims.n_features, dims.n_hidden, dims.n_outputs, leaky_slope)
    inv_enc = _init_mlp(rng, dims.n_outputs, dims.n_hidden, dims.n_features, leaky_slope)
    inv_dec = _init_mlp(rng, dims.n_features, dims.n_hidden, dims.n_inputs, leaky_slope)
    matcher = GraphMatcher.initial(
        dims.n_features,
        dims.n_structures,
        structures_per_step=structures_per_step,
        refresh_substeps=refresh_substeps,
        discount=discount,
        update_interval=update_interval,
        literal_cosine=literal_cosine,
    )
    return CGameModel(
        dims=dims,
        fwd_encoder=fwd_enc,
        fwd_decoder=fwd_dec,
        inv_encoder=inv_enc,
        inv_decoder=inv_dec,
        matcher=matcher,
        input_norm=Normalization.identity(dims.n_inputs),
        output_norm=Normalization.identity(dims.n_outputs),
        gate_mode=gate_mode,
    )


def flatten_counts(counts: np.ndarray) -> np.ndarray:
    """Row-major (link-major) flattening; accepts one matrix or a batch."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim == 2:
        return counts.reshape(-1)
    if counts.ndim == 3:
        return counts.reshape(counts.shape[0], -1)
    raise ValueError(f"expected 2-D or 3-D counts, got shape {counts.shape}")


def flatten_od(od: np.ndarray) -> np.ndarray:
    return flatten_counts(od)


def unflatten_od(flat: np.ndarray, n_spots: int) -> np.ndarray:
    flat = np.asarray(flat)
    if flat.ndim == 1:
        return flat.reshape(n_spots, n_spots)
    return flat.reshape(flat.shape[0], n_spots, n_spots)


def unflatten_counts(flat: np.ndarray, n_links: int, n_timeslices: int) -> np.ndarray:
    flat = np.asarray(flat)
    if flat.ndim == 1:
        return flat.reshape(n_links, n_timeslices)
    return flat.reshape(flat.shape[0], n_links, n_timeslices)


@dataclass
class ForwardCaches:
    encoder: MlpCache
    hidden: np.ndarray
    gate: np.ndarray
    decoder: MlpCache


def _direction(model: CGameModel, direction: str) -> tuple[MlpParams, MlpParams]:
    if direction == "forward":
        return model.fwd_encoder, model.fwd_decoder
    if direction == "inverse":
        return model.inv_encoder, model.inv_decoder
    raise ValueError(f"unknown direction {direction!r}")


def model_forward(
    model: CGameModel, x: np.ndarray, direction: str = "forward"
) -> tuple[np.ndarray, ForwardCaches]:
    """Encode, gate, decode one normalized batch; caches support backward."""
    encoder, decoder = _direction(model, direction)
    h, enc_cache = mlp_forward(encoder, x)
    gate = gate_vector(model.matcher, model.gate_mode)
    g = h * gate
    y, dec_cache = mlp_forward(decoder, g)
    return y, ForwardCaches(encoder=enc_cache, hidden=h, gate=gate, decoder=dec_cache)


def model_backward(
    model: CGameModel, caches: ForwardCaches, grad_out: np.ndarray, direction: str = "forward"
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Gradients of the composition; the gate is a constant during gradients.

    Keys are prefixed ``enc.`` / ``dec.`` within the given direction.
    """
    encoder, decoder = _direction(model, direction)
    dec_grads, dg = mlp_backward(decoder, caches.decoder, grad_out)
    dh = dg * caches.gate
    enc_grads, dx = mlp_backward(encoder, caches.encoder, dh)
    grads = {f"enc.{k}": v for k, v in enc_grads.items()}
    grads.update({f"dec.{k}": v for k, v in dec_grads.items()})
    return grads, dx


def _predict(model: CGameModel, values: np.ndarray, direction: str) -> np.ndarray:
    single = values.ndim == 2
    if direction == "forward":
        expected = (model.dims.n_links, model.dims.n_timeslices)
        norm_in, norm_out = model.input_norm, model.output_norm
    else:
        expected = (model.dims.n_spots, model.dims.n_spots)
        norm_in, norm_out = model.output_norm, model.input_norm
    if values.ndim not in (2, 3) or values.shape[-2:] != expected:
        raise ValueError(f"input shape {values.shape} does not match model dims {expected}")
    flat = flatten_counts(values)
    if single:
        flat = flat[np.newaxis, :]
    out, _ = model_forward(model, norm_in.apply(flat), direction)
    out = np.maximum(norm_out.invert(out), 0.0)  # demand and counts are nonnegative
    if direction == "forward":
        result = unflatten_od(out, model.dims.n_spots)
    else:
        result = unflatten_counts(out, model.dims.n_links, model.dims.n_timeslices)
    return result[0] if single else result


def predict_od(model: CGameModel, counts: np.ndarray) -> np.ndarray:
    """Estimate OD matrices from link counts (single matrix or batch)."""
    return _predict(model, np.asarray(counts, dtype=np.float64), "forward")


def predict_counts(model: CGameModel, ods: np.ndarray) -> np.ndarray:
    """Estimate link counts from OD matrices (single matrix or batch)."""
    return _predict(model, np.asarray(ods, dtype=np.float64), "inverse")


def parameter_blocks(model: CGameModel) -> dict[str, np.ndarray]:
    """All trainable arrays in canonical order (also the persistence order)."""
    blocks: dict[str, np.ndarray] = {}
    for prefix, mlp in (
        ("fwd_encoder", model.fwd_encoder),
        ("fwd_decoder", model.fwd_decoder),
        ("inv_encoder", model.inv_encoder),
        ("inv_decoder", model.inv_decoder),
    ):
        for name, arr in mlp.blocks().items():
            blocks[f"{prefix}.{name}"] = arr
    return blocks


def _state_blocks(model: CGameModel) -> dict[str, np.ndarray]:
    blocks = parameter_blocks(model)
    blocks["matcher.structures"] = model.matcher.structures
    blocks["matcher.scores"] = model.matcher.scores
    blocks["input_norm.mean"] = model.input_norm.mean
    blocks["input_norm.scale"] = model.input_norm.scale
    blocks["output_norm.mean"] = model.output_norm.mean
    blocks["output_norm.scale"] = model.output_norm.scale
    return blocks


def quantize_model(model: CGameModel) -> None:
    """Round every state block to its 32-bit representation, in place.

    Applied once when training finishes so that persisted models reproduce
    the in-memory model bit for bit.
    """
    for arr in _state_blocks(model).values():
        arr[...] = arr.astype("<f4").astype(np.float64)


def save_model(model: CGameModel, path: str | Path) -> Path:
    """Write ``model.json`` + ``model.bin`` into a directory, atomically.

    The blob concatenates every state block as row-major little-endian 32-bit
    floats in the order listed in the manifest; the manifest also records
    dims, hyperparameters, and the blob's SHA-256.  The directory is staged
    under a temporary name and renamed into place.
    """
    path = Path(path)
    blocks = _state_blocks(model)
    blob = b"".join(arr.astype("<f4").tobytes() for arr in blocks.values())
    manifest = {
        "format_version": MODEL_FORMAT_VERSION,
        "dims": {
            "n_links": model.dims.n_links,
            "n_timeslices": model.dims.n_timeslices,
            "n_spots": model.dims.n_spots,
            "n_features": model.dims.n_features,
            "n_hidden": model.dims.n_hidden,
            "n_structures": model.dims.n_structures,
        },
        "gate_mode": model.gate_mode,
        "leaky_slope": model.fwd_encoder.slope,
        "matcher": {
            "structures_per_step": model.matcher.structures_per_step,
            "refresh_substeps": model.matcher.refresh_substeps,
            "discount": model.matcher.discount,
            "update_interval": model.matcher.update_interval,
            "literal_cosine": model.matcher.literal_cosine,
        },
        "blocks": [{"name": name, "shape": list(arr.shape)} for name, arr in blocks.items()],
        "sha256": hashlib.sha256(blob).hexdigest(),
    }

    staging = path.parent / f".tmp-{path.name}"
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir(parents=True)
    (staging / "model.bin").write_bytes(blob)
    (staging / "model.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if path.exists():
        shutil.rmtree(path)
    staging.rename(path)
    return path


def load_model(path: str | Path) -> CGameModel:
    """Read back a model directory, verifying version, shapes, and checksum."""
    path = Path(path)
    try:
        manifest = json.loads((path / "model.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model manifest at {path}: {exc}") from exc
    version = manifest.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise DataError(
            f"unsupported model format version {version!r}, expected {MODEL_FORMAT_VERSION}"
        )
    blob = (path / "model.bin").read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest["sha256"]:
        raise DataError("model blob does not match its manifest checksum")

    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for entry in manifest["blocks"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) * 4
        chunk = blob[offset : offset + size]
        if len(chunk) != size:
            raise DataError(f"model blob too short for block {entry['name']!r}")
        arrays[entry["name"]] = (
            np.frombuffer(chunk, dtype="<f4").astype(np.float64).reshape(shape)
        )
        offset += size
    if offset != len(blob):
        raise DataError(f"model blob has {len(blob) - offset} unexpected trailing bytes")

    dims = ModelDims(**manifest["dims"])
    slope = manifest["leaky_slope"]

    def mlp(prefix: str) -> MlpParams:
        return MlpParams(
            w1=arrays[f"{prefix}.w1"],
            b1=arrays[f"{prefix}.b1"],
            w2=arrays[f"{prefix}.w2"],
            b2=arrays[f"{prefix}.b2"],
            slope=slope,
        )

    m = manifest["matcher"]
    matcher = GraphMatcher(
        structures=arrays["matcher.structures"],
        scores=arrays["matcher.scores"],
        structures_per_step=m["structures_per_step"],
        refresh_substeps=m["refresh_substeps"],
        discount=m["discount"],
        update_interval=m["update_interval"],
        literal_cosine=m["literal_cosine"],
    )
    return CGameModel(
        dims=dims,
        fwd_encoder=mlp("fwd_encoder"),
        fwd_decoder=mlp("fwd_decoder"),
        inv_encoder=mlp("inv_encoder"),
        inv_decoder=mlp("inv_decoder"),
        matcher=matcher,
        input_norm=Normalization(arrays["input_norm.mean"], arrays["input_norm.scale"]),
        output_norm=Normalization(arrays["output_norm.mean"], arrays["output_norm.scale"]),
        gate_mode=manifest["gate_mode"],
    )
