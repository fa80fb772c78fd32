"""Bit-exact model/batch container format.

Layout: magic "OPTN" | version u32 LE | header-length u64 LE | UTF-8 JSON
header | zero padding | payload. The header describes {arch, dims, tensors:
[{name, dtype, shape, byte_offset}]}; offsets are relative to the payload
base (the first 64-byte boundary at or after the header) and every tensor is
64-byte aligned. Payload values are little-endian f32 or i32.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .cnn import CnnGraph, ConvLayer
from .errors import ContainerError
from .model import BlockWeights, CalibrationBatch, ModelGraph

MAGIC = b"OPTN"
VERSION = 1
ALIGN = 64

_DTYPES = {"f32": np.dtype("<f4"), "i32": np.dtype("<i4")}


def _dtype_name(arr: np.ndarray) -> str:
    if arr.dtype == np.float32:
        return "f32"
    if arr.dtype == np.int32:
        return "i32"
    raise ContainerError(f"unsupported dtype {arr.dtype}", code="header_invalid")


def _align(n: int) -> int:
    return (n + ALIGN - 1) // ALIGN * ALIGN


def write_container(path, arch: str, dims: dict, tensors: dict[str, np.ndarray]):
    """Serialize named tensors; iteration order fixes the payload order."""
    entries = []
    offset = 0
    blobs = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        if arr.ndim < 1 or arr.ndim > 4 or any(e <= 0 for e in arr.shape):
            raise ContainerError(
                f"tensor {name} has unsupported shape {arr.shape}",
                code="header_invalid")
        dt = _dtype_name(arr)
        raw = arr.astype(_DTYPES[dt], copy=False).tobytes()
        entries.append({"name": name, "dtype": dt,
                        "shape": [int(e) for e in arr.shape],
                        "byte_offset": offset})
        blobs.append((offset, raw))
        offset = _align(offset + len(raw))
    header = json.dumps(
        {"arch": arch, "dims": dims, "tensors": entries},
        sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload_base = _align(16 + len(header))
    payload_size = offset
    buf = bytearray(payload_base + payload_size)
    buf[0:4] = MAGIC
    struct.pack_into("<I", buf, 4, VERSION)
    struct.pack_into("<Q", buf, 8, len(header))
    buf[16:16 + len(header)] = header
    for off, raw in blobs:
        buf[payload_base + off:payload_base + off + len(raw)] = raw
    Path(path).write_bytes(bytes(buf))


def read_container(path) -> tuple[str, dict, dict[str, np.ndarray]]:
    """Parse and validate; returns (arch, dims, tensors)."""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise ContainerError(str(e), code="io_error") from e
    if len(data) < 16 or data[0:4] != MAGIC:
        raise ContainerError("not a container file (bad magic)", code="bad_magic")
    version = struct.unpack_from("<I", data, 4)[0]
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}",
                             code="bad_version")
    header_len = struct.unpack_from("<Q", data, 8)[0]
    if 16 + header_len > len(data):
        raise ContainerError("header runs past end of file", code="header_invalid")
    try:
        header = json.loads(data[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContainerError(f"header is not valid JSON: {e}",
                             code="header_invalid") from e
    for key in ("arch", "dims", "tensors"):
        if key not in header:
            raise ContainerError(f"header missing {key!r}", code="header_invalid")
    if header["arch"] not in ("transformer", "cnn"):
        raise ContainerError(f"unknown arch {header['arch']!r}",
                             code="header_invalid")

    payload_base = _align(16 + header_len)
    payload_size = len(data) - payload_base
    spans = []
    tensors: dict[str, np.ndarray] = {}
    for ent in header["tensors"]:
        name = ent.get("name")
        dt = ent.get("dtype")
        shape = ent.get("shape")
        off = ent.get("byte_offset")
        if not isinstance(name, str) or dt not in _DTYPES \
                or not isinstance(shape, list) or not isinstance(off, int):
            raise ContainerError(f"malformed tensor entry {ent!r}",
                                 code="header_invalid")
        if name in tensors:
            raise ContainerError(f"duplicate tensor {name}", code="header_invalid")
        if not 1 <= len(shape) <= 4 or any(
                not isinstance(e, int) or e <= 0 for e in shape):
            raise ContainerError(f"tensor {name} has bad shape {shape}",
                                 code="header_invalid")
        size = int(np.prod(shape)) * 4
        if off < 0 or off % ALIGN or off + size > payload_size:
            raise ContainerError(f"tensor {name} payload out of bounds",
                                 code="payload_out_of_bounds")
        spans.append((off, off + size, name))
        arr = np.frombuffer(data, dtype=_DTYPES[dt], count=int(np.prod(shape)),
                            offset=payload_base + off).reshape(shape)
        arr = arr.astype(arr.dtype.newbyteorder("="), copy=True)
        if dt == "f32" and not np.isfinite(arr).all():
            raise ContainerError(f"tensor {name} contains NaN/Inf",
                                 code="non_finite")
        tensors[name] = arr
    spans.sort()
    for (a0, a1, an), (b0, b1, bn) in zip(spans, spans[1:]):
        if b0 < a1:
            raise ContainerError(f"tensors {an} and {bn} overlap",
                                 code="payload_overlap")
    return header["arch"], header["dims"], tensors


def _need(tensors: dict, name: str) -> np.ndarray:
    if name not in tensors:
        raise ContainerError(f"missing tensor {name}", code="missing_tensor")
    return tensors[name]


# ---------------------------------------------------------------- transformer

def model_tensors(model: ModelGraph) -> tuple[dict, dict[str, np.ndarray]]:
    dims = {
        "kind": "model",
        "n_blocks": model.n_blocks,
        "d_model": model.d_model,
        "n_heads": model.n_heads,
        "head_dim": model.head_dim,
        "ffn_dims": list(model.ffn_dims),
        "n_classes": model.n_classes,
        "pooling": model.pooling,
    }
    tensors: dict[str, np.ndarray] = {}
    for i, blk in enumerate(model.blocks):
        p = f"block{i}."
        tensors[p + "wq"] = blk.wq
        tensors[p + "wk"] = blk.wk
        tensors[p + "wv"] = blk.wv
        tensors[p + "wo"] = blk.wo
        if model.ffn_dims[i] > 0:
            tensors[p + "w1"] = blk.w1
            tensors[p + "w2"] = blk.w2
        tensors[p + "ln1_gamma"] = blk.ln1_gamma
        tensors[p + "ln1_beta"] = blk.ln1_beta
        tensors[p + "ln2_gamma"] = blk.ln2_gamma
        tensors[p + "ln2_beta"] = blk.ln2_beta
    tensors["classifier"] = model.classifier
    if model.embedding is not None:
        dims["vocab_size"] = model.vocab_size
        tensors["embedding"] = model.embedding
    if model.positional is not None:
        dims["max_seq"] = model.max_seq
        tensors["positional"] = model.positional
    return dims, tensors


def save_model(path, model: ModelGraph):
    dims, tensors = model_tensors(model)
    write_container(path, "transformer", dims, tensors)


def _model_from(dims: dict, tensors: dict[str, np.ndarray]) -> ModelGraph:
    try:
        n_blocks = int(dims["n_blocks"])
        ffn_dims = [int(x) for x in dims["ffn_dims"]]
        blocks = []
        for i in range(n_blocks):
            p = f"block{i}."
            has_ffn = ffn_dims[i] > 0
            blocks.append(BlockWeights(
                wq=_need(tensors, p + "wq"), wk=_need(tensors, p + "wk"),
                wv=_need(tensors, p + "wv"), wo=_need(tensors, p + "wo"),
                w1=_need(tensors, p + "w1") if has_ffn else None,
                w2=_need(tensors, p + "w2") if has_ffn else None,
                ln1_gamma=_need(tensors, p + "ln1_gamma"),
                ln1_beta=_need(tensors, p + "ln1_beta"),
                ln2_gamma=_need(tensors, p + "ln2_gamma"),
                ln2_beta=_need(tensors, p + "ln2_beta"),
            ))
        return ModelGraph(
            n_blocks=n_blocks,
            d_model=int(dims["d_model"]),
            n_heads=int(dims["n_heads"]),
            head_dim=int(dims["head_dim"]),
            ffn_dims=ffn_dims,
            n_classes=int(dims["n_classes"]),
            blocks=blocks,
            classifier=_need(tensors, "classifier"),
            pooling=dims.get("pooling", "first"),
            embedding=tensors.get("embedding"),
            positional=tensors.get("positional"),
        )
    except ContainerError:
        raise
    except (KeyError, ValueError, TypeError) as e:
        raise ContainerError(f"bad model dims: {e}", code="dim_mismatch") from e
    except Exception as e:  # shape/finite validation from ModelGraph
        raise ContainerError(f"inconsistent model: {e}", code="dim_mismatch") from e


# ----------------------------------------------------------------------- cnn

def cnn_tensors(g: CnnGraph) -> tuple[dict, dict[str, np.ndarray]]:
    dims = {
        "kind": "model",
        "layers": [
            {"c_out": int(l.filters.shape[0]), "c_in": int(l.filters.shape[1]),
             "kernel": int(l.filters.shape[2]), "stride": l.stride,
             "pad": l.pad, "pool": l.pool}
            for l in g.layers
        ],
        "n_classes": g.n_classes,
    }
    tensors: dict[str, np.ndarray] = {}
    for i, layer in enumerate(g.layers):
        tensors[f"conv{i}.filters"] = layer.filters
        tensors[f"conv{i}.scale"] = layer.scale
        tensors[f"conv{i}.shift"] = layer.shift
    tensors["classifier"] = g.classifier
    return dims, tensors


def save_cnn(path, g: CnnGraph):
    dims, tensors = cnn_tensors(g)
    write_container(path, "cnn", dims, tensors)


def _cnn_from(dims: dict, tensors: dict[str, np.ndarray]) -> CnnGraph:
    try:
        layers = []
        for i, ld in enumerate(dims["layers"]):
            layers.append(ConvLayer(
                filters=_need(tensors, f"conv{i}.filters"),
                scale=_need(tensors, f"conv{i}.scale"),
                shift=_need(tensors, f"conv{i}.shift"),
                stride=int(ld["stride"]), pad=int(ld["pad"]),
                pool=int(ld.get("pool", 0)),
            ))
        return CnnGraph(layers=layers, classifier=_need(tensors, "classifier"),
                        n_classes=int(dims["n_classes"]))
    except ContainerError:
        raise
    except (KeyError, ValueError, TypeError) as e:
        raise ContainerError(f"bad cnn dims: {e}", code="dim_mismatch") from e
    except Exception as e:
        raise ContainerError(f"inconsistent cnn: {e}", code="dim_mismatch") from e


# --------------------------------------------------------------------- batch

def save_batch(path, batch: CalibrationBatch, arch: str = "transformer"):
    tensors: dict[str, np.ndarray] = {}
    if batch.tokens is not None:
        tensors["tokens"] = batch.tokens.astype(np.int32)
    else:
        tensors["features"] = batch.features
    if batch.labels is not None:
        tensors["labels"] = batch.labels.astype(np.int32)
    write_container(path, arch, {"kind": "batch"}, tensors)


def save_cnn_batch(path, features: np.ndarray, labels: np.ndarray | None = None):
    tensors = {"features": np.ascontiguousarray(features, dtype=np.float32)}
    if labels is not None:
        tensors["labels"] = labels.astype(np.int32)
    write_container(path, "cnn", {"kind": "batch"}, tensors)


def load_batch(path):
    """Returns a CalibrationBatch for transformer batches or a raw [B,C,H,W]
    feature array (with optional labels) for cnn batches."""
    arch, dims, tensors = read_container(path)
    if dims.get("kind") != "batch":
        raise ContainerError("container is not a batch", code="dim_mismatch")
    labels = tensors.get("labels")
    if arch == "cnn":
        feats = _need(tensors, "features")
        if feats.ndim != 4:
            raise ContainerError("cnn batch features must be [B,C,H,W]",
                                 code="dim_mismatch")
        return feats, labels
    if "tokens" in tensors:
        return CalibrationBatch(tokens=tensors["tokens"], labels=labels)
    feats = _need(tensors, "features")
    if feats.ndim != 3:
        raise ContainerError("batch features must be [B,T,D]", code="dim_mismatch")
    return CalibrationBatch(features=feats, labels=labels)


def load_container(path) -> ModelGraph | CnnGraph:
    """Load and validate a model container (rejects batch containers)."""
    arch, dims, tensors = read_container(path)
    if dims.get("kind") == "batch":
        raise ContainerError("expected a model container, found a batch",
                             code="dim_mismatch")
    if arch == "transformer":
        return _model_from(dims, tensors)
    return _cnn_from(dims, tensors)
