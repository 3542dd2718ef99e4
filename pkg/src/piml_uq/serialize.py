"""Byte-exact network blobs and JSON model sidecars.

Blob layout (all integers little-endian)::

    b"PIML"                  magic
    u16 version, u16 flags   flags bit 0: variational final-layer section present
    u32 n_layers
    n_layers x (u32 in, u32 out, u8 activation, f64 slope)
    body: per layer, weights row-major then biases, float64 LE
    [variational section: mu_W, mu_b, rho_W, rho_b, prior_mu_W, prior_mu_b,
     prior_sigma_W, prior_sigma_b for the final layer, float64 LE]
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

from .bayes import VariationalLayer
from .data import NormStats
from .nn import DenseLayer, DenseNetwork
from .physics import physics_from_dict
from .piml import PimlModel

MAGIC = b"PIML"
FORMAT_VERSION = 1
FLAG_VARIATIONAL = 0x1
_ACT_CODES = {"leaky_relu": 0, "identity": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}
_F8 = np.dtype("<f8")


class FormatError(ValueError):
    pass


def network_to_bytes(network: DenseNetwork, variational: VariationalLayer = None) -> bytes:
    buf = io.BytesIO()
    flags = FLAG_VARIATIONAL if variational is not None else 0
    buf.write(MAGIC)
    buf.write(struct.pack("<HHI", FORMAT_VERSION, flags, len(network.layers)))
    for layer in network.layers:
        buf.write(struct.pack("<IIBd", layer.in_dim, layer.out_dim,
                              _ACT_CODES[layer.activation], layer.slope))
    for layer in network.layers:
        buf.write(np.ascontiguousarray(layer.weights, dtype=_F8).tobytes())
        buf.write(np.ascontiguousarray(layer.biases, dtype=_F8).tobytes())
    if variational is not None:
        v = variational
        for arr in (v.mu_weights, v.mu_biases, v.rho_weights, v.rho_biases,
                    v.prior_mu_weights, v.prior_mu_biases,
                    v.prior_sigma_weights, v.prior_sigma_biases):
            buf.write(np.ascontiguousarray(arr, dtype=_F8).tobytes())
    return buf.getvalue()


def network_from_bytes(blob: bytes):
    """Inverse of :func:`network_to_bytes`; returns ``(network, variational_or_None)``."""
    if blob[:4] != MAGIC:
        raise FormatError("not a PIML network blob (bad magic)")
    version, flags, n_layers = struct.unpack_from("<HHI", blob, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    off = 12
    specs = []
    for _ in range(n_layers):
        specs.append(struct.unpack_from("<IIBd", blob, off))
        off += struct.calcsize("<IIBd")

    def take(shape):
        nonlocal off
        n = int(np.prod(shape))
        if off + 8 * n > len(blob):
            raise FormatError("truncated blob")
        arr = np.frombuffer(blob, dtype=_F8, count=n, offset=off).reshape(shape).copy()
        off += 8 * n
        return arr.astype(np.float64)

    layers = []
    for n_in, n_out, act, slope in specs:
        w = take((n_out, n_in))
        b = take((n_out,))
        layers.append(DenseLayer(w, b, _ACT_NAMES[act], slope))
    net = DenseNetwork(layers)
    variational = None
    if flags & FLAG_VARIATIONAL:
        shape_w = layers[-1].weights.shape
        shape_b = layers[-1].biases.shape
        arrays = [take(s) for s in (shape_w, shape_b) * 4]
        variational = VariationalLayer(*arrays)
    if off != len(blob):
        raise FormatError(f"{len(blob) - off} trailing bytes")
    return net, variational


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_model(model: PimlModel, path, seed=None, extra=None):
    """Write ``<path>.bin`` and ``<path>.json``; returns both paths."""
    path = Path(path)
    bin_path = path.with_suffix(".bin")
    json_path = path.with_suffix(".json")
    bin_path.write_bytes(network_to_bytes(model.network, model.variational))
    meta = {
        "format": "PIML",
        "format_version": FORMAT_VERSION,
        "blob": bin_path.name,
        "blob_sha256": sha256_file(bin_path),
        "architecture": model.network.sizes,
        "bayesian": model.is_bayesian,
        "n_params": model.n_params,
        "transfer": model.transfer,
        "physics": model.physics.to_dict(),
        "input_stats": model.input_stats.to_dict(),
        "output_stats": model.output_stats.to_dict(),
        "seed": seed,
    }
    if extra:
        meta.update(extra)
    json_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return bin_path, json_path


def load_model(path) -> PimlModel:
    """Load a model from its JSON sidecar (or the ``.bin`` next to it)."""
    json_path = Path(path).with_suffix(".json")
    meta = json.loads(json_path.read_text(encoding="utf-8"))
    blob = (json_path.parent / meta["blob"]).read_bytes()
    expected = meta.get("blob_sha256")
    if expected is not None and hashlib.sha256(blob).hexdigest() != expected:
        raise FormatError(f"{meta['blob']}: checksum does not match {json_path.name}")
    net, variational = network_from_bytes(blob)
    return PimlModel(net, physics_from_dict(meta["physics"]),
                     NormStats.from_dict(meta["input_stats"]),
                     NormStats.from_dict(meta["output_stats"]),
                     meta["transfer"], variational)
