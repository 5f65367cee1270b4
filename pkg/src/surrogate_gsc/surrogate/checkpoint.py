"""JSON checkpoints: spec, normalization, parameters, batch-norm state, history."""
from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .network import Network, NetworkSpec, Normalization

FORMAT_VERSION = 1


def _pack(a: np.ndarray) -> dict:
    # raw little-endian bytes keep the round trip bit-exact
    a = np.ascontiguousarray(a)
    return {
        "dtype": a.dtype.str,
        "shape": list(a.shape),
        "data": base64.b64encode(a.astype(a.dtype.newbyteorder("<"), copy=False).tobytes()).decode("ascii"),
    }


def _unpack(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    dt = np.dtype(d["dtype"]).newbyteorder("<")
    return np.frombuffer(raw, dtype=dt).reshape(d["shape"]).astype(dt.newbyteorder("="))


def checkpoint_dict(net: Network, norm: Normalization, L_max: int, seed: int = 0,
                    history: dict | None = None, extra: dict | None = None) -> dict:
    return {
        "version": FORMAT_VERSION,
        "spec": net.spec.to_dict(),
        "normalization": norm.to_dict(),
        "L_max": int(L_max),
        "params": {k: _pack(v) for k, v in sorted(net.params.items())},
        "batchnorm_state": {k: _pack(v) for k, v in sorted(net.state.items())},
        "seed": int(seed),
        "history": history or {},
        "extra": extra or {},
    }


def save_checkpoint(path, net: Network, norm: Normalization, L_max: int, seed: int = 0,
                    history: dict | None = None, extra: dict | None = None) -> Path:
    path = Path(path)
    doc = checkpoint_dict(net, norm, L_max, seed, history, extra)
    path.write_text(json.dumps(doc, sort_keys=True, indent=1))
    return path


def load_checkpoint(path) -> tuple[Network, Normalization, int, dict]:
    """``(network, normalization, L_max, document)``."""
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    spec = NetworkSpec.from_dict(doc["spec"])
    params = {k: _unpack(v) for k, v in doc["params"].items()}
    state = {k: _unpack(v) for k, v in doc["batchnorm_state"].items()}
    net = Network(spec, params, state)
    expected = {k for layer in net.layers for k in layer.param_shapes()}
    if expected != set(params):
        raise ValueError("checkpoint parameters do not match its network spec")
    for layer in net.layers:
        for k, shape in layer.param_shapes().items():
            if params[k].shape != tuple(shape):
                raise ValueError(f"parameter {k} has shape {params[k].shape}, expected {shape}")
    return net, Normalization(**doc["normalization"]), int(doc["L_max"]), doc
