"""Checkpoint container: JSON manifest + raw little-endian tensor payloads.

Layout: 8-byte magic, uint64 little-endian manifest length, manifest JSON,
then the concatenated payloads. The manifest records name/shape/dtype/offset
per tensor, the network configuration and (optionally) the originating run
configuration text for provenance. Round-trips are bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import asdict

import numpy as np

from .networks import NetworkConfig, build_models

__all__ = ["save_checkpoint", "load_checkpoint", "read_manifest"]

MAGIC = b"ZIPCKPT1"

_DTYPES = {"float32": "<f4", "float64": "<f8"}


def _gather(models: dict):
    for role, net in models.items():
        for name, t in net.params():
            yield f"{role}.{name}", t.data
        for name, arr in net.states():
            yield f"{role}.state.{name}", arr


def save_checkpoint(path, models: dict, config: NetworkConfig, run_config_text=None):
    """Write every parameter and state array of the model bundle to one file."""
    entries = []
    payloads = []
    offset = 0
    for name, arr in _gather(models):
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise ValueError(f"{name}: unsupported dtype {dtype}")
        raw = np.ascontiguousarray(arr).astype(_DTYPES[dtype]).tobytes()
        entries.append({"name": name, "shape": list(arr.shape),
                        "dtype": dtype, "offset": offset, "nbytes": len(raw)})
        payloads.append(raw)
        offset += len(raw)
    manifest = {
        "config": asdict(config),
        "run_config": run_config_text,
        "tensors": entries,
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.array(len(blob), dtype="<u8").tobytes())
        fh.write(blob)
        for raw in payloads:
            fh.write(raw)


def read_manifest(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (n,) = np.frombuffer(fh.read(8), dtype="<u8")
        manifest = json.loads(fh.read(int(n)).decode("utf-8"))
        manifest["_payload_start"] = 16 + int(n)
    return manifest


def load_checkpoint(path, seed: int = 0, dtype=None):
    """Rebuild the model bundle from a checkpoint.

    Returns (models, config, run_config_text). Every parameter and state array
    is restored bit-exactly; ``dtype=None`` keeps the stored dtypes.
    """
    manifest = read_manifest(path)
    cfg_dict = dict(manifest["config"])
    cfg_dict["dilations"] = tuple(cfg_dict["dilations"])
    config = NetworkConfig(**cfg_dict)
    stored = {e["name"]: e for e in manifest["tensors"]}
    any_dtype = next(iter(stored.values()))["dtype"] if stored else "float64"
    build_dtype = np.dtype(dtype or any_dtype)
    models = build_models(config, seed=seed, dtype=build_dtype)

    with open(path, "rb") as fh:
        base = manifest["_payload_start"]
        expected = dict(_gather(models))
        if set(expected) != set(stored):
            missing = set(expected) ^ set(stored)
            raise ValueError(f"{path}: parameter names disagree with architecture "
                             f"({sorted(missing)[:4]} ...)")
        for name, arr in expected.items():
            e = stored[name]
            if list(arr.shape) != e["shape"]:
                raise ValueError(f"{path}: {name} shape {e['shape']} != "
                                 f"architecture {list(arr.shape)}")
            fh.seek(base + e["offset"])
            raw = fh.read(e["nbytes"])
            loaded = np.frombuffer(raw, dtype=_DTYPES[e["dtype"]]).reshape(e["shape"])
            arr[...] = loaded.astype(arr.dtype)
    return models, config, manifest.get("run_config")
