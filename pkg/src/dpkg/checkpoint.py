"""Checkpoint container.

Layout: ``MAGIC | u32 format version | u64 header length | JSON header |
tensor bytes``.  The header carries the network config, the vocab and its
hash, training metadata and a tensor index (name, shape, dtype); tensor
bytes follow in index order, row-major, little-endian.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .model import DPKGModel, DPKGNetwork
from .text import Vocab

MAGIC = b"DPKGCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def save_checkpoint(model: DPKGModel, path, step: int = 0, best_dev: float | None = None,
                    extra: dict | None = None) -> None:
    params = model.net.named_parameters()
    config = {"net": model.net.config, "mode": model.mode, "keyword_variant": model.keyword_variant}
    header = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "config_hash": config_hash(config),
        "vocab_hash": model.vocab.digest(),
        "vocab": model.vocab.itos,
        "step": step,
        "best_dev": best_dev,
        "extra": extra or {},
        "tensors": [{"name": k, "shape": list(p.shape), "dtype": p.dtype.str.lstrip("<>|=")}
                    for k, p in params.items()],
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(raw)))
        fh.write(raw)
        for p in params.values():
            fh.write(np.ascontiguousarray(p.data, dtype=p.dtype.newbyteorder("<")).tobytes())


def read_header(path) -> tuple[dict, bytes]:
    blob = Path(path).read_bytes()
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    off = len(MAGIC)
    if len(blob) < off + 12:
        raise CheckpointError(f"{path}: truncated header")
    version, hlen = struct.unpack_from("<IQ", blob, off)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    off += 12
    if len(blob) < off + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header: {e}") from e
    return header, blob[off + hlen:]


def load_checkpoint(path, vocab: Vocab | None = None) -> DPKGModel:
    """Rebuild the model; refuses a ``vocab`` whose hash differs from the stored one."""
    header, data = read_header(path)
    stored = Vocab(header["vocab"])
    if stored.digest() != header["vocab_hash"]:
        raise CheckpointError(f"{path}: vocab hash does not match stored vocab")
    if vocab is not None and vocab.digest() != header["vocab_hash"]:
        raise CheckpointError(f"{path}: vocab hash mismatch, refusing to load")
    cfg = header["config"]
    net = DPKGNetwork(**cfg["net"])
    params = net.named_parameters()
    index = header["tensors"]
    names = [t["name"] for t in index]
    if len(set(names)) != len(names):
        raise CheckpointError(f"{path}: duplicate tensor names")
    if set(names) != set(params):
        missing = sorted(set(params) - set(names)) or sorted(set(names) - set(params))
        raise CheckpointError(f"{path}: tensor set mismatch at {missing[0]!r}")
    off = 0
    for t in index:
        p = params[t["name"]]
        if tuple(t["shape"]) != p.shape:
            raise CheckpointError(f"{path}: shape mismatch for {t['name']!r}: {t['shape']} vs {list(p.shape)}")
        dt = np.dtype("<" + t["dtype"])
        nbytes = int(np.prod(p.shape)) * dt.itemsize
        if off + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated tensor data at {t['name']!r}")
        p.data[...] = np.frombuffer(data, dtype=dt, count=int(np.prod(p.shape)), offset=off).reshape(p.shape)
        off += nbytes
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
    model = DPKGModel(stored, net, cfg["mode"], cfg.get("keyword_variant", "both"))
    model.checkpoint_meta = {k: header[k] for k in ("step", "best_dev", "extra", "config_hash")}
    return model
