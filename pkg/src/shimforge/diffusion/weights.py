"""Weights file: ``SHIMFORGE-W1`` magic, a JSON manifest, little-endian float64
payload, and a SHA-256 footer over everything before it.

Layout::

    b"SHIMFORGE-W1\\n"
    uint64 LE   manifest length in bytes
    manifest    UTF-8 JSON {"config", "meta", "arrays": [{"name", "shape"}]}
    payload     each array as <f8, row-major, in manifest order
    b"SHA256"   + 32-byte digest
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

from shimforge.diffusion.denoiser import Denoiser, DenoiserConfig
from shimforge.errors import ArtifactIOError, ChecksumError

MAGIC = b"SHIMFORGE-W1\n"
FOOTER_TAG = b"SHA256"


def to_bytes(denoiser: Denoiser, meta: dict | None = None) -> bytes:
    state = denoiser.state_dict()
    arrays = [{"name": k, "shape": list(v.shape)} for k, v in state.items()]
    manifest = json.dumps(
        {"config": denoiser.config.to_dict(), "meta": meta or {}, "arrays": arrays}, sort_keys=True
    ).encode()
    payload = b"".join(
        np.ascontiguousarray(v.detach().cpu().to(torch.float64).numpy()).astype("<f8").tobytes() for v in state.values()
    )
    body = MAGIC + struct.pack("<Q", len(manifest)) + manifest + payload
    return body + FOOTER_TAG + hashlib.sha256(body).digest()


def from_bytes(blob: bytes) -> tuple[Denoiser, dict]:
    if not blob.startswith(MAGIC):
        raise ArtifactIOError("not a SHIMFORGE-W1 weights file (bad magic)")
    tail = len(FOOTER_TAG) + 32
    if len(blob) < len(MAGIC) + 8 + tail or blob[-tail : -32] != FOOTER_TAG:
        raise ChecksumError("weights file truncated or missing checksum footer")
    body, digest = blob[:-tail], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("weights checksum mismatch")
    (mlen,) = struct.unpack_from("<Q", body, len(MAGIC))
    start = len(MAGIC) + 8
    manifest = json.loads(body[start : start + mlen].decode())
    offset = start + mlen
    model = Denoiser(DenoiserConfig.from_dict(manifest["config"])).to(torch.float64)
    state = {}
    for entry in manifest["arrays"]:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(body, dtype="<f8", count=n, offset=offset).reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.astype(np.float64))
        offset += 8 * n
    if offset != len(body):
        raise ArtifactIOError("weights payload length does not match manifest")
    model.load_state_dict(state)
    model.eval()
    return model, manifest["meta"]


def save_weights(path, denoiser: Denoiser, meta: dict | None = None) -> None:
    path = Path(path)
    try:
        path.write_bytes(to_bytes(denoiser, meta))
    except OSError as exc:
        raise ArtifactIOError(f"cannot write weights to {path}: {exc}") from exc


def load_weights(path) -> tuple[Denoiser, dict]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise ArtifactIOError(f"cannot read weights from {path}: {exc}") from exc
    return from_bytes(blob)
