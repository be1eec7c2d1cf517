"""Single-file binary container for trained posteriors.

Layout (all integers little-endian)::

    offset  size  field
    0       5     magic  b"BMAL1"
    5       2     u16    format version (currently 1)
    7       4     u32    header length H
    11      H     UTF-8 JSON header, keys sorted, no whitespace
    11+H    8     u64    payload length P in bytes (multiple of 8)
    19+H    P     float64 LE payload
    19+H+P  4     u32    CRC-32 (zlib) of header bytes followed by payload bytes

Header keys: ``method``, ``arch`` (input_dim, hidden_sizes, activation,
dropout_rate), ``n_params``, ``n_particles``, ``n_inference``,
``dropout_rate`` and, for VI, ``vi_first_stochastic``.

Payload: the flattened particles back to back, or for VI the mean vector
followed by the rho vector.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ._fileio import atomic_write_bytes
from .errors import ChecksumError, ModelFileError, ShapeMismatchError, UnrecognizedFormatError
from .inference import METHODS, GaussianVariationalParams, Posterior
from .network import MlpArchitecture, ParameterParticle

MAGIC = b"BMAL1"
VERSION = 1
_LE_F64 = np.dtype("<f8")


def _header(post: Posterior) -> dict:
    a = post.arch
    h = {
        "method": post.method,
        "arch": {
            "input_dim": a.input_dim,
            "hidden_sizes": list(a.hidden_sizes),
            "activation": a.activation,
            "dropout_rate": a.dropout_rate,
        },
        "n_params": a.n_params,
        "n_particles": len(post.particles),
        "n_inference": post.n_inference,
        "dropout_rate": post.dropout_rate,
    }
    if post.method == "VI":
        h["vi_first_stochastic"] = post.vi.first_stochastic
    return h


def dumps_posterior(post: Posterior) -> bytes:
    header = json.dumps(_header(post), sort_keys=True, separators=(",", ":")).encode("utf-8")
    if post.method == "VI":
        vectors = [post.vi.mu, post.vi.rho]
    else:
        vectors = [p.flat for p in post.particles]
    payload = np.concatenate(vectors).astype(_LE_F64).tobytes() if vectors else b""
    crc = zlib.crc32(header + payload) & 0xFFFFFFFF
    return b"".join([
        MAGIC,
        struct.pack("<HI", VERSION, len(header)),
        header,
        struct.pack("<Q", len(payload)),
        payload,
        struct.pack("<I", crc),
    ])


def loads_posterior(blob: bytes) -> Posterior:
    if len(blob) < len(MAGIC) or blob[:len(MAGIC)] != MAGIC:
        raise UnrecognizedFormatError("unrecognized format: bad magic")
    pos = len(MAGIC)
    if len(blob) < pos + 6:
        raise ShapeMismatchError("file truncated inside the preamble")
    version, hlen = struct.unpack_from("<HI", blob, pos)
    pos += 6
    if version != VERSION:
        raise UnrecognizedFormatError(f"unsupported format version {version}")
    if len(blob) < pos + hlen + 8:
        raise ShapeMismatchError("file truncated inside the header")
    header_bytes = blob[pos:pos + hlen]
    pos += hlen
    (plen,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    if len(blob) != pos + plen + 4:
        raise ShapeMismatchError(
            f"file length {len(blob)} does not match declared payload of {plen} bytes")
    payload = blob[pos:pos + plen]
    (crc,) = struct.unpack_from("<I", blob, pos + plen)
    if zlib.crc32(header_bytes + payload) & 0xFFFFFFFF != crc:
        raise ChecksumError("checksum mismatch")
    try:
        h = json.loads(header_bytes.decode("utf-8"))
        arch = MlpArchitecture(
            int(h["arch"]["input_dim"]), tuple(h["arch"]["hidden_sizes"]),
            float(h["arch"]["dropout_rate"]), h["arch"]["activation"])
        method = h["method"]
        n_part = int(h["n_particles"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ModelFileError(f"malformed header: {exc}") from exc
    if method not in METHODS:
        raise UnrecognizedFormatError(f"unknown method tag {method!r}")
    if int(h["n_params"]) != arch.n_params:
        raise ShapeMismatchError("header parameter count disagrees with architecture")
    n_vec = 2 if method == "VI" else n_part
    if plen % 8 or plen // 8 != n_vec * arch.n_params:
        raise ShapeMismatchError(
            f"payload holds {plen // 8} reals, expected {n_vec} x {arch.n_params}")
    flat = np.frombuffer(payload, dtype=_LE_F64).astype(np.float64).reshape(n_vec, arch.n_params)
    vi = None
    particles = []
    if method == "VI":
        vi = GaussianVariationalParams(flat[0], flat[1], int(h.get("vi_first_stochastic", 0)))
    else:
        particles = [ParameterParticle(arch, row) for row in flat]
    return Posterior(method, arch, particles, int(h["n_inference"]), vi, float(h["dropout_rate"]))


def save_posterior(post: Posterior, path):
    atomic_write_bytes(path, dumps_posterior(post))


def load_posterior(path) -> Posterior:
    return loads_posterior(Path(path).read_bytes())
