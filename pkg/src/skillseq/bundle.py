"""Binary bundle files: magic 'SKSQ', versioned, checksummed.

Layout (all integers little-endian):

    bytes 0-3    magic b"SKSQ"
    u32          format version (currently 1)
    u64          metadata length, then that many bytes of canonical JSON
    u32          array count
    per array:   u16 name length, name (utf-8),
                 u8 ndim, ndim x u64 dims,
                 float64 little-endian data
    sha256       32-byte digest of everything above

Loading verifies magic, version, structural completeness, and the
digest, raising a distinct error for each failure mode.  Weights round
trip bit-identically.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .data import MinMaxStats, ScoreStats
from .layers import LayerSpec
from .model import ModelBundle

__all__ = [
    "BundleFormatError",
    "BundleVersionError",
    "BundleTruncatedError",
    "BundleChecksumError",
    "save_bundle",
    "load_bundle",
    "BUNDLE_VERSION",
]

MAGIC = b"SKSQ"
BUNDLE_VERSION = 1


class BundleFormatError(ValueError):
    """File is not a bundle or violates the structure."""


class BundleVersionError(BundleFormatError):
    """Bundle was written by an unsupported format version."""


class BundleTruncatedError(BundleFormatError):
    """File ends before the declared content."""


class BundleChecksumError(BundleFormatError):
    """Content does not match the stored digest."""


def _meta_dict(bundle):
    return {
        "mode": bundle.mode,
        "groups": {g: [s.to_dict() for s in specs] for g, specs in bundle.groups.items()},
        "trainable": dict(bundle.trainable),
        "minmax": bundle.minmax.to_dict() if bundle.minmax else None,
        "score_stats": bundle.score_stats.to_dict() if bundle.score_stats else None,
        "class_names": list(bundle.class_names) if bundle.class_names else None,
    }


def save_bundle(bundle, path):
    meta = json.dumps(_meta_dict(bundle), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", BUNDLE_VERSION), struct.pack("<Q", len(meta)), meta]
    names = sorted(bundle.weights)
    parts.append(struct.pack("<I", len(names)))
    for name in names:
        nb = name.encode("utf-8")
        arr = np.ascontiguousarray(bundle.weights[name], dtype="<f8")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            parts.append(struct.pack("<Q", d))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    digest = hashlib.sha256(body).digest()
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(digest)


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise BundleTruncatedError(
                f"truncated bundle: needed {n} bytes for {what} at offset {self.pos}, "
                f"file has {len(self.blob) - self.pos} left"
            )
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u(self, fmt, what):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))[0]


def load_bundle(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BundleFormatError(f"{path}: not a bundle file (bad magic)")
    if len(blob) < 4 + 4 + 32:
        raise BundleTruncatedError(f"{path}: too short to contain a bundle")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise BundleChecksumError(f"{path}: checksum mismatch; file is corrupt")
    r = _Reader(body)
    r.take(4, "magic")
    version = r.u("<I", "version")
    if version != BUNDLE_VERSION:
        raise BundleVersionError(
            f"{path}: format version {version} unsupported (expected {BUNDLE_VERSION})"
        )
    meta_len = r.u("<Q", "metadata length")
    try:
        meta = json.loads(r.take(meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise BundleFormatError(f"{path}: bad metadata block ({e})")
    n_arrays = r.u("<I", "array count")
    weights = {}
    for _ in range(n_arrays):
        nlen = r.u("<H", "array name length")
        name = r.take(nlen, "array name").decode("utf-8")
        ndim = r.u("<B", "array ndim")
        shape = tuple(r.u("<Q", "array dim") for _ in range(ndim))
        count = 1
        for d in shape:
            count *= d
        raw = r.take(count * 8, f"array '{name}' data")
        weights[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    if r.pos != len(body):
        raise BundleFormatError(f"{path}: {len(body) - r.pos} unexpected trailing bytes")

    groups = {g: tuple(LayerSpec.from_dict(d) for d in specs)
              for g, specs in meta["groups"].items()}
    return ModelBundle(
        mode=meta["mode"],
        groups=groups,
        weights=weights,
        trainable=dict(meta["trainable"]),
        minmax=MinMaxStats.from_dict(meta["minmax"]) if meta["minmax"] else None,
        score_stats=ScoreStats.from_dict(meta["score_stats"]) if meta["score_stats"] else None,
        class_names=tuple(meta["class_names"]) if meta["class_names"] else None,
    )
