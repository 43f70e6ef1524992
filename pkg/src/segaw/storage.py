"""File formats: features, checkpoints, embedding indexes, text manifests.

One little-endian binary container with three schemas told apart by magic:

* ``SGAW`` features: u32 version, u32 T, u32 d, then T*d float32 row-major.
* ``SGCK`` checkpoint: u32 version, kind string ("gas" | "ssae"), config
  snapshot (the ``key = value`` text), u64 seed, then named float32 blobs
  with shapes.
* ``SGIX`` embedding index: u32 version, 32-byte checkpoint fingerprint,
  u32 embedding dim, then per document its id, frame count, segment end
  frames, and float32 embeddings.

Strings are u32 length + utf-8.  All floats are stored at 32-bit precision
(training math stays 64-bit in memory); loading promotes back to float64, so
save -> load -> save is byte-identical.  Writes go to a temp file in the
destination directory and are renamed into place.
"""

import hashlib
import os
import struct
import tempfile

import numpy as np

from .errors import FormatError, InputError
from .features import FeatureMatrix
from .segments import BoundarySet

FEATURE_MAGIC = b"SGAW"
CHECKPOINT_MAGIC = b"SGCK"
INDEX_MAGIC = b"SGIX"
VERSION = 1


def atomic_write(path, data):
    path = str(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data, source):
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise FormatError(
                f"{self.source}: truncated while reading {what}: expected "
                f"{n} bytes, {len(self.data) - self.pos} available",
                offset=self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what):
        return struct.unpack("<Q", self.take(8, what))[0]

    def string(self, what):
        n = self.u32(f"{what} length")
        return self.take(n, what).decode("utf-8")

    def f32_array(self, count, what):
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4", count=count).astype(np.float64)

    def expect_magic(self, magic):
        got = self.take(4, "magic")
        if got != magic:
            raise FormatError(
                f"{self.source}: bad magic {got!r}, expected {magic!r}", offset=0)
        version = self.u32("format version")
        if version != VERSION:
            raise FormatError(
                f"{self.source}: unsupported version {version}", offset=4)

    def done(self):
        if self.pos != len(self.data):
            raise FormatError(
                f"{self.source}: {len(self.data) - self.pos} trailing bytes",
                offset=self.pos)


def _pack_string(s):
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _pack_f32(arr):
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------

def encode_features(feat):
    t, d = feat.frames.shape
    return (FEATURE_MAGIC + struct.pack("<III", VERSION, t, d)
            + _pack_f32(feat.frames))


def save_features(path, feat):
    atomic_write(path, encode_features(feat))


def load_features(path, utterance_id=None):
    with open(path, "rb") as f:
        r = _Reader(f.read(), str(path))
    r.expect_magic(FEATURE_MAGIC)
    t = r.u32("frame count")
    d = r.u32("feature dim")
    frames = r.f32_array(t * d, "feature payload").reshape(t, d)
    r.done()
    uid = utterance_id
    if uid is None:
        uid = os.path.splitext(os.path.basename(str(path)))[0]
    return FeatureMatrix(uid, frames)


def save_feature_dir(directory, feats):
    os.makedirs(directory, exist_ok=True)
    for feat in feats:
        save_features(os.path.join(directory, f"{feat.utterance_id}.feat"), feat)


def load_feature_dir(directory):
    names = sorted(n for n in os.listdir(directory) if n.endswith(".feat"))
    if not names:
        raise InputError(f"no .feat files in {directory}")
    return [load_features(os.path.join(directory, n)) for n in names]


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def encode_checkpoint(kind, config_text, seed, params):
    out = [CHECKPOINT_MAGIC, struct.pack("<I", VERSION), _pack_string(kind),
           _pack_string(config_text), struct.pack("<Q", seed),
           struct.pack("<I", len(params))]
    for name in sorted(params):
        arr = params[name]
        out.append(_pack_string(name))
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(_pack_f32(arr))
    return b"".join(out)


def save_checkpoint(path, kind, config_text, seed, params):
    atomic_write(path, encode_checkpoint(kind, config_text, seed, params))


def load_checkpoint(path):
    """Returns (kind, config_text, seed, params); params come back float64."""
    with open(path, "rb") as f:
        r = _Reader(f.read(), str(path))
    r.expect_magic(CHECKPOINT_MAGIC)
    kind = r.string("model kind")
    config_text = r.string("config snapshot")
    seed = r.u64("seed")
    n = r.u32("parameter count")
    params = {}
    for _ in range(n):
        name = r.string("parameter name")
        ndim = r.u32("ndim")
        shape = tuple(r.u32("dim") for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        params[name] = r.f32_array(count, f"parameter '{name}'").reshape(shape)
    r.done()
    return kind, config_text, seed, params


def checkpoint_fingerprint(path):
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).digest()


# ---------------------------------------------------------------------------
# Embedding index
# ---------------------------------------------------------------------------

def encode_index(fingerprint, dim, docs):
    """``docs``: list of (doc_id, BoundarySet, embeddings (N, dim))."""
    if len(fingerprint) != 32:
        raise InputError("fingerprint must be 32 bytes")
    out = [INDEX_MAGIC, struct.pack("<I", VERSION), fingerprint,
           struct.pack("<II", dim, len(docs))]
    for doc_id, bounds, emb in docs:
        if emb.shape != (len(bounds), dim):
            raise InputError(f"embeddings for {doc_id} are {emb.shape}, "
                             f"expected ({len(bounds)}, {dim})")
        out.append(_pack_string(doc_id))
        out.append(struct.pack("<II", bounds.n_frames, len(bounds)))
        out.append(struct.pack(f"<{len(bounds)}I", *bounds.ends))
        out.append(_pack_f32(emb))
    return b"".join(out)


def save_index(path, fingerprint, dim, docs):
    atomic_write(path, encode_index(fingerprint, dim, docs))


def load_index(path):
    """Returns (fingerprint, dim, docs) mirroring :func:`encode_index`."""
    with open(path, "rb") as f:
        r = _Reader(f.read(), str(path))
    r.expect_magic(INDEX_MAGIC)
    fingerprint = bytes(r.take(32, "checkpoint fingerprint"))
    dim = r.u32("embedding dim")
    n_docs = r.u32("document count")
    docs = []
    for _ in range(n_docs):
        doc_id = r.string("document id")
        n_frames = r.u32("frame count")
        n_segs = r.u32("segment count")
        ends = [r.u32("segment end") for _ in range(n_segs)]
        emb = r.f32_array(n_segs * dim, f"embeddings for {doc_id}").reshape(n_segs, dim)
        docs.append((doc_id, BoundarySet.from_ends(ends, n_frames), emb))
    r.done()
    return fingerprint, dim, docs


# ---------------------------------------------------------------------------
# Text manifests
# ---------------------------------------------------------------------------

def format_manifest(entries):
    """``entries``: list of (utterance_id, BoundarySet, word_ids or None)."""
    lines = []
    for uid, bounds, word_ids in entries:
        ends = ",".join(str(e) for e in bounds.ends)
        words = ",".join(str(w) for w in word_ids) if word_ids else "-"
        lines.append(f"{uid}\t{ends}\t{words}")
    return "\n".join(lines) + "\n"


def save_manifest(path, entries):
    atomic_write(path, format_manifest(entries).encode("utf-8"))


def format_segmentation(entries, hop_s=0.010):
    """``entries``: (utterance_id, BoundarySet); emits end frames and end
    times in seconds at the 10 ms hop."""
    lines = []
    for uid, bounds in entries:
        ends = bounds.ends
        frames = ",".join(str(e) for e in ends)
        seconds = ",".join(f"{e * hop_s:.2f}" for e in ends)
        lines.append(f"{uid}\t{frames}\t{seconds}")
    return "\n".join(lines) + "\n"


def save_segmentation(path, entries, hop_s=0.010):
    atomic_write(path, format_segmentation(entries, hop_s).encode("utf-8"))


def load_segmentation(path):
    """Read utterance ids and boundary end frames; extra columns (seconds,
    word ids) are ignored, so manifests parse too."""
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise FormatError(f"{path}:{lineno}: expected at least 2 columns")
            try:
                ends = [int(x) for x in parts[1].split(",") if x]
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad boundary list") from None
            out[parts[0]] = BoundarySet.from_ends(ends)
    return out


def load_manifest(path):
    """Returns ``{utterance_id: (BoundarySet, word_ids or None)}``."""
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise FormatError(f"{path}:{lineno}: expected at least 2 columns")
            uid = parts[0]
            try:
                ends = [int(x) for x in parts[1].split(",") if x]
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad boundary list") from None
            words = None
            if len(parts) > 2 and parts[2] != "-":
                try:
                    words = [int(x) for x in parts[2].split(",") if x]
                except ValueError:
                    raise FormatError(f"{path}:{lineno}: bad word-id list") from None
            out[uid] = (BoundarySet.from_ends(ends), words)
    return out
