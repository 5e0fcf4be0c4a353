"""Explicit memory: one raw (pre-tanh) prototype per class for each network.

Entries are append-only. Scoring applies tanh to both the query embedding
and the stored prototype, then takes the cosine.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .binio import ByteReader, write_tensor
from .data import SessionDataset
from .errors import DataError, DegenerateInputError, DimensionError, FormatError, ProtocolError
from .model import KIND_MEMORY, NetworkParams, embed, read_header, write_header

RHD = "rhd"
TKN = "tkn"


@dataclass(frozen=True)
class MemoryEntry:
    class_id: int
    session: int
    proto_rhd: np.ndarray
    proto_tkn: np.ndarray

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(struct.pack("<II", self.class_id, self.session))
        write_tensor(buf, self.proto_rhd)
        write_tensor(buf, self.proto_tkn)
        return buf.getvalue()


@dataclass
class ExplicitMemory:
    entries: dict[int, MemoryEntry] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def class_ids(self) -> list[int]:
        return list(self.entries)

    def prototypes(self, which: str) -> np.ndarray:
        if which not in (RHD, TKN):
            raise ValueError(f"unknown classifier {which!r}")
        attr = "proto_rhd" if which == RHD else "proto_tkn"
        return np.stack([getattr(e, attr) for e in self.entries.values()])

    def add(self, entry: MemoryEntry) -> None:
        if entry.class_id in self.entries:
            raise ProtocolError(f"class {entry.class_id} is already stored in memory")
        if self.entries:
            last = next(reversed(self.entries.values()))
            if entry.session < last.session:
                raise ProtocolError(
                    f"session {entry.session} precedes the latest stored session {last.session}"
                )
            if entry.proto_rhd.shape != last.proto_rhd.shape or entry.proto_tkn.shape != last.proto_tkn.shape:
                raise DimensionError("prototype dimension differs from stored entries")
        if not (np.all(np.isfinite(entry.proto_rhd)) and np.all(np.isfinite(entry.proto_tkn))):
            raise DataError(f"class {entry.class_id} prototype is not finite")
        entry.proto_rhd.setflags(write=False)
        entry.proto_tkn.setflags(write=False)
        self.entries[entry.class_id] = entry

    def entry_bytes(self, class_id: int) -> bytes:
        return self.entries[class_id].to_bytes()


def compute_prototype(net: NetworkParams, samples) -> np.ndarray:
    """Mean projected embedding of ``samples``."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or len(samples) == 0:
        raise DataError("compute_prototype needs a non-empty 2-d batch of samples")
    return embed(net, samples).mean(axis=0)


def update_memory(
    em: ExplicitMemory, session: SessionDataset, rhd: NetworkParams, tkn: NetworkParams
) -> ExplicitMemory:
    """Append one entry per session class; existing entries are never touched."""
    clash = [c for c in session.class_ids if c in em.entries]
    if clash:
        raise ProtocolError(f"class {clash[0]} from session {session.session_id} is already in memory")
    new = []
    for c in session.class_ids:
        samples = session.train[c]
        new.append(
            MemoryEntry(c, session.session_id, compute_prototype(rhd, samples), compute_prototype(tkn, samples))
        )
    for entry in new:
        em.add(entry)
    return em


def tanh_cosine(queries: np.ndarray, protos: np.ndarray) -> np.ndarray:
    """cos(tanh(q), tanh(p)) for every query row against every prototype row."""
    q = np.tanh(queries)
    p = np.tanh(protos)
    qn = np.linalg.norm(q, axis=1, keepdims=True)
    pn = np.linalg.norm(p, axis=1, keepdims=True)
    if np.any(qn == 0) or np.any(pn == 0):
        raise DegenerateInputError("query embedding or prototype is the zero vector")
    return np.clip((q / qn) @ (p / pn).T, -1.0, 1.0)


def score_embeddings(em: ExplicitMemory, which: str, embeddings: np.ndarray) -> np.ndarray:
    if not em.entries:
        raise ProtocolError("memory is empty")
    protos = em.prototypes(which)
    embeddings = np.atleast_2d(embeddings)
    if embeddings.shape[1] != protos.shape[1]:
        raise DimensionError(
            f"embedding dimension {embeddings.shape[1]} does not match prototypes ({protos.shape[1]})"
        )
    return tanh_cosine(embeddings, protos)


def score(em: ExplicitMemory, which: str, net: NetworkParams, query) -> np.ndarray:
    """Similarity of each query to every stored class, in memory order.

    A single query vector gives shape (|em|,); a batch gives (batch, |em|).
    """
    query = np.asarray(query, dtype=np.float64)
    single = query.ndim == 1
    if query.shape[-1] != net.spec.input_dim:
        raise DimensionError(f"query width {query.shape[-1]} does not match input_dim {net.spec.input_dim}")
    out = score_embeddings(em, which, embed(net, np.atleast_2d(query)))
    return out[0] if single else out


# -- checkpoint ---------------------------------------------------------------


def memory_to_bytes(em: ExplicitMemory) -> bytes:
    buf = io.BytesIO()
    write_header(buf, KIND_MEMORY)
    buf.write(struct.pack("<I", len(em)))
    for entry in em.entries.values():
        buf.write(entry.to_bytes())
    return buf.getvalue()


def memory_from_bytes(raw: bytes) -> ExplicitMemory:
    r = ByteReader(raw)
    read_header(r, KIND_MEMORY)
    em = ExplicitMemory()
    for _ in range(r.u32("entry count")):
        at = r.pos
        cid, session = r.u32("class id"), r.u32("session")
        rhd = r.tensor(f"class {cid} rhd prototype")
        tkn = r.tensor(f"class {cid} tkn prototype")
        if rhd.ndim != 1 or tkn.ndim != 1:
            raise FormatError(f"class {cid} prototypes must be vectors", at)
        try:
            em.add(MemoryEntry(cid, session, rhd, tkn))
        except (ProtocolError, DimensionError, DataError) as exc:
            raise FormatError(str(exc), at) from None
    r.finish()
    return em


def save_memory(em: ExplicitMemory, path) -> None:
    with open(path, "wb") as f:
        f.write(memory_to_bytes(em))


def load_memory(path) -> ExplicitMemory:
    with open(path, "rb") as f:
        return memory_from_bytes(f.read())
