"""
Counter-based random streams.

Every stream is keyed on (master_seed, experiment_id, index) through a
keyed hash, so sample i gets the same stream no matter which worker runs it.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Dict, Tuple, Union

import numpy as np

Index = Union[int, Tuple[int, ...]]

_PERSON = b"pbm-seeds-v1"


def _stream_key(master_seed: int, experiment_id: str, index: Index) -> int:
    h = hashlib.blake2b(digest_size=16, person=_PERSON)
    h.update(struct.pack("<Q", master_seed & 0xFFFFFFFFFFFFFFFF))
    eid = experiment_id.encode("utf-8")
    h.update(struct.pack("<I", len(eid)))
    h.update(eid)
    parts = index if isinstance(index, tuple) else (index,)
    h.update(struct.pack("<I", len(parts)))
    for part in parts:
        h.update(struct.pack("<q", int(part)))
    return int.from_bytes(h.digest(), "little")


def seed_schedule(master_seed: int, experiment_id: str, sample_index: Index) -> np.random.Generator:
    """Independent Philox stream for one (master_seed, experiment, index) triple."""
    key = _stream_key(master_seed, experiment_id, sample_index)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class SeedSchedule:
    master_seed: int
    experiment_id: str

    def stream(self, index: Index) -> np.random.Generator:
        return seed_schedule(self.master_seed, self.experiment_id, index)

    def child(self, suffix: str) -> "SeedSchedule":
        return SeedSchedule(self.master_seed, f"{self.experiment_id}/{suffix}")

    def descriptor(self) -> Dict:
        return {
            "construction": "blake2b-128(master_seed, experiment_id, index) -> Philox key",
            "master_seed": self.master_seed,
            "experiment_id": self.experiment_id,
        }
