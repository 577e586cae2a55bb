"""Sample batches and their on-disk format.

File layout: an ASCII header terminated by a blank line, then little-endian
interleaved float32 I/Q pairs::

    ACASBATCH 1
    fs <Hz>
    t_start <s>
    count <n>
    e1_sample_anchor <n>

Header values are written with ``repr`` so they round-trip exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

MAGIC = "ACASBATCH 1"


@dataclass(frozen=True, eq=False)
class SampleBatch:
    t_start: float
    fs: float
    samples: np.ndarray
    e1_sample_anchor: int = 0

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 1 or samples.size < 1:
            raise ValueError("batch needs at least one sample")
        if not np.isfinite(self.t_start):
            raise ValueError("t_start must be finite")
        if not self.fs > 0:
            raise ValueError("fs must be positive")
        # Read-only view: correlator caches key on the array identity.
        view = samples.astype(np.complex128, copy=False).view()
        view.setflags(write=False)
        object.__setattr__(self, "samples", view)
        object.__setattr__(self, "t_start", float(self.t_start))
        object.__setattr__(self, "fs", float(self.fs))
        object.__setattr__(self, "e1_sample_anchor", int(self.e1_sample_anchor))

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration(self) -> float:
        return len(self) / self.fs

    def times(self) -> np.ndarray:
        return self.t_start + np.arange(len(self)) / self.fs

    def with_samples(self, samples: np.ndarray) -> "SampleBatch":
        return replace(self, samples=samples)


def write_batch(path, batch: SampleBatch) -> None:
    header = (
        f"{MAGIC}\nfs {batch.fs!r}\nt_start {batch.t_start!r}\n"
        f"count {len(batch)}\ne1_sample_anchor {batch.e1_sample_anchor}\n\n"
    )
    iq = np.empty(2 * len(batch), dtype="<f4")
    iq[0::2] = batch.samples.real
    iq[1::2] = batch.samples.imag
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(iq.tobytes())


def read_batch(path) -> SampleBatch:
    raw = Path(path).read_bytes()
    end = raw.find(b"\n\n")
    if end < 0:
        raise ValueError(f"{path}: missing header terminator")
    lines = raw[:end].decode("ascii").splitlines()
    if not lines or lines[0].strip() != MAGIC:
        raise ValueError(f"{path}: not a sample batch file")
    fields = {}
    for line in lines[1:]:
        key, _, value = line.partition(" ")
        fields[key] = value.strip()
    try:
        fs = float(fields["fs"])
        t_start = float(fields["t_start"])
        count = int(fields["count"])
        anchor = int(fields.get("e1_sample_anchor", "0"))
    except (KeyError, ValueError) as exc:
        raise ValueError(f"{path}: bad header field ({exc})") from None
    iq = np.frombuffer(raw[end + 2:], dtype="<f4")
    if iq.size != 2 * count:
        raise ValueError(f"{path}: expected {count} samples, found {iq.size // 2}")
    samples = iq[0::2].astype(np.float64) + 1j * iq[1::2].astype(np.float64)
    return SampleBatch(t_start, fs, samples, anchor)
