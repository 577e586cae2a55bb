from __future__ import annotations

import numpy as np
import pytest

from acas_sim.batch import MAGIC, SampleBatch, read_batch, write_batch


def test_roundtrip_is_bit_exact_for_float32_values(tmp_path, rng):
    iq = rng.standard_normal(2000).astype(np.float32).astype(np.float64)
    batch = SampleBatch(np.float64(12.345678901234567), 20.46e6, iq[0::2] + 1j * iq[1::2], 17)
    path = tmp_path / "b.iq"
    write_batch(path, batch)
    back = read_batch(path)
    assert back.t_start == batch.t_start and back.fs == batch.fs
    assert back.e1_sample_anchor == 17
    assert np.array_equal(back.samples, batch.samples)


def test_file_layout(tmp_path):
    path = tmp_path / "b.iq"
    write_batch(path, SampleBatch(0.5, 4.0, np.array([1 + 2j, -3 - 4j])))
    raw = path.read_bytes()
    header, body = raw.split(b"\n\n", 1)
    assert header.decode().splitlines()[0] == MAGIC
    assert np.array_equal(np.frombuffer(body, "<f4"), [1, 2, -3, -4])


@pytest.mark.parametrize("content, message", [
    (b"ACASBATCH 1\nfs 1.0\n", "terminator"),
    (b"NOPE\n\n", "not a sample batch"),
    (b"ACASBATCH 1\nfs x\nt_start 0\ncount 1\n\n", "bad header"),
    (b"ACASBATCH 1\nfs 1\nt_start 0\ncount 2\n\n\x00\x00\x00\x00\x00\x00\x00\x00", "expected 2"),
])
def test_malformed_files_are_rejected(tmp_path, content, message):
    path = tmp_path / "bad.iq"
    path.write_bytes(content)
    with pytest.raises(ValueError, match=message):
        read_batch(path)


def test_batch_validation_and_read_only():
    with pytest.raises(ValueError):
        SampleBatch(0.0, 1.0, np.array([]))
    with pytest.raises(ValueError):
        SampleBatch(np.nan, 1.0, np.ones(3))
    with pytest.raises(ValueError):
        SampleBatch(0.0, 0.0, np.ones(3))
    b = SampleBatch(1.0, 4.0, np.ones(8))
    with pytest.raises(ValueError):
        b.samples[0] = 2
    assert b.duration == 2.0
    assert np.array_equal(b.times(), 1.0 + np.arange(8) / 4.0)
