"""Coherent correlation of sample batches against code replicas.

A replica for code offset ``o`` (meters) and carrier ``f`` (Hz) is::

    r[n] = chip(t_n - d(t_n)/c) * exp(j 2 pi f t_n),   d(t) = o + rate (t - t_ref)

restricted to the chips of the supplied code (a RECS snapshot covers code time
``[code.epoch, code.epoch + t_i)``).  ``correlate_grid`` returns the raw sums
``sum_n x[n] conj(r[n])``.  The default kernel accumulates samples per chip
through a cumulative sum, which is the same sum re-associated; ``method="direct"``
forms every replica explicitly and is kept as the reference.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as sp_fft

from .batch import SampleBatch
from .signal_gen import CHIP_EDGE_TOL, SPEED_OF_LIGHT, CodeSequence, chip_index

# Affine estimates of chip boundaries closer than this (in samples) to a
# sample instant are re-checked against the exact phase evaluation.
_TIE_TOL = 1e-2
_BLOCK = 1024


@dataclass(frozen=True, eq=False)
class CorrelatorVector:
    values: np.ndarray
    spacing: float
    anchor_offset: float
    t_i: float
    freq_offset: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.complex128)
        if values.ndim != 1 or values.size < 3:
            raise ValueError("a correlator vector needs at least 3 elements")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.values)

    @property
    def phases(self) -> np.ndarray:
        return np.angle(self.values)

    def position(self, index: int) -> float:
        """Code offset in meters of the 1-based element ``index``."""
        return self.anchor_offset + (index - 1) * self.spacing

    @property
    def offsets(self) -> np.ndarray:
        return self.anchor_offset + self.spacing * np.arange(len(self))


@dataclass(frozen=True)
class NoiseFloor:
    power: float
    dof_count: int

    def __post_init__(self):
        if not self.power > 0:
            raise ValueError("noise floor power must be positive")


def centered_offsets(n: int, spacing: float, center: float = 0.0) -> np.ndarray:
    return center + spacing * (np.arange(n) - (n - 1) / 2)


def carrier_phasor(f: float, t_start: float, fs: float, n: int) -> np.ndarray:
    """``exp(j 2 pi f (t_start + k/fs))`` for k < n, built blockwise.

    Each element is the product of two directly evaluated exponentials, so the
    error does not accumulate along the batch.
    """
    if f == 0.0:
        return np.ones(n, dtype=np.complex128)
    n_blocks = -(-n // _BLOCK)
    coarse = np.exp(2j * np.pi * f * (t_start + np.arange(n_blocks) * (_BLOCK / fs)))
    fine = np.exp(2j * np.pi * f * (np.arange(_BLOCK) / fs))
    return np.outer(coarse, fine).ravel()[:n]


_cumsum_cache: dict = {}


def wiped_cumsum(batch: SampleBatch, f: float) -> np.ndarray:
    """``[0, cumsum(x * conj(exp(j 2 pi f t)))]``, memoised for the latest batch.

    The correlator and the noise-floor estimator of one epoch share this.
    """
    key = (id(batch.samples), batch.t_start, batch.fs, float(f))
    hit = _cumsum_cache.get(key)
    if hit is not None and hit[0] is batch.samples:
        return hit[1]
    wiped = batch.samples
    if f != 0.0:
        wiped = wiped * np.conj(carrier_phasor(f, batch.t_start, batch.fs, len(batch)))
    cums = np.empty(len(batch) + 1, dtype=np.complex128)
    cums[0] = 0.0
    np.cumsum(wiped, out=cums[1:])
    cums.setflags(write=False)
    if len(_cumsum_cache) >= 4:
        _cumsum_cache.clear()
    _cumsum_cache[key] = (batch.samples, cums)
    return cums


def _replica_phase(code: CodeSequence, t, offset: float, rate: float, t_ref: float):
    delay = offset + rate * (t - t_ref)
    return ((t - code.epoch) - delay / SPEED_OF_LIGHT) * code.chip_rate


def _window_chips(code: CodeSequence, t_i: float) -> int:
    n_chips = int(round(t_i * code.chip_rate))
    if n_chips < 1:
        raise ValueError("integration time shorter than one chip")
    if n_chips > code.length:
        raise ValueError("integration time exceeds the code length")
    return n_chips


def chip_boundaries(batch: SampleBatch, code: CodeSequence, offset: float,
                    n_chips: int, rate: float = 0.0, t_ref: float = 0.0) -> np.ndarray:
    """First sample index of chips ``0..n_chips`` (the last entry closes the window).

    Sample n belongs to chip ``chip_index(phase(t_n))``; boundaries agree
    exactly with that rule, including samples that fall on a chip edge.
    """
    fs = batch.fs
    ph0 = _replica_phase(code, batch.t_start, offset, rate, t_ref)
    dph = (1.0 - rate / SPEED_OF_LIGHT) * code.chip_rate / fs
    edges = np.arange(n_chips + 1) - CHIP_EDGE_TOL
    est = (edges - ph0) / dph
    b = np.ceil(est)
    near = np.flatnonzero((b - est < _TIE_TOL) | (est - (b - 1) < _TIE_TOL))
    b = b.astype(np.int64)
    if near.size:
        j = edges[near]
        for _ in range(3):
            bb = b[near]
            t_hi = batch.t_start + bb.astype(float) / fs
            t_lo = batch.t_start + (bb - 1).astype(float) / fs
            up = _replica_phase(code, t_hi, offset, rate, t_ref) < j
            down = _replica_phase(code, t_lo, offset, rate, t_ref) >= j
            if not (up.any() or down.any()):
                break
            b[near] = bb + up.astype(np.int64) - down.astype(np.int64)
    if b[0] < 0 or b[-1] > len(batch):
        raise ValueError(
            f"batch too short: correlation window [{b[0]}, {b[-1]}) "
            f"outside {len(batch)} samples"
        )
    return b


def _chip_dot(chips: np.ndarray, cums: np.ndarray, b: np.ndarray) -> complex:
    """``sum_j chips[j] * (cums[b[j+1]] - cums[b[j]])`` with one real matrix product."""
    g = cums[b]
    per_chip = (g[1:] - g[:-1]).view(np.float64).reshape(-1, 2)
    re, im = chips @ per_chip
    return complex(re, im)


def _check_grid(batch, offsets, freqs, t_i):
    offsets = np.atleast_1d(np.asarray(offsets, dtype=float))
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    if offsets.size == 0 or freqs.size == 0:
        raise ValueError("offset and frequency grids must be nonempty")
    if t_i * batch.fs > len(batch) + 1e-9:
        raise ValueError("batch too short for the integration time")
    return offsets, freqs


def correlate_grid(batch: SampleBatch, code: CodeSequence, offsets, freqs, t_i: float,
                   *, range_rate: float = 0.0, t_ref: float | None = None,
                   method: str = "fast") -> np.ndarray:
    """Complex correlations, shape ``(len(offsets), len(freqs))``."""
    offsets, freqs = _check_grid(batch, offsets, freqs, t_i)
    n_chips = _window_chips(code, t_i)
    t_ref = batch.t_start if t_ref is None else t_ref
    if method == "direct":
        return _correlate_direct(batch, code, offsets, freqs, n_chips, range_rate, t_ref)
    if method != "fast":
        raise ValueError(f"unknown method {method!r}")
    chips = code.chips[:n_chips].astype(np.float64)
    bounds = [chip_boundaries(batch, code, o, n_chips, range_rate, t_ref) for o in offsets]
    out = np.empty((offsets.size, freqs.size), dtype=np.complex128)
    for m, f in enumerate(freqs):
        cums = wiped_cumsum(batch, f)
        for k, b in enumerate(bounds):
            out[k, m] = _chip_dot(chips, cums, b)
    return out


def _correlate_direct(batch, code, offsets, freqs, n_chips, rate, t_ref):
    n = np.arange(len(batch))
    t = batch.t_start + n / batch.fs
    out = np.empty((offsets.size, freqs.size), dtype=np.complex128)
    edges = batch.t_start + np.array([-1.0, len(batch)]) / batch.fs
    for k, o in enumerate(offsets):
        before, after = _replica_phase(code, edges, o, rate, t_ref)
        if before >= 0 or after < n_chips:
            raise ValueError("batch too short: correlation window outside the batch")
        idx = chip_index(_replica_phase(code, t, o, rate, t_ref))
        inside = (idx >= 0) & (idx < n_chips)
        chips = np.zeros(len(batch))
        chips[inside] = code.chips[idx[inside]]
        for m, f in enumerate(freqs):
            replica = chips * np.exp(2j * np.pi * f * t)
            out[k, m] = np.sum(batch.samples * np.conj(replica))
    return out


def correlate_vector(batch: SampleBatch, code: CodeSequence, n_correlators: int,
                     spacing: float, center: float, t_i: float, freq: float = 0.0,
                     *, range_rate: float = 0.0, t_ref: float | None = None) -> CorrelatorVector:
    """Equidistant correlators centred on the predicted offset ``center``."""
    offsets = centered_offsets(n_correlators, spacing, center)
    values = correlate_grid(batch, code, offsets, [freq], t_i,
                            range_rate=range_rate, t_ref=t_ref)[:, 0]
    return CorrelatorVector(values, spacing, float(offsets[0] - center), t_i, freq)


def correlate_lags(batch: SampleBatch, code: CodeSequence, base_offset: float,
                   n_lags: int, freqs, t_i: float, lag_step: int = 1) -> np.ndarray:
    """Correlations at offsets ``base_offset + l * lag_step * c / fs`` via FFT.

    Shape ``(n_lags, len(freqs))``.  Lag l shifts the base replica by whole
    samples, which equals re-evaluating the replica at the shifted offset.
    """
    _, freqs = _check_grid(batch, [base_offset], freqs, t_i)
    if n_lags < 1 or lag_step < 1:
        raise ValueError("n_lags and lag_step must be >= 1")
    n_chips = _window_chips(code, t_i)
    n = len(batch)
    b = chip_boundaries(batch, code, base_offset, n_chips)
    max_shift = (n_lags - 1) * lag_step
    if b[-1] + max_shift > n:
        raise ValueError("batch too short for the requested lag range")
    replica = np.zeros(n)
    replica[b[0]:b[-1]] = np.repeat(code.chips[:n_chips].astype(np.float64), np.diff(b))
    size = sp_fft.next_fast_len(n)
    ref = np.conj(sp_fft.fft(replica, size))
    lags = np.arange(n_lags) * lag_step
    out = np.empty((n_lags, freqs.size), dtype=np.complex128)
    for m, f in enumerate(freqs):
        wiped = batch.samples * np.conj(carrier_phasor(f, batch.t_start, batch.fs, n))
        corr = sp_fft.ifft(sp_fft.fft(wiped, size) * ref)
        out[:, m] = corr[lags]
    return out


def correlate_periodic(batch: SampleBatch, code: CodeSequence, n_periods: int,
                       freqs) -> np.ndarray:
    """Circular correlation over one code period for every whole-sample delay.

    The first ``n_periods`` periods of the batch are wiped and folded
    coherently, then correlated against one period of the code.  Entry
    ``(m, l)`` is the correlation at frequency ``freqs[m]`` and delay
    ``l * c / fs`` modulo the code period.
    """
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    per = code.period * batch.fs
    p = int(round(per))
    if abs(per - p) > 1e-6:
        raise ValueError("sample rate must give a whole number of samples per period")
    if n_periods < 1 or n_periods * p > len(batch):
        raise ValueError("batch too short for the requested number of periods")
    t = batch.t_start + np.arange(p) / batch.fs
    idx = chip_index(_replica_phase(code, t, 0.0, 0.0, 0.0)) % code.length
    ref = np.conj(np.fft.fft(code.chips[idx].astype(np.float64)))
    out = np.empty((freqs.size, p), dtype=np.complex128)
    seg = batch.samples[: n_periods * p]
    for m, f in enumerate(freqs):
        wiped = seg * np.conj(carrier_phasor(f, batch.t_start, batch.fs, seg.size))
        folded = wiped.reshape(n_periods, p).sum(axis=0)
        out[m] = np.fft.ifft(np.fft.fft(folded) * ref)
    return out


def noise_floor(batch: SampleBatch, bogus_code: CodeSequence, k: int,
                rng: np.random.Generator, *, t_i: float | None = None,
                freq: float = 0.0) -> NoiseFloor:
    """Mean |correlation|^2 against a code absent from the signal.

    One random sub-chip alignment is drawn; the ``k`` hypotheses are random
    chip shifts of ``bogus_code`` over that chip grid.
    """
    if k < 8:
        raise ValueError("noise floor needs k >= 8 hypotheses")
    fs, rc = batch.fs, bogus_code.chip_rate
    max_chips = int(np.floor((len(batch) - 1) * rc / fs)) - 1
    n_chips = max_chips if t_i is None else int(round(t_i * rc))
    if n_chips < 1 or n_chips > max_chips:
        raise ValueError("batch too short for the noise-floor window")
    frac = rng.uniform(0.0, 1.0)
    b = np.ceil((np.arange(n_chips + 1) + frac) * fs / rc).astype(np.int64)
    cums = wiped_cumsum(batch, freq)
    g = cums[b]
    per_chip = (g[1:] - g[:-1]).view(np.float64).reshape(-1, 2)
    L = bogus_code.length
    reps = -(-(L + n_chips) // L)
    ext = np.tile(bogus_code.chips.astype(np.float64), reps)
    shifts = rng.integers(0, L, size=k)
    power = 0.0
    for m in shifts:
        re, im = ext[m:m + n_chips] @ per_chip
        power += re * re + im * im
    return NoiseFloor(power / k, int(k))
