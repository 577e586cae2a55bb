"""Continuous-time complex baseband model of the encrypted E6 code signal.

The modulator is a pure function of receiver time.  Code delay and carrier
phase are both driven by the same line-of-sight range ``s(t)``, so code and
carrier Doppler stay consistent at any sample rate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

E1_CARRIER_HZ = 1575.42e6
E6_CARRIER_HZ = 1278.75e6
E1_CHIP_RATE = 1.023e6
E6_CHIP_RATE = 5.115e6
E1_CODE_PERIOD = 4e-3


@dataclass(frozen=True)
class DynamicsParams:
    """Line-of-sight range ``s(t) = s0 + v t + a t^2/2 + A sin(omega t)``."""

    s0: float = 0.0
    v: float = 0.0
    a: float = 0.0
    A: float = 0.0
    omega: float = 0.0

    def __post_init__(self):
        for name in ("s0", "v", "a", "A", "omega"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.A < 0:
            raise ValueError("A must be >= 0")
        if self.omega < 0:
            raise ValueError("omega must be >= 0")

    @property
    def peak_acceleration(self) -> float:
        """Upper bound of |s''(t)|, attained whenever the sinusoid peaks."""
        return abs(self.a) + self.A * self.omega**2


# Parameter set of the nominal and spoofing campaigns.
PAPER_DYNAMICS = DynamicsParams(
    s0=0.0, v=51.023, a=0.0, A=0.5012, omega=2 * math.pi * 0.5012
)


@dataclass(frozen=True, eq=False)
class CodeSequence:
    """A +/-1 spreading sequence clocked at ``chip_rate``.

    ``epoch`` is the code time of chip 0.  Lookups wrap modulo ``length``,
    so a periodic open code and a finite encrypted snapshot share one type.
    """

    chips: np.ndarray
    chip_rate: float
    epoch: float = 0.0

    def __post_init__(self):
        chips = np.asarray(self.chips, dtype=np.int8)
        if chips.ndim != 1 or chips.size < 1:
            raise ValueError("code needs at least one chip")
        if not np.all(np.abs(chips) == 1):
            raise ValueError("chips must be +1 or -1")
        if not self.chip_rate > 0:
            raise ValueError("chip_rate must be positive")
        chips.setflags(write=False)
        object.__setattr__(self, "chips", chips)

    @property
    def length(self) -> int:
        return int(self.chips.size)

    @property
    def chip_length(self) -> float:
        """Chip duration expressed in meters."""
        return SPEED_OF_LIGHT / self.chip_rate

    @property
    def period(self) -> float:
        return self.length / self.chip_rate

    def segment(self, start_chip: int, n_chips: int) -> "CodeSequence":
        """Non-wrapping copy of ``n_chips`` chips beginning at ``start_chip``."""
        idx = (start_chip + np.arange(n_chips)) % self.length
        return CodeSequence(
            self.chips[idx], self.chip_rate, self.epoch + start_chip / self.chip_rate
        )


def random_code(length: int, chip_rate: float, seed, epoch: float = 0.0) -> CodeSequence:
    """Seeded pseudorandom chip stream standing in for encrypted chips."""
    rng = np.random.default_rng(seed)
    chips = (rng.integers(0, 2, size=length, dtype=np.int8) * 2 - 1).astype(np.int8)
    return CodeSequence(chips, chip_rate, epoch)


@dataclass(frozen=True, eq=False)
class SignalParams:
    carrier_offset: float
    code: CodeSequence
    recs_length: float
    amplitude: float = 1.0
    carrier_freq: float = E6_CARRIER_HZ

    def __post_init__(self):
        if not self.recs_length > 0:
            raise ValueError("recs_length must be positive")

    def with_code(self, code: CodeSequence) -> "SignalParams":
        return replace(self, code=code)


def los_range(t, p: DynamicsParams):
    """Line-of-sight range in meters at time ``t`` (scalar or array)."""
    s = p.s0 + p.v * t + 0.5 * p.a * t * t
    if p.A != 0.0:
        s = s + p.A * np.sin(p.omega * t)
    return s


def los_range_rate(t, p: DynamicsParams):
    r = p.v + p.a * t
    if p.A != 0.0:
        r = r + p.A * p.omega * np.cos(p.omega * t)
    return r


def los_range_accel(t, p: DynamicsParams):
    acc = p.a + 0.0 * t
    if p.A != 0.0:
        acc = acc - p.A * p.omega**2 * np.sin(p.omega * t)
    return acc


def shifted_dynamics(p: DynamicsParams, extra_range: float = 0.0,
                     extra_rate: float = 0.0, t_ref: float = 0.0) -> DynamicsParams:
    """Add ``extra_range + extra_rate (t - t_ref)`` to the range model.

    Clock bias/drift and constant hardware delays enter the received signal
    this way, leaving the shape of ``s(t)`` untouched.
    """
    return replace(
        p, s0=p.s0 + extra_range - extra_rate * t_ref, v=p.v + extra_rate
    )


def code_phase(code: CodeSequence, t) -> np.ndarray:
    """Fractional chip count since the code epoch at code time ``t``."""
    return (np.asarray(t, dtype=float) - code.epoch) * code.chip_rate


# Code phases within this many chips below an integer count as on the edge,
# so sample instants that are nominally chip edges land in the new chip.
CHIP_EDGE_TOL = 1e-9


def chip_index(phase):
    """Chip count of a fractional code phase (floor, edge-tolerant)."""
    return np.floor(np.asarray(phase) + CHIP_EDGE_TOL).astype(np.int64)


def code_value(code: CodeSequence, t):
    """Chip value at code time ``t``."""
    idx = chip_index(code_phase(code, t)) % code.length
    out = code.chips[idx]
    return int(out) if np.ndim(out) == 0 else out


def sample_times(t_start: float, fs: float, n: int) -> np.ndarray:
    return t_start + np.arange(n) / fs


def carrier_cycles(sig: SignalParams, t, s):
    return sig.carrier_offset * t - sig.carrier_freq * s / SPEED_OF_LIGHT


def unit_phasor(cycles) -> np.ndarray:
    """``exp(j 2 pi cycles)`` with whole cycles removed before scaling."""
    return np.exp(2j * np.pi * (cycles - np.round(cycles)))


def modulate(sig: SignalParams, dyn: DynamicsParams, t: np.ndarray,
             extra_delay=None) -> np.ndarray:
    """Waveform at receiver times ``t``; ``extra_delay`` (meters) adds to ``s(t)``."""
    with np.errstate(over="ignore", invalid="ignore"):
        s = los_range(t, dyn)
        if extra_delay is not None:
            s = s + extra_delay
    if not np.all(np.isfinite(s)):
        raise ValueError("range model produced non-finite values")
    chips = code_value(sig.code, t - s / SPEED_OF_LIGHT)
    return sig.amplitude * chips * unit_phasor(carrier_cycles(sig, t, s))


def generate_samples(sig: SignalParams, dyn: DynamicsParams, t_start: float,
                     fs: float, n: int) -> np.ndarray:
    """Noiseless complex baseband samples at ``t_start + k/fs``.

    Sample k equals ``A c(t - s(t)/c) exp(j(2 pi f_off t - 2 pi f_c s(t)/c))``.
    """
    if not fs > 2 * abs(sig.carrier_offset):
        raise ValueError("fs must exceed twice the carrier offset")
    if n < 1:
        raise ValueError("n must be >= 1")
    return modulate(sig, dyn, sample_times(t_start, fs, n))
