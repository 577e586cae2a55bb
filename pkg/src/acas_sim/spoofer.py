"""Inauthentic replica injection.

A profile gives the spoofer's extra path delay (meters, never negative) and
its amplitude relative to the true signal as functions of receiver time.
Both are :class:`Schedule` objects whose segments are monotone, so a schedule
is non-negative everywhere iff its knot values are.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .batch import SampleBatch
from .signal_gen import SignalParams, DynamicsParams, modulate, random_code

SHAPES = ("linear", "sine", "step")

BUILTIN_PROFILES = ("none", "liftoff", "constant_offset", "wrong_code")


@dataclass(frozen=True)
class Schedule:
    """Piecewise-monotone function of time.

    ``values[i]`` is reached at ``times[i]``.  Segment i uses ``shapes[i]``:
    ``linear``, ``sine`` (quarter-sine ease from ``values[i]`` to
    ``values[i+1]``) or ``step`` (holds ``values[i]``).  Before the first knot
    the value is ``before``; after the last it holds the last value.
    """

    times: tuple[float, ...]
    values: tuple[float, ...]
    shapes: tuple[str, ...] = ()
    before: float | None = None

    def __post_init__(self):
        if len(self.times) != len(self.values) or not self.times:
            raise ValueError("schedule needs matching, nonempty times and values")
        if any(b < a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("schedule times must be nondecreasing")
        shapes = self.shapes or ("linear",) * (len(self.times) - 1)
        if len(shapes) != len(self.times) - 1 or any(s not in SHAPES for s in shapes):
            raise ValueError(f"schedule needs {len(self.times) - 1} shapes from {SHAPES}")
        object.__setattr__(self, "shapes", tuple(shapes))
        if self.before is None:
            object.__setattr__(self, "before", self.values[0])

    @classmethod
    def constant(cls, value: float) -> "Schedule":
        return cls((0.0,), (float(value),), before=float(value))

    @property
    def minimum(self) -> float:
        return min(min(self.values), self.before)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        times = np.asarray(self.times)
        values = np.asarray(self.values, dtype=float)
        out = np.full(t.shape, values[-1])
        out = np.where(t < times[0], self.before, out)
        for i, shape in enumerate(self.shapes):
            t0, t1 = times[i], times[i + 1]
            inside = (t >= t0) & (t < t1)
            if not inside.any():
                continue
            u = (t[inside] - t0) / (t1 - t0)
            v0, v1 = values[i], values[i + 1]
            if shape == "linear":
                seg = v0 + (v1 - v0) * u
            elif shape == "sine":
                seg = v0 + (v1 - v0) * np.sin(0.5 * np.pi * u)
            else:
                seg = np.full(u.shape, v0)
            out[inside] = seg
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class SpoofProfile:
    """Spoofer geometry and power.

    ``code_seed`` replaces the authentic chips with a seeded guess of the same
    length and rate (a wrong-code spoofer); ``None`` is meaconing with the true
    encrypted chips.
    ``e6_enabled=False`` makes an E1-only attack.  With ``affects_e1`` the
    spoofer also transmits on E1 and the E1 observables follow it while it is
    the stronger signal; ``e1_nulling`` additionally removes the true E1 signal.
    """

    start: float
    delay_profile: Schedule
    power_profile: Schedule
    affects_e1: bool = False
    phase_offset: float = 0.0
    code_seed: int | None = None
    e6_enabled: bool = True
    e1_nulling: bool = False
    name: str = "custom"

    def __post_init__(self):
        if self.delay_profile.minimum < 0:
            raise ValueError("spoofer delay must be >= 0 (replica never precedes the true signal)")
        if self.power_profile.minimum < 0:
            raise ValueError("spoofer power must be >= 0")
        if not math.isfinite(self.phase_offset):
            raise ValueError("phase_offset must be finite")
        if self.e1_nulling and not self.affects_e1:
            raise ValueError("e1_nulling requires affects_e1")

    def e1_active(self, t: float) -> bool:
        """Is the spoofer transmitting on E1 at ``t``?"""
        return self.affects_e1 and self.power_profile(t) > 0.0

    def e1_bias(self, t: float) -> float:
        """Extra E1 pseudorange while the spoofer dominates E1 tracking."""
        if self.affects_e1 and (self.e1_nulling or self.power_profile(t) > 1.0):
            return float(self.delay_profile(t))
        return 0.0


def spoof_offset(t, p: SpoofProfile):
    """Extra path delay of the replica at time ``t`` (meters)."""
    return p.delay_profile(t)


def liftoff_profile(start: float = 500.0, capture: float = 600.0, standoff: float = 120.0,
                    pull_rate: float = 1.0, max_delay: float = 135.0,
                    approach_power: float = 0.5, final_power: float = 2.0,
                    power_ramp: float = 60.0, phase_offset: float = 0.0,
                    affects_e1: bool = False) -> SpoofProfile:
    """Zero-delay meaconing lift-off.

    The delay eases from ``standoff`` down to 0 at ``capture`` along a
    quarter sine, then grows at ``pull_rate`` up to ``max_delay``.  The
    spoofer is silent before ``start``, weak during the approach, and ramps
    to ``final_power`` within ``power_ramp`` seconds of capture.
    """
    if not (capture > start and pull_rate > 0 and max_delay > 0 and power_ramp > 0):
        raise ValueError("liftoff needs capture > start and positive rates")
    pull_end = capture + max_delay / pull_rate
    delay = Schedule((start, capture, pull_end), (standoff, 0.0, max_delay),
                     ("sine", "linear"))
    power = Schedule((start, capture, capture + power_ramp),
                     (approach_power, approach_power, final_power),
                     ("step", "linear"), before=0.0)
    return SpoofProfile(start, delay, power, affects_e1, phase_offset, name="liftoff")


def constant_offset_profile(start: float = 0.0, delay: float = 300.0, power: float = 2.0,
                            phase_offset: float = 0.0, affects_e1: bool = False,
                            e6_enabled: bool = True, e1_nulling: bool = False) -> SpoofProfile:
    """Fixed delay and power from ``start`` on.

    ``e6_enabled=False`` gives an E1-only spoofer, ``e1_nulling`` a spoofer
    that also suppresses the true E1 signal.
    """
    return SpoofProfile(
        start, Schedule.constant(delay), Schedule((start,), (power,), before=0.0),
        affects_e1, phase_offset, e6_enabled=e6_enabled, e1_nulling=e1_nulling,
        name="constant_offset",
    )


def wrong_code_profile(start: float = 0.0, delay: float = 300.0, power: float = 2.0,
                       code_seed: int = 12345, affects_e1: bool = True) -> SpoofProfile:
    """A spoofer that cannot produce the encrypted chips and transmits a guess."""
    prof = constant_offset_profile(start, delay, power, affects_e1=affects_e1)
    return SpoofProfile(prof.start, prof.delay_profile, prof.power_profile, affects_e1,
                        code_seed=code_seed, name="wrong_code")


def make_profile(name: str, **params) -> SpoofProfile | None:
    """Build a named built-in profile."""
    if name == "none":
        if params:
            raise ValueError("profile 'none' takes no parameters")
        return None
    builders = {
        "liftoff": liftoff_profile,
        "constant_offset": constant_offset_profile,
        "wrong_code": wrong_code_profile,
    }
    if name not in builders:
        raise ValueError(f"unknown spoof profile {name!r}; expected one of {BUILTIN_PROFILES}")
    return builders[name](**params)


def _replica_signal(sig: SignalParams, p: SpoofProfile) -> SignalParams:
    if p.code_seed is None:
        return sig
    c = sig.code
    return sig.with_code(random_code(c.length, c.chip_rate, p.code_seed, c.epoch))


def inject_spoofer(batch: SampleBatch, true_signal_params: tuple[SignalParams, DynamicsParams],
                   p: SpoofProfile | None, rng: np.random.Generator | None = None) -> SampleBatch:
    """Add the spoofer's delayed, scaled, phase-offset replica to ``batch``.

    ``true_signal_params`` is the ``(signal, dynamics)`` pair that produced the
    authentic samples.  The authentic samples are never altered (no nulling).
    The built-in profiles are deterministic; ``rng`` is accepted for
    stochastic extensions.
    """
    if p is None or not p.e6_enabled:
        return batch
    t = batch.times()
    power = p.power_profile(t)
    if not np.any(power):
        return batch
    sig, dyn = true_signal_params
    wave = modulate(_replica_signal(sig, p), dyn, t, extra_delay=p.delay_profile(t))
    spoof = power * np.exp(1j * p.phase_offset) * wave
    return batch.with_samples(batch.samples + spoof)
