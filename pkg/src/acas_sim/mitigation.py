"""Mitigation levels as check pipelines producing per-epoch verdicts.

Level 1 verifies E6 presence and E1/E6 range consistency.  Level 2 adds the
C/N0 and total-power monitors, the E1-seeded vestigial search and the clock
drift monitor.  Level 3 replaces the E1-seeded search by an exhaustive E6
search (merged with the seeded one, so a level never passes what the level
below rejects).  Checks that are out of scope stay in the verdict as
disabled slots.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channel import ClockParams, ClockState
from .correlator import NoiseFloor
from .detector import DetectionReport, VssDetection, VssResult, _cluster, detection_threshold

ALARMS = (
    "e6_absent", "range_mismatch", "cn0_anomaly", "power_anomaly",
    "vss_spoof", "clock_drift", "flank",
)

# Out-of-scope checks reported as disabled slots.
DISABLED_SLOTS = ("anma", "bridging", "raim")


@dataclass(frozen=True)
class MitigationConfig:
    level: int = 1
    range_check_threshold: float = 30.0
    cn0_window: int = 10
    cn0_baseline: int = 30
    cn0_alarm_db: float = 3.0
    power_alarm_db: float = 1.0
    clock_drift_alarm: float = 1e-8
    clock_sigma: float = 3.0
    overall_pfa: float = 1e-3
    e6_pfa: float = 1e-7

    def __post_init__(self):
        if self.level not in (1, 2, 3):
            raise ValueError("level must be 1, 2 or 3")
        for name in ("range_check_threshold", "cn0_alarm_db", "power_alarm_db",
                     "clock_drift_alarm", "clock_sigma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.cn0_window < 1 or self.cn0_baseline < 1:
            raise ValueError("cn0_window and cn0_baseline must be >= 1")
        for name in ("overall_pfa", "e6_pfa"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool | None
    statistic: float = math.nan
    threshold: float = math.nan
    enabled: bool = True
    note: str = ""


@dataclass(frozen=True)
class AuthVerdict:
    epoch: float
    authentic: bool
    checks: tuple[Check, ...]
    alarms: tuple[str, ...] = ()
    level: int = 1

    def check(self, name: str) -> Check:
        return next(c for c in self.checks if c.name == name)


def _verdict(epoch, checks, alarms, level) -> AuthVerdict:
    authentic = all(c.passed for c in checks if c.enabled)
    order = {a: i for i, a in enumerate(ALARMS)}
    alarms = tuple(sorted(set(alarms), key=order.__getitem__))
    return AuthVerdict(epoch, authentic, tuple(checks), alarms, level)


def _level1(report: DetectionReport, nf: NoiseFloor, cfg: MitigationConfig):
    thr = detection_threshold(nf, cfg.e6_pfa)
    present = bool(report.detected and report.peak_magnitude >= thr)
    offset = report.range_offset if report.detected else math.nan
    consistent = bool(present and math.isfinite(offset)
                      and abs(offset) <= cfg.range_check_threshold)
    checks = [
        Check("e6_presence", present, report.peak_magnitude, thr),
        Check("range_consistency", consistent, offset, cfg.range_check_threshold),
    ]
    alarms = []
    if not present:
        alarms.append("e6_absent")
    elif not consistent:
        alarms.append("range_mismatch")
    if report.flank_trigger:
        alarms.append("flank")
    return checks, alarms


def level1_check(report: DetectionReport, nf: NoiseFloor, cfg: MitigationConfig) -> AuthVerdict:
    """E6 power at the predicted offset and E1/E6 range agreement."""
    checks, alarms = _level1(report, nf, cfg)
    return _verdict(report.epoch, checks, alarms, 1)


def window_jump(history: Sequence[float], window: int, baseline: int) -> float:
    """Recent-window mean minus the mean of up to ``baseline`` values before it.

    NaN when there is no baseline yet.
    """
    x = np.asarray(history, dtype=float)
    if x.size < window:
        raise ValueError(f"need at least {window} values, got {x.size}")
    base = x[max(0, x.size - window - baseline):x.size - window]
    if base.size == 0:
        return math.nan
    return float(x[-window:].mean() - base.mean())


def cn0_monitor(history: Sequence[float], cfg: MitigationConfig,
                power_history: Sequence[float] | None = None) -> str | None:
    """C/N0 jump alarm, falling back to the total-power (AGC proxy) band."""
    jump = window_jump(history, cfg.cn0_window, cfg.cn0_baseline)
    if abs(jump) > cfg.cn0_alarm_db:
        return "cn0_anomaly"
    if power_history is not None:
        jump = window_jump(power_history, cfg.cn0_window, cfg.cn0_baseline)
        if abs(jump) > cfg.power_alarm_db:
            return "power_anomaly"
    return None


def drift_change_threshold(dt: float, cfg: MitigationConfig, clock: ClockParams) -> float:
    """Larger of the configured alarm and ``clock_sigma`` times the model's drift step."""
    return max(cfg.clock_drift_alarm, cfg.clock_sigma * math.sqrt(clock.q_drift * dt))


def clock_drift_monitor(states: Sequence[ClockState], cfg: MitigationConfig,
                        clock: ClockParams = ClockParams()) -> str | None:
    """Alarm when the latest drift change leaves the expected band."""
    if len(states) < 2:
        raise ValueError("clock drift monitor needs at least two states")
    a, b = states[-2], states[-1]
    dt = b.epoch - a.epoch
    if not dt > 0:
        raise ValueError("clock states must have increasing epochs")
    if abs(b.drift - a.drift) > drift_change_threshold(dt, cfg, clock):
        return "clock_drift"
    return None


@dataclass(frozen=True)
class EpochInputs:
    """What the levels consume for one epoch.  Monitors see trailing histories."""

    report: DetectionReport
    noise: NoiseFloor
    cn0_history: Sequence[float] | None = None
    power_history: Sequence[float] | None = None
    clock_states: Sequence[ClockState] | None = None
    clock_params: ClockParams = field(default_factory=ClockParams)
    vss_handover: VssResult | None = None
    vss_exhaustive: VssResult | None = None


def merge_vss(a: VssResult, b: VssResult, min_sep: float) -> VssResult:
    """Union of two searches, merging detections closer than ``min_sep``."""
    cands = [(d.offset, d.doppler, d.magnitude) for d in a.detections + b.detections]
    kept = _cluster(cands, min_sep)
    return VssResult(tuple(VssDetection(*k) for k in kept), max(a.threshold, b.threshold),
                     a.inauthentic_e1 + b.inauthentic_e1)


def _vss_check(vss: VssResult, name: str) -> tuple[Check, list[str]]:
    n = len(vss.detections)
    bad = vss.spoof_declared or bool(vss.inauthentic_e1)
    return Check(name, not bad, float(n), 2.0), (["vss_spoof"] if bad else [])


def run_level(level: int, inputs: EpochInputs, cfg: MitigationConfig,
              chip_length: float = 58.61) -> AuthVerdict:
    if level not in (1, 2, 3):
        raise ValueError("level must be 1, 2 or 3")
    report = inputs.report
    checks, alarms = _level1(report, inputs.noise, cfg)
    if level >= 2:
        missing = [n for n in ("cn0_history", "power_history", "clock_states")
                   if getattr(inputs, n) is None]
        if inputs.vss_handover is None:
            missing.append("vss_handover")
        if level == 3 and inputs.vss_exhaustive is None:
            missing.append("vss_exhaustive")
        if missing:
            raise ValueError(f"level {level} needs inputs: {', '.join(missing)}")

        for name, hist, limit, tag in (
            ("cn0_monitor", inputs.cn0_history, cfg.cn0_alarm_db, "cn0_anomaly"),
            ("agc_monitor", inputs.power_history, cfg.power_alarm_db, "power_anomaly"),
        ):
            if len(hist) < cfg.cn0_window:
                checks.append(Check(name, True, math.nan, limit, note="warming up"))
                continue
            jump = window_jump(hist, cfg.cn0_window, cfg.cn0_baseline)
            ok = not abs(jump) > limit
            checks.append(Check(name, ok, jump, limit))
            if not ok:
                alarms.append(tag)

        if level == 3:
            vss = merge_vss(inputs.vss_handover, inputs.vss_exhaustive, chip_length)
            check, extra = _vss_check(vss, "vss_exhaustive")
        else:
            check, extra = _vss_check(inputs.vss_handover, "vss_handover")
        checks.append(check)
        alarms += extra

        states = inputs.clock_states
        if len(states) < 2:
            checks.append(Check("clock_drift_monitor", True, note="warming up"))
        else:
            dt = states[-1].epoch - states[-2].epoch
            thr = drift_change_threshold(dt, cfg, inputs.clock_params)
            stat = abs(states[-1].drift - states[-2].drift)
            ok = clock_drift_monitor(states, cfg, inputs.clock_params) is None
            checks.append(Check("clock_drift_monitor", ok, stat, thr))
            if not ok:
                alarms.append("clock_drift")
    for slot in DISABLED_SLOTS:
        checks.append(Check(slot, None, enabled=False, note="not implemented"))
    return _verdict(report.epoch, checks, alarms, level)
