"""Campaign orchestration and result tables.

Epoch k happens at ``start_time + k * epoch_interval``: the satellite starts
a RECS at that instant, the receiver captures it with a guard margin on both
sides and takes its E1 measurement at the batch centre.  Every random draw of
an epoch comes from ``SeedSequence([seed, k, stream])``, so epochs can run in
any order; only the clock is propagated sequentially, up front.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .batch import SampleBatch
from .channel import (
    CaptureState,
    ClockState,
    capture_batch,
    make_e1_measurement,
    sample_iono_error,
    simulate_clock,
)
from .config import TABLES, ScenarioConfig
from .correlator import CorrelatorVector, NoiseFloor, correlate_vector, noise_floor
from .detector import (
    DetectionReport,
    E1Peak,
    HandoverPrediction,
    VssResult,
    detection_threshold,
    evaluate_vector,
    handover_e1_to_e6,
    plan_exhaustive,
    plan_handover,
    vss_exhaustive_search,
    vss_handover_search,
)
from .mitigation import AuthVerdict, EpochInputs, run_level
from .signal_gen import (
    E1_CODE_PERIOD,
    SPEED_OF_LIGHT,
    CodeSequence,
    SignalParams,
    los_range,
    los_range_accel,
    los_range_rate,
    random_code,
)
from .spoofer import SpoofProfile

log = logging.getLogger(__name__)

# Per-epoch random streams.
STREAM_RECS, STREAM_BOGUS, STREAM_CAPTURE, STREAM_IONO, STREAM_E1, STREAM_NOISE = range(6)
CLOCK_KEY = 2**31 - 1

# Step of the central difference used for the observed LOS acceleration.
ACCEL_STEP = 1e-3


def epoch_seed(seed: int, k: int, stream: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, k, stream])


def epoch_rng(seed: int, k: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(epoch_seed(seed, k, stream))


@dataclass
class EpochResult:
    k: int
    t: float
    report: DetectionReport
    vector: CorrelatorVector
    noise: NoiseFloor
    verdict: AuthVerdict
    prediction: HandoverPrediction
    cn0_estimate: float
    power_db: float
    spoof_delay: float
    spoof_power: float
    los_accel: float
    true_offset: float


@dataclass
class CampaignSummary:
    epochs: int
    missed: int
    pd_estimate: float
    false_alarms: int
    spoof_detected_epochs: int
    mean_range_offset: float
    range_offset_p99: float
    peak_accel_observed: float
    auth_failures: int = 0
    spoof_epochs: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class CampaignResult:
    config: ScenarioConfig
    epochs: list[EpochResult] = field(default_factory=list)
    summary: CampaignSummary | None = None


class Campaign:
    """One scenario's epochs, runnable one at a time or all together."""

    def __init__(self, cfg: ScenarioConfig, n_epochs: int | None = None):
        self.cfg = cfg
        self.n_epochs = cfg.n_epochs if n_epochs is None else int(n_epochs)
        if self.n_epochs < 1:
            raise ValueError("campaign needs at least one epoch")
        self.spoof: SpoofProfile | None = cfg.spoof.build()
        ch = cfg.channel
        self.clock_params = ch.clock
        init = ClockState(cfg.clock.initial_bias, cfg.clock.initial_drift, cfg.start_time)
        bias, drift = simulate_clock(
            self.n_epochs, cfg.epoch_interval, ch.clock,
            np.random.default_rng(np.random.SeedSequence([cfg.seed, CLOCK_KEY])), init,
        )
        self.clock = [ClockState(float(b), float(d), self.epoch_time(k))
                      for k, (b, d) in enumerate(zip(bias, drift))]
        self.e6_bias = ch.bgd + ch.hw_offset + ch.hw_residual
        self.n_chips = int(round(cfg.signal.recs_length * cfg.signal.chip_rate))

    def epoch_time(self, k: int) -> float:
        return self.cfg.start_time + k * self.cfg.epoch_interval

    def recs(self, k: int) -> CodeSequence:
        s = self.cfg.signal
        return random_code(self.n_chips, s.chip_rate, epoch_seed(self.cfg.seed, k, STREAM_RECS),
                           epoch=self.epoch_time(k))

    def bogus_code(self, k: int) -> CodeSequence:
        s = self.cfg.signal
        return random_code(self.n_chips, s.chip_rate, epoch_seed(self.cfg.seed, k, STREAM_BOGUS))

    def signal(self, k: int) -> SignalParams:
        s = self.cfg.signal
        return SignalParams(s.carrier_offset, self.recs(k), s.recs_length, s.amplitude,
                            s.carrier_freq)

    def capture_state(self, k: int) -> tuple[CaptureState, float]:
        """Capture set-up of epoch k and the differential ionosphere drawn for it."""
        cfg, s = self.cfg, self.cfg.signal
        t_k = self.epoch_time(k)
        clock = self.clock[k]
        iono = sample_iono_error(cfg.channel.iono, epoch_rng(cfg.seed, k, STREAM_IONO))
        iono_total = cfg.channel.iono.known + iono
        # Arrival of the RECS start in receiver time (fixed point; one pass is plenty).
        arrival = t_k + (los_range(t_k, cfg.dynamics) / SPEED_OF_LIGHT + clock.bias)
        arrival = t_k + (los_range(arrival, cfg.dynamics) / SPEED_OF_LIGHT
                         + clock.bias_at(arrival))
        t_start = arrival - s.guard
        duration = s.recs_length + 2 * s.guard
        state = CaptureState(
            signal=self.signal(k), dynamics=cfg.dynamics, channel=cfg.channel, clock=clock,
            t_start=t_start, e6_extra_range=self.e6_bias + iono_total, spoof=self.spoof,
            e1_epoch=t_start + duration / 2,
        )
        return state, iono_total

    def batch(self, k: int) -> SampleBatch:
        state, _ = self.capture_state(k)
        s = self.cfg.signal
        return capture_batch(state, s.recs_length + 2 * s.guard,
                             epoch_seed(self.cfg.seed, k, STREAM_CAPTURE))

    def run_epoch(self, k: int, history: "_History") -> EpochResult:
        cfg = self.cfg
        s, ch, det = cfg.signal, cfg.channel, cfg.detection
        state, iono_total = self.capture_state(k)
        batch = capture_batch(state, s.recs_length + 2 * s.guard,
                              epoch_seed(cfg.seed, k, STREAM_CAPTURE))
        t_e1 = state.e1_epoch
        clock = state.clock
        e1_rng = epoch_rng(cfg.seed, k, STREAM_E1)
        e1_mp = ch.multipath.e1_sigma * e1_rng.standard_normal()
        spoof_e1 = self.spoof.e1_bias(t_e1) if self.spoof is not None else 0.0
        dyn = cfg.dynamics
        m = make_e1_measurement(
            t_e1, float(los_range(t_e1, dyn)), clock, ch, e1_rng,
            range_rate=float(los_range_rate(t_e1, dyn)),
            range_accel=float(los_range_accel(t_e1, dyn)),
            extra_range=e1_mp + spoof_e1,
        )
        pred = handover_e1_to_e6(m, ch, iono_estimate=ch.iono.known)
        recs = state.signal.code
        freq = s.carrier_offset + pred.predicted_doppler
        vec = correlate_vector(batch, recs, det.n_correlators, det.spacing,
                               pred.predicted_offset, s.recs_length, freq,
                               range_rate=pred.range_rate, t_ref=t_e1)
        noise_rng = epoch_rng(cfg.seed, k, STREAM_NOISE)
        nf = noise_floor(batch, self.bogus_code(k), det.noise_hypotheses, noise_rng,
                         t_i=s.recs_length, freq=freq)
        threshold = detection_threshold(nf, det.pfa)
        report = evaluate_vector(vec, threshold, det, epoch=self.epoch_time(k))

        peak = report.peak_magnitude
        cn0_est = 10 * math.log10(max(peak**2 - nf.power, 1e-3 * nf.power)
                                  / (nf.power * s.recs_length))
        power_db = 10 * math.log10(float(np.vdot(batch.samples, batch.samples).real) / len(batch))
        history.push(cn0_est, power_db, clock)

        level = cfg.mitigation.level
        vss_h = vss_x = None
        if level >= 2:
            vss_h = self._vss_handover(batch, recs, pred, self._e1_signals(m, spoof_e1, t_e1),
                                       m.doppler, nf, t_e1)
        if level >= 3:
            vss_x = self._vss_exhaustive(batch, recs, pred, nf, freq)
        inputs = EpochInputs(
            report, nf,
            cn0_history=history.cn0, power_history=history.power,
            clock_states=history.clock, clock_params=self.clock_params,
            vss_handover=vss_h, vss_exhaustive=vss_x,
        )
        verdict = run_level(level, inputs, cfg.mitigation, chip_length=recs.chip_length)

        t_k = self.epoch_time(k)
        h = ACCEL_STEP
        accel = (los_range(t_e1 + h, dyn) - 2 * los_range(t_e1, dyn)
                 + los_range(t_e1 - h, dyn)) / h**2
        sp = self.spoof
        return EpochResult(
            k=k, t=t_k, report=report, vector=vec, noise=nf, verdict=verdict, prediction=pred,
            cn0_estimate=cn0_est, power_db=power_db,
            spoof_delay=float(sp.delay_profile(t_e1)) if sp else math.nan,
            spoof_power=float(sp.power_profile(t_e1)) if sp and sp.e6_enabled else 0.0,
            los_accel=float(accel),
            true_offset=float(state.range_at(t_e1) - pred.predicted_offset),
        )

    def _e1_signals(self, m, spoof_e1: float, t_e1: float) -> list[float]:
        """Pseudoranges of the E1 signals an E1 scan would find at ``t_e1``."""
        true_pr = m.pseudorange - spoof_e1
        sp = self.spoof
        if sp is None or not sp.e1_active(t_e1):
            return [true_pr]
        spoofed = true_pr + float(sp.delay_profile(t_e1))
        return [spoofed] if sp.e1_nulling else [true_pr, spoofed]

    def _vss_handover(self, batch, recs, pred, e1_ranges, e1_doppler, nf, t_e1) -> VssResult:
        half = recs.chip_length / 2
        k = int(math.ceil(self.cfg.vss.window / half))
        period_m = E1_CODE_PERIOD * SPEED_OF_LIGHT
        correction = sum(pred.correction_terms.values())
        # The campaign does not sample E1; the E1 scan result is synthesised
        # from the pseudorange of every E1 signal present.
        peaks = [E1Peak(pr % period_m, e1_doppler, math.nan) for pr in e1_ranges]
        plan = plan_handover(E1_CODE_PERIOD, E1_CODE_PERIOD, self.cfg.signal.recs_length)
        return vss_handover_search(
            peaks, batch, recs, plan, self.cfg.mitigation.overall_pfa,
            window_start=pred.predicted_offset - period_m / 2, correction=correction,
            local_offsets=np.arange(-k, k + 1) * half,
            carrier_offset=self.cfg.signal.carrier_offset, noise=nf, t_ref=t_e1,
        )

    def _vss_exhaustive(self, batch, recs, pred, nf, freq) -> VssResult:
        v = self.cfg.vss
        plan = plan_exhaustive(v.exhaustive_delta_t, recs.chip_length,
                               self.cfg.signal.recs_length, v.doppler_span)
        start = pred.predicted_offset - v.exhaustive_delta_t * SPEED_OF_LIGHT / 2
        return vss_exhaustive_search(
            batch, recs, plan, self.cfg.mitigation.overall_pfa, window_start=start,
            doppler_center=freq, override_guard=v.override_resource_guard, noise=nf,
        )


class _History:
    """Trailing windows feeding the level-2 monitors."""

    def __init__(self, keep: int):
        self.keep = keep
        self.cn0: list[float] = []
        self.power: list[float] = []
        self.clock: list[ClockState] = []

    def push(self, cn0: float, power: float, clock: ClockState) -> None:
        for seq, v in ((self.cn0, cn0), (self.power, power), (self.clock, clock)):
            seq.append(v)
            if len(seq) > self.keep:
                del seq[0]


def run_campaign(cfg: ScenarioConfig, n_epochs: int | None = None,
                 progress: bool = False) -> CampaignResult:
    camp = Campaign(cfg, n_epochs)
    mit = cfg.mitigation
    history = _History(mit.cn0_window + mit.cn0_baseline)
    result = CampaignResult(cfg)
    for k in range(camp.n_epochs):
        try:
            result.epochs.append(camp.run_epoch(k, history))
        except Exception as exc:
            raise RuntimeError(f"epoch {k} (t={camp.epoch_time(k)} s): {exc}") from exc
        if progress and (k + 1) % 1000 == 0:
            log.info("epoch %d/%d", k + 1, camp.n_epochs)
    result.summary = summarize(result.epochs)
    return result


# --- summaries and tables -------------------------------------------------------

def _summary_from_rows(detected, offsets, authentic, spoof_active, spoof_flag, accel) -> CampaignSummary:
    n = len(detected)
    missed = int(sum(not d for d in detected))
    offs = np.asarray([o for o, d in zip(offsets, detected) if d and math.isfinite(o)])
    fails = [not a for a in authentic]
    return CampaignSummary(
        epochs=n,
        missed=missed,
        pd_estimate=1 - missed / n,
        false_alarms=int(sum(f and not s for f, s in zip(fails, spoof_active))),
        spoof_detected_epochs=int(sum((f or g) and s for f, g, s in
                                      zip(fails, spoof_flag, spoof_active))),
        mean_range_offset=float(offs.mean()) if offs.size else math.nan,
        range_offset_p99=float(np.percentile(offs, 99)) if offs.size else math.nan,
        peak_accel_observed=float(np.max(np.abs(accel))) if len(accel) else math.nan,
        auth_failures=int(sum(fails)),
        spoof_epochs=int(sum(spoof_active)),
    )


def summarize(epochs: list[EpochResult]) -> CampaignSummary:
    return _summary_from_rows(
        [e.report.detected for e in epochs],
        [e.report.range_offset for e in epochs],
        [e.verdict.authentic for e in epochs],
        [e.spoof_power > 0 for e in epochs],
        [e.report.spoof_suspected for e in epochs],
        [e.los_accel for e in epochs],
    )


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


DETECTION_FIELDS = ["epoch", "detected", "index", "algorithm", "threshold", "peak_magnitude",
                    "peak_phase", "range_offset", "eq1_literal_offset", "missed",
                    "spoof_suspected", "flank_trigger"]


def emit_tables(result: CampaignResult, selections, out_dir) -> list[Path]:
    """Write the selected tables plus ``summary.json``; returns the paths written."""
    epochs = result.epochs
    if not epochs:
        raise ValueError("no epochs to write")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    sel = set(selections)
    bad = sel - set(TABLES)
    if bad:
        raise ValueError(f"unknown tables {sorted(bad)}")
    if "correlators" in sel:
        p = out / "correlators.csv"
        _write(p, ["epoch", "index", "magnitude", "phase"],
               ((e.t, i + 1, m, ph) for e in epochs
                for i, (m, ph) in enumerate(zip(e.vector.magnitudes, e.vector.phases))))
        written.append(p)
    if "detections" in sel:
        p = out / "detections.csv"
        _write(p, DETECTION_FIELDS,
               ([getattr(e.report, f) for f in DETECTION_FIELDS] for e in epochs))
        written.append(p)
    if "range" in sel:
        p = out / "range.csv"
        _write(p, ["epoch", "scurve_offset", "eq1_literal_offset", "flank_flag",
                   "true_offset", "los_accel"],
               ((e.t, e.report.range_offset, e.report.eq1_literal_offset,
                 e.report.flank_trigger, e.true_offset, e.los_accel) for e in epochs))
        written.append(p)
    if "verdicts" in sel:
        p = out / "verdicts.csv"
        names = [c.name for c in epochs[0].verdict.checks]
        header = ["epoch", "level", "authentic", "alarms", "spoof_active", "spoof_delay",
                  "cn0_estimate", "power_db"]
        for n in names:
            header += [f"{n}_pass", f"{n}_stat", f"{n}_thr"]
        rows = []
        for e in epochs:
            v = e.verdict
            row = [e.t, v.level, v.authentic, ";".join(v.alarms), e.spoof_power > 0,
                   e.spoof_delay, e.cn0_estimate, e.power_db]
            for c in v.checks:
                row += ["" if c.passed is None else c.passed, c.statistic, c.threshold]
            rows.append(row)
        _write(p, header, rows)
        written.append(p)
    summary = result.summary or summarize(epochs)
    p = out / "summary.json"
    p.write_text(json.dumps({"scenario": result.config.name, **summary.to_dict()},
                            indent=2, sort_keys=True) + "\n")
    written.append(p)
    return written


def summary_from_tables(run_dir) -> CampaignSummary:
    """Recompute the campaign summary from ``detections.csv``, ``range.csv``
    and ``verdicts.csv``."""
    d = Path(run_dir)

    def read(name):
        with open(d / name, newline="") as fh:
            return list(csv.DictReader(fh))

    try:
        det, rng, ver = read("detections.csv"), read("range.csv"), read("verdicts.csv")
    except FileNotFoundError as exc:
        raise ValueError(f"{run_dir}: missing table {Path(exc.filename).name}") from None
    if not (len(det) == len(rng) == len(ver)):
        raise ValueError(f"{run_dir}: tables disagree on the epoch count")
    flag = lambda r, k: r[k] == "1"  # noqa: E731
    return _summary_from_rows(
        [flag(r, "detected") for r in det],
        [float(r["range_offset"]) for r in det],
        [flag(r, "authentic") for r in ver],
        [flag(r, "spoof_active") for r in ver],
        [flag(r, "spoof_suspected") for r in det],
        [float(r["los_accel"]) for r in rng],
    )
