"""User-side detection: E1 to E6 handover, thresholds, peak pickers, s-curve
range estimation and the two vestigial signal searches.

Detection statistic: one coherent dwell, envelope test.  Under noise only
``|c|^2`` is exponential with mean ``P`` (the noise-floor power), so the
threshold for single-event false alarm ``pfa`` is ``sqrt(-P ln pfa)`` and the
detection probability is a first-order Marcum Q.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from .batch import SampleBatch
from .channel import ChannelConfig, E1Measurement
from .correlator import (
    CorrelatorVector,
    NoiseFloor,
    correlate_grid,
    correlate_lags,
    correlate_periodic,
    noise_floor,
)
from .signal_gen import (
    E1_CARRIER_HZ,
    E1_CODE_PERIOD,
    E6_CARRIER_HZ,
    SPEED_OF_LIGHT,
    CodeSequence,
    random_code,
)

# Desk-scale limit on the exhaustive search window.
RESOURCE_GUARD_DELTA_T = 0.05


def _ceil(x: float) -> int:
    """Ceiling that ignores floating-point dust just above an integer."""
    return int(math.ceil(x * (1 - 1e-12)))


def _check_pfa(pfa: float) -> None:
    if not 0 < pfa < 1:
        raise ValueError("pfa must lie in (0, 1)")


# --- handover ----------------------------------------------------------------

@dataclass(frozen=True)
class HandoverPrediction:
    t_tx: float
    predicted_offset: float
    predicted_doppler: float
    correction_terms: dict = field(default_factory=dict)
    range_rate: float = 0.0
    epoch: float = 0.0


def handover_e1_to_e6(m: E1Measurement, cfg: ChannelConfig,
                      iono_estimate: float = 0.0) -> HandoverPrediction:
    """Predict the E6 code offset (meters) and Doppler from one E1 epoch.

    The offset is the E1 pseudorange plus the E6-only delays the user knows:
    BGD, the calibrated inter-front-end offset and the modelled ionosphere.
    """
    values = (m.epoch, m.pseudorange, m.doppler, cfg.bgd, cfg.hw_offset, iono_estimate)
    if not all(math.isfinite(v) for v in values):
        raise ValueError("handover inputs must be finite")
    terms = {"bgd": cfg.bgd, "hw_offset": cfg.hw_offset, "iono": iono_estimate}
    return HandoverPrediction(
        t_tx=m.epoch - m.pseudorange / SPEED_OF_LIGHT,
        predicted_offset=m.pseudorange + sum(terms.values()),
        predicted_doppler=m.doppler * E6_CARRIER_HZ / E1_CARRIER_HZ,
        correction_terms=terms,
        range_rate=-m.doppler * SPEED_OF_LIGHT / E1_CARRIER_HZ,
        epoch=m.epoch,
    )


# --- detection theory ----------------------------------------------------------

def detection_threshold(nf: NoiseFloor, pfa: float) -> float:
    _check_pfa(pfa)
    return math.sqrt(-nf.power * math.log(pfa))


def prob_detection(cn0: float, t_i: float, pfa: float) -> float:
    """``Q1(sqrt(2 cn0 T_I), sqrt(-2 ln pfa))`` via the noncentral chi-square tail."""
    _check_pfa(pfa)
    snr = 10 ** (cn0 / 10) * t_i
    return float(stats.ncx2.sf(-2 * math.log(pfa), 2, 2 * snr))


def required_cn0(pfa: float, pd: float, t_i: float) -> float:
    """C/N0 (dB-Hz) at which ``prob_detection`` reaches ``pd``."""
    if not 0 < pfa < pd < 1:
        raise ValueError("need 0 < pfa < pd < 1")
    if not t_i > 0:
        raise ValueError("t_i must be positive")

    def gap(cn0):
        return prob_detection(cn0, t_i, pfa) - pd

    lo, hi = -20.0, 120.0
    if gap(lo) > 0 or gap(hi) < 0:
        raise RuntimeError("required_cn0: root not bracketed")
    root, info = optimize.brentq(gap, lo, hi, xtol=1e-4, full_output=True)
    if not info.converged:
        raise RuntimeError("required_cn0 did not converge")
    return float(root)


def single_event_pfa(overall_pfa: float, n: float) -> float:
    """``1 - (1 - P)^(1/n)`` evaluated without cancellation."""
    _check_pfa(overall_pfa)
    if n < 1:
        raise ValueError("n must be >= 1")
    if n == 1:
        return overall_pfa
    return -math.expm1(math.log1p(-overall_pfa) / n)


def overall_pfa(single_pfa: float, n: float) -> float:
    _check_pfa(single_pfa)
    return -math.expm1(n * math.log1p(-single_pfa))


# --- search planning -----------------------------------------------------------

@dataclass(frozen=True)
class SearchPlan:
    delta_t: float
    n_code_offsets: int
    n_doppler_bins: int
    doppler_bin_width: float
    mode: str
    t_i: float = 0.0
    e1_period: float = E1_CODE_PERIOD
    chip_len: float = 0.0

    def __post_init__(self):
        if self.mode not in ("exhaustive", "handover"):
            raise ValueError(f"unknown search mode {self.mode!r}")

    @property
    def n_total(self) -> int:
        return self.n_code_offsets * self.n_doppler_bins


def plan_exhaustive(delta_t: float, chip_len: float, t_i: float,
                    doppler_span: float) -> SearchPlan:
    """Half-chip code steps over ``delta_t`` times ``1/(2 t_i)`` Doppler bins."""
    if not (delta_t > 0 and chip_len > 0 and t_i > 0 and doppler_span >= 0):
        raise ValueError("plan parameters must be positive")
    width = 1 / (2 * t_i)
    return SearchPlan(
        delta_t=delta_t,
        n_code_offsets=_ceil(2 * delta_t / (chip_len / SPEED_OF_LIGHT)),
        n_doppler_bins=max(1, _ceil(2 * doppler_span / width)),
        doppler_bin_width=width,
        mode="exhaustive",
        t_i=t_i,
        chip_len=chip_len,
    )


def plan_handover(delta_t: float, e1_period: float = E1_CODE_PERIOD,
                  t_i: float = 0.0) -> SearchPlan:
    """One hypothesis per E1 code period in ``delta_t``; Doppler comes from E1."""
    if not (delta_t > 0 and e1_period > 0):
        raise ValueError("plan parameters must be positive")
    return SearchPlan(
        delta_t=delta_t,
        n_code_offsets=_ceil(delta_t / e1_period),
        n_doppler_bins=1,
        doppler_bin_width=1 / (2 * t_i) if t_i > 0 else 0.0,
        mode="handover",
        t_i=t_i,
        e1_period=e1_period,
    )


# --- peak pickers --------------------------------------------------------------

def detect_max(c: CorrelatorVector, threshold: float) -> int | None:
    """1-based index of the strongest correlator if it reaches ``threshold``."""
    mags = c.magnitudes
    i = int(np.argmax(mags))
    return i + 1 if mags[i] >= threshold else None


def detect_early(c: CorrelatorVector, threshold: float, n: int) -> int | None:
    """Earliest admissible peak (1-based), favouring the first signal.

    Scans punctual positions early to late, climbs to the local maximum of
    the first one above ``threshold``, then steps later while the early/late
    imbalance ``D_i = | |c_{i+n}| - |c_{i-n}| |`` keeps decreasing.  A
    position is admissible when ``|c_i|`` reaches the threshold and exceeds
    both ``|c_{i-n}|`` and ``|c_{i+n}|``.
    """
    mags = c.magnitudes
    size = mags.size
    if n < 1 or size < 2 * n + 1:
        raise ValueError("detect_early needs N >= 2n + 1 and n >= 1")
    m = np.concatenate(([np.nan], mags))  # 1-based view
    lo, hi = n + 1, size - n

    def admissible(i):
        return lo <= i <= hi and m[i] >= threshold and m[i] > m[i + n] and m[i] > m[i - n]

    def imbalance(i):
        return abs(m[i + n] - m[i - n])

    first = next((i for i in range(lo, hi + 1) if m[i] >= threshold), None)
    if first is None:
        return None
    i = first
    while i < hi and m[i + n] > m[i]:
        i += 1
    while i <= hi and not admissible(i):
        i += 1
    if i > hi:
        return None
    while admissible(i + 1) and imbalance(i + 1) < imbalance(i):
        i += 1
    return i


# --- s-curve -------------------------------------------------------------------

class ScurveError(ValueError):
    """The three correlators do not define a peak."""


def scurve_root(c_e: float, c_p: float, c_l: float, spacing: float) -> float:
    """Peak offset from the punctual correlator by two-line intersection.

    The slope comes from the punctual and the weaker outer correlator, which
    sit on the same flank; a line of opposite slope passes through the
    stronger outer one.  Positive results point toward the stronger side.
    """
    c_max, c_min = max(c_e, c_l), min(c_e, c_l)
    if not c_p > c_min:
        raise ScurveError("punctual correlator must exceed the weaker outer one")
    dtau = spacing * (c_max - c_min) / (2 * (c_p - c_min))
    return dtau if c_l >= c_e else -dtau


def scurve_eq1_literal(c_e: float, c_p: float, c_l: float, spacing: float) -> float:
    """The printed closed form ``(c_max - c_min)/(c_p - c_min) * spacing``."""
    return 2 * scurve_root(c_e, c_p, c_l, spacing)


# --- per-epoch report ----------------------------------------------------------

@dataclass(frozen=True)
class DetectionConfig:
    pfa: float = 1e-7
    n_correlators: int = 11
    spacing: float = 15.0
    early_late_gap: int = 2
    algorithm: str = "early"
    noise_hypotheses: int = 64
    chip_length: float = SPEED_OF_LIGHT / 5.115e6

    def __post_init__(self):
        _check_pfa(self.pfa)
        if self.early_late_gap < 1:
            raise ValueError("early_late_gap must be >= 1")
        if self.n_correlators < 2 * self.early_late_gap + 1:
            raise ValueError("n_correlators must be >= 2 * early_late_gap + 1")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        if self.algorithm not in ("maximum", "early"):
            raise ValueError("algorithm must be 'maximum' or 'early'")
        if self.noise_hypotheses < 8:
            raise ValueError("noise_hypotheses must be >= 8")


@dataclass(frozen=True)
class DetectionReport:
    epoch: float
    detected: bool
    index: int | None
    algorithm: str
    threshold: float
    peak_magnitude: float
    peak_phase: float
    range_offset: float
    eq1_literal_offset: float = math.nan
    missed: bool = False
    spoof_suspected: bool = False
    flank_trigger: bool = False

    def __post_init__(self):
        if self.detected and not self.peak_magnitude >= self.threshold:
            raise ValueError("a detection must reach the threshold")


def _other_peak(mags: np.ndarray, chosen: int, threshold: float, min_sep: int) -> bool:
    """Is there another local maximum above threshold ``min_sep`` or more elements away?"""
    for j in range(mags.size):
        if abs(j - chosen) < min_sep or mags[j] < threshold:
            continue
        left = mags[j - 1] if j > 0 else -np.inf
        right = mags[j + 1] if j + 1 < mags.size else -np.inf
        if mags[j] >= left and mags[j] >= right:
            return True
    return False


def evaluate_vector(c: CorrelatorVector, threshold: float, cfg: DetectionConfig,
                    epoch: float = 0.0) -> DetectionReport:
    """Pick a peak, estimate the range offset and raise the per-epoch flags.

    ``range_offset`` is the s-curve peak position relative to the predicted
    offset the vector was centred on.
    """
    n = cfg.early_late_gap
    if cfg.algorithm == "maximum":
        idx = detect_max(c, threshold)
    else:
        idx = detect_early(c, threshold, n)
    mags = c.magnitudes
    if idx is None:
        return DetectionReport(epoch, False, None, cfg.algorithm, threshold,
                               float(mags.max()), math.nan, math.nan, missed=True)
    k = idx - 1
    offset = eq1 = math.nan
    flank = False
    if n <= k < mags.size - n:
        try:
            root = scurve_root(mags[k - n], mags[k], mags[k + n], n * c.spacing)
            offset = c.position(idx) + root
            eq1 = c.position(idx) + 2 * root
            flank = abs(root) > c.spacing
        except ScurveError:
            flank = True
    else:
        # The maximum picker may settle on an edge element; report it as is.
        offset = eq1 = c.position(idx)
        flank = True
    chip_elems = max(1, int(math.ceil(cfg.chip_length / c.spacing)))
    strongest = int(np.argmax(mags))
    spoof = (abs(strongest - k) * c.spacing > cfg.chip_length / 2
             or _other_peak(mags, k, threshold, chip_elems))
    return DetectionReport(
        epoch, True, idx, cfg.algorithm, threshold, float(mags[k]),
        float(np.angle(c.values[k])), float(offset), float(eq1),
        missed=False, spoof_suspected=bool(spoof), flank_trigger=bool(flank),
    )


# --- vestigial signal search ---------------------------------------------------

@dataclass(frozen=True)
class E1Peak:
    offset: float
    doppler: float
    magnitude: float


@dataclass(frozen=True)
class VssDetection:
    offset: float
    doppler: float
    magnitude: float


@dataclass(frozen=True)
class VssResult:
    detections: tuple[VssDetection, ...]
    threshold: float
    inauthentic_e1: tuple[E1Peak, ...] = ()

    @property
    def earliest_index(self) -> int | None:
        if not self.detections:
            return None
        return int(np.argmin([d.offset for d in self.detections]))

    @property
    def spoof_declared(self) -> bool:
        return len(self.detections) >= 2

    @property
    def authentic(self) -> VssDetection | None:
        i = self.earliest_index
        return None if i is None else self.detections[i]


def _parabolic(y_m: float, y_0: float, y_p: float) -> float:
    """Vertex position in steps relative to the middle sample."""
    den = y_m - 2 * y_0 + y_p
    if den >= 0:
        return 0.0
    return float(np.clip(0.5 * (y_m - y_p) / den, -0.5, 0.5))


def _cluster(cands: list[tuple[float, float, float]], min_sep: float) -> list[tuple]:
    """Greedy strongest-first merge of candidates closer than ``min_sep`` meters."""
    kept: list[tuple] = []
    for cand in sorted(cands, key=lambda x: -x[2]):
        if all(abs(cand[0] - k[0]) >= min_sep for k in kept):
            kept.append(cand)
    return sorted(kept, key=lambda x: x[0])


def _local_maxima(mag: np.ndarray, threshold: float, circular: bool = False) -> np.ndarray:
    """Indices along the last axis that are >= both neighbours and >= threshold.

    For 2-D input the neighbours in the first axis (Doppler) are checked too.
    """
    if circular:
        left, right = np.roll(mag, 1, axis=-1), np.roll(mag, -1, axis=-1)
    else:
        pad = np.full(mag.shape[:-1] + (1,), -np.inf)
        left = np.concatenate((pad, mag[..., :-1]), axis=-1)
        right = np.concatenate((mag[..., 1:], pad), axis=-1)
    ok = (mag >= threshold) & (mag >= left) & (mag >= right)
    if mag.ndim == 2 and mag.shape[0] > 1:
        pad = np.full((1, mag.shape[1]), -np.inf)
        up = np.concatenate((pad, mag[:-1]), axis=0)
        down = np.concatenate((mag[1:], pad), axis=0)
        ok &= (mag >= up) & (mag >= down)
    return np.argwhere(ok)


def _robust_noise_power(power: np.ndarray) -> float:
    """Mean of exponential noise cells from their median (peaks barely move it)."""
    return float(np.median(power) / math.log(2))


def vss_e1_scan(e1_batch: SampleBatch, e1_code: CodeSequence, t_i: float, pfa: float,
                *, doppler_span: float = 500.0, doppler_center: float = 0.0,
                noise: NoiseFloor | None = None) -> list[E1Peak]:
    """Full delay-Doppler search over one E1 code period.

    Periods within ``t_i`` are folded coherently (a pilot channel is
    assumed).  Returns every local maximum above the single-event threshold,
    merged to one per chip.  Offsets are in meters modulo the code period.
    """
    _check_pfa(pfa)
    n_periods = max(1, int(round(t_i / e1_code.period)))
    if e1_batch.duration + 1e-12 < e1_code.period:
        raise ValueError("batch too short: needs at least one E1 code period")
    n_periods = min(n_periods, int(e1_batch.duration / e1_code.period + 1e-9))
    t_eff = n_periods * e1_code.period
    width = 1 / (2 * t_eff)
    n_half = int(math.ceil(doppler_span / width))
    freqs = doppler_center + width * np.arange(-n_half, n_half + 1)
    corr = correlate_periodic(e1_batch, e1_code, n_periods, freqs)
    power = np.abs(corr) ** 2
    nf = noise.power if noise is not None else _robust_noise_power(power)
    threshold = math.sqrt(-nf * math.log(pfa))
    mag = np.sqrt(power)
    step = SPEED_OF_LIGHT / e1_batch.fs
    period_m = e1_code.period * SPEED_OF_LIGHT
    p = mag.shape[1]
    cands = []
    for m, l in _local_maxima(mag, threshold, circular=True):
        frac = _parabolic(mag[m, (l - 1) % p], mag[m, l], mag[m, (l + 1) % p])
        cands.append(((l + frac) * step % period_m, float(freqs[m]), float(mag[m, l])))
    peaks = _cluster_circular(cands, e1_code.chip_length, period_m)
    return [E1Peak(o, f, a) for o, f, a in peaks]


def _cluster_circular(cands, min_sep: float, period: float) -> list[tuple]:
    kept: list[tuple] = []
    for cand in sorted(cands, key=lambda x: -x[2]):
        def dist(k):
            d = abs(cand[0] - k[0]) % period
            return min(d, period - d)
        if all(dist(k) >= min_sep for k in kept):
            kept.append(cand)
    return sorted(kept, key=lambda x: x[0])


def _default_bogus(code: CodeSequence) -> CodeSequence:
    return random_code(code.length, code.chip_rate, seed=0xB0605)


def vss_handover_search(e1_peaks, e6_batch: SampleBatch, recs: CodeSequence,
                        plan: SearchPlan, pfa: float, *, window_start: float,
                        t_i: float | None = None, correction: float = 0.0,
                        local_offsets=None, carrier_offset: float = 0.0,
                        noise: NoiseFloor | None = None, t_ref: float | None = None,
                        rng: np.random.Generator | None = None) -> VssResult:
    """E6 search seeded by the E1 peaks.

    For each E1 peak at offset ``tau`` (meters, modulo one E1 period) the
    hypotheses are ``tau + correction + k * c * e1_period + local`` inside
    ``[window_start, window_start + c * delta_t)``, at the E1 Doppler scaled
    to E6.  ``local_offsets`` (meters, default a few half chips either side)
    absorbs the E1 offset error.  Offsets refer to receiver time ``t_ref``
    (default: batch start).  ``pfa`` is the overall false-alarm budget.
    """
    if plan.mode != "handover":
        raise ValueError("plan mode must be 'handover'")
    e1_peaks = list(e1_peaks)
    if not e1_peaks:
        raise ValueError("no E1 peaks to hand over")
    t_i = t_i or plan.t_i or recs.length / recs.chip_rate
    half = recs.chip_length / 2
    local = np.arange(-4, 5) * half if local_offsets is None else np.asarray(local_offsets, float)
    n_single = plan.n_total * len(e1_peaks) * local.size
    pfa1 = single_event_pfa(pfa, n_single)
    if noise is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        noise = noise_floor(e6_batch, _default_bogus(recs), 64, rng, t_i=t_i)
    threshold = detection_threshold(noise, pfa1)
    period_m = plan.e1_period * SPEED_OF_LIGHT
    span = plan.delta_t * SPEED_OF_LIGHT
    cands: list[tuple] = []
    orphans: list[E1Peak] = []
    for peak in e1_peaks:
        base = peak.offset + correction
        k0 = math.ceil((window_start - base) / period_m - 1e-9)
        centers = base + period_m * np.arange(k0, k0 + plan.n_code_offsets)
        centers = centers[(centers >= window_start) & (centers < window_start + span)]
        freq = carrier_offset + peak.doppler * E6_CARRIER_HZ / E1_CARRIER_HZ
        rate = -peak.doppler * SPEED_OF_LIGHT / E1_CARRIER_HZ
        found = False
        for center in centers:
            offsets = center + local
            mag = np.abs(correlate_grid(e6_batch, recs, offsets, [freq], t_i,
                                        range_rate=rate, t_ref=t_ref)[:, 0])
            for (l,) in _local_maxima(mag, threshold):
                frac = 0.0
                if 0 < l < mag.size - 1:
                    frac = _parabolic(mag[l - 1], mag[l], mag[l + 1])
                step = (local[1] - local[0]) if local.size > 1 else 0.0
                cands.append((float(offsets[l] + frac * step), freq, float(mag[l])))
                found = True
        if not found:
            orphans.append(peak)
    kept = _cluster(cands, recs.chip_length)
    return VssResult(tuple(VssDetection(*k) for k in kept), threshold, tuple(orphans))


def vss_exhaustive_search(e6_batch: SampleBatch, recs: CodeSequence, plan: SearchPlan,
                          pfa: float, *, window_start: float, t_i: float | None = None,
                          doppler_center: float = 0.0, override_guard: bool = False,
                          noise: NoiseFloor | None = None) -> VssResult:
    """Every half-chip offset in ``[window_start, window_start + c delta_t)``
    times every Doppler bin of the plan, evaluated by FFT correlation."""
    if plan.mode != "exhaustive":
        raise ValueError("plan mode must be 'exhaustive'")
    if plan.delta_t > RESOURCE_GUARD_DELTA_T and not override_guard:
        raise ValueError(
            f"exhaustive search over {plan.delta_t} s exceeds the "
            f"{RESOURCE_GUARD_DELTA_T} s resource guard (override to force)"
        )
    t_i = t_i or plan.t_i
    half_chip_samples = e6_batch.fs / (2 * recs.chip_rate)
    lag_step = int(round(half_chip_samples))
    if lag_step < 1 or abs(lag_step - half_chip_samples) > 1e-6:
        raise ValueError("sample rate must be a whole multiple of twice the chip rate")
    n_bins = plan.n_doppler_bins
    freqs = doppler_center + plan.doppler_bin_width * (np.arange(n_bins) - (n_bins - 1) / 2)
    corr = correlate_lags(e6_batch, recs, window_start, plan.n_code_offsets, freqs,
                          t_i, lag_step)
    power = np.abs(corr.T) ** 2
    nf = noise.power if noise is not None else _robust_noise_power(power)
    threshold = math.sqrt(-nf * math.log(single_event_pfa(pfa, plan.n_total)))
    mag = np.sqrt(power)
    step = lag_step * SPEED_OF_LIGHT / e6_batch.fs
    cands = []
    for m, l in _local_maxima(mag, threshold):
        frac = 0.0
        if 0 < l < mag.shape[1] - 1:
            frac = _parabolic(mag[m, l - 1], mag[m, l], mag[m, l + 1])
        cands.append((window_start + (l + frac) * step, float(freqs[m]), float(mag[m, l])))
    kept = _cluster(cands, recs.chip_length)
    return VssResult(tuple(VssDetection(*k) for k in kept), threshold)
