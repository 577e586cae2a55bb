"""Receiver measurement and sampling chain.

Error models: a two-state receiver clock, E1 observables with thermal noise,
a differential ionosphere draw, statistical multipath on the E6 samples and
AWGN set from C/N0.  ``capture_batch`` chains them into one E6 snapshot.

All ranges here are receiver-time quantities: the clock enters as an extra
range ``c * b(t_rx)`` common to E1 and E6, so it cancels in the handover.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .batch import SampleBatch
from .signal_gen import (
    E1_CARRIER_HZ,
    SPEED_OF_LIGHT,
    DynamicsParams,
    SignalParams,
    generate_samples,
    los_range_accel,
    los_range_rate,
    los_range,
    shifted_dynamics,
)

# Receiver clock of the paper's harsh campaign.
PAPER_H0 = 7.115e-24
PAPER_H_MINUS2 = 4.311e-21


# --- clock -------------------------------------------------------------------

@dataclass(frozen=True)
class ClockParams:
    h0: float = PAPER_H0
    h_minus2: float = PAPER_H_MINUS2

    def __post_init__(self):
        if not (self.h0 >= 0 and self.h_minus2 >= 0):
            raise ValueError("Allan parameters must be >= 0")

    @property
    def q_bias(self) -> float:
        return self.h0 / 2

    @property
    def q_drift(self) -> float:
        return 2 * math.pi**2 * self.h_minus2


@dataclass(frozen=True)
class ClockState:
    bias: float = 0.0
    drift: float = 0.0
    epoch: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(x) for x in (self.bias, self.drift, self.epoch)):
            raise ValueError("clock state must be finite")

    def bias_at(self, t):
        """Bias extrapolated linearly from this state to time ``t``."""
        return self.bias + self.drift * (t - self.epoch)


def clock_covariance(dt: float, p: ClockParams) -> np.ndarray:
    qb, qd = p.q_bias, p.q_drift
    return np.array([
        [qb * dt + qd * dt**3 / 3, qd * dt**2 / 2],
        [qd * dt**2 / 2, qd * dt],
    ])


def _clock_factor(dt: float, p: ClockParams) -> np.ndarray:
    cov = clock_covariance(dt, p)
    if not np.any(cov):
        return np.zeros((2, 2))
    # Cholesky by hand so a singular covariance (h0 = 0) still works.
    l11 = math.sqrt(cov[0, 0])
    l21 = cov[1, 0] / l11 if l11 > 0 else 0.0
    l22 = math.sqrt(max(cov[1, 1] - l21**2, 0.0))
    return np.array([[l11, 0.0], [l21, l22]])


def clock_step(state: ClockState, dt: float, p: ClockParams,
               rng: np.random.Generator) -> ClockState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    w = _clock_factor(dt, p) @ rng.standard_normal(2)
    return ClockState(
        state.bias + state.drift * dt + w[0], state.drift + w[1], state.epoch + dt
    )


def simulate_clock(n: int, dt: float, p: ClockParams, rng: np.random.Generator,
                   initial: ClockState | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Biases and drifts of ``n`` states starting at ``initial``.

    Consumes the generator exactly like ``n - 1`` calls of ``clock_step``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    state = initial or ClockState()
    w = rng.standard_normal((n - 1, 2)) @ _clock_factor(dt, p).T
    drift = state.drift + np.concatenate(([0.0], np.cumsum(w[:, 1])))
    steps = drift[:-1] * dt + w[:, 0]
    bias = state.bias + np.concatenate(([0.0], np.cumsum(steps)))
    return bias, drift


def allan_deviation(tau, p: ClockParams):
    """Analytic ADEV of the two-state model: ``sqrt(h0/(2 tau) + 2 pi^2 h_-2 tau / 3)``."""
    tau = np.asarray(tau, dtype=float)
    return np.sqrt(p.h0 / (2 * tau) + 2 * np.pi**2 * p.h_minus2 * tau / 3)


def overlapping_adev(phase: np.ndarray, tau0: float, m: int) -> float:
    """Overlapping Allan deviation at ``tau = m * tau0`` from time-error samples."""
    x = np.asarray(phase, dtype=float)
    if m < 1 or x.size < 2 * m + 1:
        raise ValueError("not enough samples for this averaging factor")
    d2 = x[2 * m:] - 2 * x[m:-m] + x[:-2 * m]
    tau = m * tau0
    return float(np.sqrt(np.mean(d2**2) / (2 * tau**2)))


# --- ionosphere --------------------------------------------------------------

@dataclass(frozen=True)
class IonoModelConfig:
    """Differential E1/E6 ionospheric range error.

    Synthetic mode draws a two-piece Student-t: the right half uses ``scale``,
    the left half ``scale / skew`` (``skew = 1`` is the plain symmetric t).
    Draws are truncated to ``[-truncation, truncation]``.  ``known`` is the
    part of the error the user corrects from a model; only the remainder is
    left in the handover.
    """

    mode: str = "synthetic"
    dof: float = 3.0
    scale: float = 3.0
    skew: float = 2.0
    truncation: float = 60.0
    known: float = 0.0
    table: tuple[float, ...] = ()
    table_path: str | None = None

    def __post_init__(self):
        if self.mode not in ("synthetic", "data"):
            raise ValueError(f"unknown iono mode {self.mode!r}")
        if not (self.dof > 0 and self.scale >= 0 and self.skew > 0 and self.truncation > 0):
            raise ValueError("iono dof, skew and truncation must be positive, scale >= 0")
        if self.mode == "data" and not self.table and self.table_path is not None:
            object.__setattr__(self, "table", tuple(load_iono_table(self.table_path)))


def load_iono_table(path) -> np.ndarray:
    """One value in meters per line; blank lines and ``#`` comments ignored."""
    values = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        try:
            values.append(float(text.split(",")[0]))
        except ValueError:
            raise ValueError(f"{path}:{lineno}: not a number: {text!r}") from None
    return np.asarray(values)


def sample_iono_error(cfg: IonoModelConfig, rng: np.random.Generator, size=None):
    if cfg.mode == "data":
        if not cfg.table:
            raise ValueError("data-driven iono mode needs a nonempty table")
        return rng.choice(np.asarray(cfg.table), size=size)
    if cfg.scale == 0:
        return 0.0 if size is None else np.zeros(size)
    n = 1 if size is None else int(np.prod(size))
    out = np.empty(n)
    todo = np.arange(n)
    while todo.size:
        t = rng.standard_t(cfg.dof, size=todo.size)
        x = np.where(t >= 0, cfg.scale * t, cfg.scale / cfg.skew * t)
        ok = np.abs(x) <= cfg.truncation
        out[todo[ok]] = x[ok]
        todo = todo[~ok]
    return float(out[0]) if size is None else out.reshape(size)


# --- multipath ---------------------------------------------------------------

@dataclass(frozen=True)
class MultipathConfig:
    """Statistical echo model applied to the E6 samples.

    Random mode draws ``num_echoes`` echoes per batch: exponential delay
    (meters) capped at ``max_delay``, Rayleigh amplitude with mean power
    ``base_power * exp(-delay / power_decay)``, uniform phase, all scaled by an
    elevation factor (``amp_low`` at the lowest to ``amp_high`` at the highest
    elevation of the band).  ``echoes`` lists fixed ``(delay_m, amplitude,
    phase_rad)`` triples and replaces the random draw when nonempty.
    """

    num_echoes: int = 2
    mean_delay: float = 20.0
    max_delay: float = 300.0
    base_power: float = 0.01
    power_decay: float = 30.0
    elevation_band: tuple[float, float] = (5.0, 30.0)
    amp_low: float = 1.0
    amp_high: float = 0.4
    e1_sigma: float = 3.0
    echoes: tuple[tuple[float, float, float], ...] = ()

    def __post_init__(self):
        if self.num_echoes < 0:
            raise ValueError("num_echoes must be >= 0")
        if not (self.mean_delay > 0 and self.max_delay > 0 and self.power_decay > 0):
            raise ValueError("multipath delays must be positive")
        if self.base_power < 0 or self.e1_sigma < 0:
            raise ValueError("base_power and e1_sigma must be >= 0")
        lo, hi = self.elevation_band
        if not lo <= hi:
            raise ValueError("elevation band must be ordered")
        for d, a, _ in self.echoes:
            if not d > 0:
                raise ValueError("echo delays must be > 0")
            if a < 0:
                raise ValueError("echo amplitudes must be >= 0")

    def draw(self, rng: np.random.Generator) -> list[tuple[float, float, float]]:
        if self.echoes:
            return [tuple(map(float, e)) for e in self.echoes]
        if self.num_echoes == 0:
            return []
        k = self.num_echoes
        lo, hi = self.elevation_band
        elev = rng.uniform(lo, hi)
        frac = 0.0 if hi == lo else (elev - lo) / (hi - lo)
        elev_gain = self.amp_low + (self.amp_high - self.amp_low) * frac
        delay = np.minimum(rng.exponential(self.mean_delay, k), self.max_delay)
        delay = np.maximum(delay, 1e-3)
        power = self.base_power * np.exp(-delay / self.power_decay)
        amp = np.sqrt(power * rng.exponential(1.0, k)) * elev_gain
        phase = rng.uniform(0, 2 * np.pi, k)
        return list(zip(delay.tolist(), amp.tolist(), phase.tolist()))


def add_delayed(out: np.ndarray, x: np.ndarray, delay: float, gain: complex) -> None:
    """``out += gain * x`` delayed by ``delay`` samples (>= 0), linear interpolation."""
    n = x.size
    k = int(math.floor(delay))
    mu = delay - k
    if k < n:
        out[k:] += (gain * (1 - mu)) * x[:n - k]
    if mu and k + 1 < n:
        out[k + 1:] += (gain * mu) * x[:n - k - 1]


def delay_samples(x: np.ndarray, delay: float) -> np.ndarray:
    """``x`` delayed by ``delay`` samples with linear interpolation, zero-filled."""
    y = np.zeros_like(x)
    add_delayed(y, x, delay, 1.0)
    return y


def apply_multipath(batch: SampleBatch, cfg: MultipathConfig,
                    rng: np.random.Generator) -> SampleBatch:
    """Add delayed, attenuated, rotated copies of the direct-path samples.

    Delays are realised on the sample grid by linear interpolation, which never
    moves energy ahead of the direct path.
    """
    echoes = cfg.draw(rng)
    if not echoes:
        return batch
    x = batch.samples
    out = x.copy()
    for d, a, ph in echoes:
        add_delayed(out, x, d / SPEED_OF_LIGHT * batch.fs, a * np.exp(1j * ph))
    return batch.with_samples(out)


# --- thermal noise -----------------------------------------------------------

def noise_variance(fs: float, cn0_dbhz: float) -> float:
    """Per-sample complex noise variance for a unit-power signal."""
    return fs / 10 ** (cn0_dbhz / 10)


def add_awgn(batch: SampleBatch, cn0: float | None, rng: np.random.Generator) -> SampleBatch:
    """Circular Gaussian noise with variance ``fs / cn0_lin``; ``None``/inf is noiseless."""
    if cn0 is None or math.isinf(cn0):
        return batch
    sigma = math.sqrt(noise_variance(batch.fs, cn0) / 2)
    n = len(batch)
    noise = rng.standard_normal(2 * n).view(np.complex128)
    return batch.with_samples(batch.samples + sigma * noise)


# --- E1 observables ----------------------------------------------------------

@dataclass(frozen=True)
class E1Measurement:
    epoch: float
    pseudorange: float
    carrier_phase: float
    doppler: float
    doppler_rate: float
    cn0: float

    def __post_init__(self):
        if not self.cn0 > 0:
            raise ValueError("cn0 must be positive")


@dataclass(frozen=True)
class ChannelConfig:
    """Receiver error budget.

    ``hw_offset`` and ``bgd`` are E6-only range biases known to the user;
    ``hw_residual`` is the uncalibrated remainder of the inter-front-end bias.
    """

    cn0: float | None = 35.0
    fs: float = 20.46e6
    iono: IonoModelConfig = field(default_factory=IonoModelConfig)
    multipath: MultipathConfig = field(default_factory=MultipathConfig)
    clock: ClockParams = field(default_factory=ClockParams)
    e1_pr_sigma: float = 0.75
    hw_offset: float = 0.0
    bgd: float = 0.0
    hw_residual: float = 0.0
    e1_cn0: float | None = None
    e1_phase_sigma: float = 0.01
    e1_doppler_sigma: float = 0.05

    def __post_init__(self):
        if not self.fs > 0:
            raise ValueError("fs must be positive")
        if self.e1_pr_sigma < 0:
            raise ValueError("e1_pr_sigma must be >= 0")
        if self.cn0 is not None and not self.cn0 > 0:
            raise ValueError("cn0 must be positive")

    @property
    def e1_cn0_dbhz(self) -> float:
        for v in (self.e1_cn0, self.cn0):
            if v is not None and math.isfinite(v):
                return v
        return 50.0


def make_e1_measurement(t_rx: float, true_range: float, clock: ClockState,
                        cfg: ChannelConfig, rng: np.random.Generator, *,
                        range_rate: float = 0.0, range_accel: float = 0.0,
                        extra_range: float = 0.0) -> E1Measurement:
    """E1 observables at receiver time ``t_rx``.

    ``extra_range`` carries non-thermal E1 errors (differential multipath,
    spoofer bias).  Doppler and phase follow range rate and clock drift.
    """
    clock_range = SPEED_OF_LIGHT * clock.bias_at(t_rx)
    z = rng.standard_normal(3)
    pr = true_range + clock_range + extra_range + cfg.e1_pr_sigma * z[0]
    lam = SPEED_OF_LIGHT / E1_CARRIER_HZ
    rate = range_rate + SPEED_OF_LIGHT * clock.drift
    return E1Measurement(
        epoch=t_rx,
        pseudorange=pr,
        carrier_phase=-(true_range + clock_range + extra_range) / lam + cfg.e1_phase_sigma * z[1],
        doppler=-rate / lam + cfg.e1_doppler_sigma * z[2],
        doppler_rate=-range_accel / lam,
        cn0=cfg.e1_cn0_dbhz,
    )


# --- batch capture -----------------------------------------------------------

@dataclass(frozen=True)
class CaptureState:
    """Everything ``capture_batch`` needs for one E6 snapshot.

    ``e6_extra_range`` collects the E6-only delays of the epoch (BGD, hardware
    offset and residual, differential ionosphere).
    """

    signal: SignalParams
    dynamics: DynamicsParams
    channel: ChannelConfig
    clock: ClockState
    t_start: float
    e6_extra_range: float = 0.0
    spoof: object = None
    e1_epoch: float | None = None

    def receiver_dynamics(self, extra_range: float = 0.0) -> DynamicsParams:
        """Range seen in receiver time: LOS + clock bias/drift + ``extra_range``."""
        c = SPEED_OF_LIGHT
        return shifted_dynamics(
            self.dynamics,
            extra_range=c * self.clock.bias + extra_range,
            extra_rate=c * self.clock.drift,
            t_ref=self.clock.epoch,
        )

    def range_at(self, t):
        return los_range(t, self.receiver_dynamics(self.e6_extra_range))

    def range_rate_at(self, t):
        return los_range_rate(t, self.receiver_dynamics())

    def range_accel_at(self, t):
        return los_range_accel(t, self.dynamics)


def _streams(rng, n: int) -> list[np.random.Generator]:
    if isinstance(rng, np.random.SeedSequence):
        return [np.random.default_rng(s) for s in rng.spawn(n)]
    if isinstance(rng, np.random.Generator):
        return rng.spawn(n)
    return [np.random.default_rng(s) for s in np.random.SeedSequence(rng).spawn(n)]


def capture_batch(state: CaptureState, duration: float, rng, *,
                  multipath: bool = True) -> SampleBatch:
    """generate_samples -> apply_multipath -> spoofer -> add_awgn.

    ``rng`` (Generator, SeedSequence or seed) is split into independent
    streams for multipath, spoofer and noise.
    """
    from .spoofer import inject_spoofer

    if duration < state.signal.recs_length:
        raise ValueError("batch duration shorter than the RECS")
    fs = state.channel.fs
    n = int(math.ceil(duration * fs))
    mp_rng, sp_rng, noise_rng = _streams(rng, 3)
    dyn = state.receiver_dynamics(state.e6_extra_range)
    anchor = 0 if state.e1_epoch is None else int(round((state.e1_epoch - state.t_start) * fs))
    samples = generate_samples(state.signal, dyn, state.t_start, fs, n)
    batch = SampleBatch(state.t_start, fs, samples, anchor)
    if multipath:
        batch = apply_multipath(batch, state.channel.multipath, mp_rng)
    if state.spoof is not None:
        batch = inject_spoofer(batch, (state.signal, dyn), state.spoof, sp_rng)
    return add_awgn(batch, state.channel.cn0, noise_rng)
