"""Single-LUT delay sensor: a clock edge races itself into a register.

The data path runs through one calibrated delay element plus one LUT pin;
the clock path runs through a chain of calibrated delay elements.  The
register output is 1 when the data edge beats the clock edge by more than
the sampling jitter, 0 when it loses, and metastable statistics in between.
Local heating slows the uncalibrated (routing and LUT) portions of both
paths; because the data path carries more of them, heating shifts the race
toward zero outputs.  A zero counter over fixed windows plus a sticky latch
turn those statistics into a defense trigger.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .fabric import TAP_MAX, SliceCoord


class TuningError(Exception):
    """No metastable operating point was found."""


def tap_from_code(code: int) -> int:
    """Map a 5-bit delay code to a physical tap.

    The top code (0b11111) addresses the top calibrated tap; wraparound
    applies only to raw tap writes, which tuning never performs.
    """
    if not 0 <= code <= 31:
        raise ValueError(f"delay code {code} outside 5 bits")
    return min(code, TAP_MAX)


def chain_code_bits(chain_len: int) -> int:
    n = int(math.log2(chain_len))
    if 2 ** n != chain_len or chain_len < 1:
        raise ValueError(f"chain length {chain_len} is not a power of two")
    return n + 5


def chain_delay(code: int, chain_len: int, per_tap_ps: float = 78.0,
                base_ps: float = 600.0) -> float:
    """Total delay of a 2^n-element chain for an (n+5)-bit code, in ps.

    The five least significant bits set one element's tap; the n most
    significant bits count elements held at the maximum tap; the remaining
    elements sit at the minimum tap.
    """
    bits = chain_code_bits(chain_len)
    if not 0 <= code < 2 ** bits:
        raise ValueError(f"chain code {code} outside {bits} bits")
    n_max = code >> 5
    fine = tap_from_code(code & 0x1F)
    return chain_len * base_ps + per_tap_ps * (n_max * TAP_MAX + fine)


def decode_chain_taps(code: int, chain_len: int) -> list[int]:
    """Per-element tap settings for a chain code (fine, max..., min...)."""
    bits = chain_code_bits(chain_len)
    if not 0 <= code < 2 ** bits:
        raise ValueError(f"chain code {code} outside {bits} bits")
    n_max = code >> 5
    taps = [tap_from_code(code & 0x1F)]
    taps += [TAP_MAX] * n_max
    taps += [0] * (chain_len - 1 - n_max)
    return taps


@dataclass(frozen=True)
class TuneValue:
    """Sensor operating point: data tap code, clock chain code, LUT pin."""

    data_code: int
    clock_code: int
    lut_select: int

    def __str__(self) -> str:
        return f"data={self.data_code} clock={self.clock_code} select={self.lut_select}"


@dataclass
class SensorReadout:
    """Zero statistics of one detection window."""

    zero_count: int
    max_pulse_len: int
    window: int


@dataclass
class SensorInstance:
    """One delay sensor placed on a slice, with its tuning state.

    Path delays split into a calibrated part (the programmable delay
    elements, immune to temperature) and an uncalibrated part (routing and
    the LUT) that scales with the local delay factor.
    """

    site: SliceCoord = SliceCoord(0, 0)
    clock_mhz: float = 100.0
    chain_len: int = 8
    jitter_sigma_ps: float = 15.0
    tune: TuneValue | None = None
    latched: bool = False
    element_base_ps: float = 600.0
    per_tap_ps: float = 78.0
    lut_pin_base_ps: float = 124.0
    lut_pin_step_ps: float = 9.0
    lut_arity: int = 6
    data_route_ps: float = 3200.0
    clock_route_ps: float = 300.0
    ambient_offset_ps: float = 0.0

    @property
    def clock_code_bits(self) -> int:
        return chain_code_bits(self.chain_len)

    @property
    def cycle_ps(self) -> int:
        return round(1e6 / self.clock_mhz)

    def validate_tune(self, tune: TuneValue) -> TuneValue:
        if not 0 <= tune.data_code <= 31:
            raise ValueError(f"data code {tune.data_code} outside 5 bits")
        if not 0 <= tune.clock_code < 2 ** self.clock_code_bits:
            raise ValueError(
                f"clock code {tune.clock_code} outside {self.clock_code_bits} bits"
            )
        if not 0 <= tune.lut_select < self.lut_arity:
            raise ValueError(f"LUT select {tune.lut_select} outside arity")
        return tune

    def data_arrival_ps(self, tune: TuneValue, factor: float = 1.0) -> float:
        element = self.element_base_ps + tap_from_code(tune.data_code) * self.per_tap_ps
        pin = self.lut_pin_base_ps + tune.lut_select * self.lut_pin_step_ps
        return element + (pin + self.data_route_ps) * factor

    def clock_arrival_ps(self, tune: TuneValue, factor: float = 1.0) -> float:
        chain = chain_delay(tune.clock_code, self.chain_len,
                            self.per_tap_ps, self.element_base_ps)
        return chain + self.clock_route_ps * factor

    def slack_ps(self, factor: float = 1.0, tune: TuneValue | None = None) -> float:
        """Clock-path arrival minus data-path arrival; positive samples 1."""
        t = tune or self.tune
        if t is None:
            raise TuningError("sensor has no tune value")
        return (self.clock_arrival_ps(t, factor)
                - self.data_arrival_ps(t, factor)
                + self.ambient_offset_ps)

    def one_probability(self, factor: float = 1.0,
                        tune: TuneValue | None = None) -> float:
        if self.jitter_sigma_ps <= 0:
            return 1.0 if self.slack_ps(factor, tune) >= 0 else 0.0
        return float(ndtr(self.slack_ps(factor, tune) / self.jitter_sigma_ps))

    def zero_probability(self, factor: float = 1.0,
                         tune: TuneValue | None = None) -> float:
        return 1.0 - self.one_probability(factor, tune)

    def reset_latch(self) -> None:
        self.latched = False


def sample(sensor: SensorInstance, thermal, rng) -> int:
    """Draw one sensor output bit under the current thermal state."""
    dt = thermal.delta_t_at_site(sensor.site)
    p1 = sensor.one_probability(thermal.delay_factor(dt))
    return int(rng.random() < p1)


def read_counters(sensor: SensorInstance, thermal, rng,
                  window: int = 255) -> SensorReadout:
    """Zero count and longest zero pulse over `window` consecutive samples."""
    dt = thermal.delta_t_at_site(sensor.site)
    p0 = sensor.zero_probability(thermal.delay_factor(dt))
    zeros = rng.random(window) < p0
    return SensorReadout(
        zero_count=int(zeros.sum()),
        max_pulse_len=longest_run(zeros),
        window=window,
    )


def longest_run(zeros: np.ndarray) -> int:
    """Length of the longest run of True values in a boolean vector."""
    if not zeros.any():
        return 0
    padded = np.concatenate(([False], zeros, [False]))
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return int((edges[1::2] - edges[0::2]).max())


def counters_from_stream(bits: np.ndarray, window: int) -> SensorReadout:
    """Readout over an explicit sample stream (1s and 0s) of length window."""
    bits = np.asarray(bits)
    if bits.size != window:
        raise ValueError(f"stream has {bits.size} samples, window is {window}")
    zeros = bits == 0
    return SensorReadout(int(zeros.sum()), longest_run(zeros), window)


def update_latch(sensor: SensorInstance, readout: SensorReadout,
                 threshold: float) -> bool:
    """Sticky trigger: latch once the window zero count reaches threshold."""
    if not 0 < threshold <= readout.window:
        raise ValueError(f"threshold {threshold} outside (0, {readout.window}]")
    if readout.zero_count >= threshold:
        sensor.latched = True
    return sensor.latched


def window_zero_counts(p0: float, n_windows: int, window: int, rng) -> np.ndarray:
    """Per-window zero counts for a constant zero probability.

    Fast path for tuning and idle monitoring: with a static thermal state,
    samples are i.i.d. Bernoulli, so per-window counts are exactly
    binomial.  read_counters() remains the sample-level reference.
    """
    return rng.binomial(window, min(max(p0, 0.0), 1.0), size=n_windows)


# -- tuning -----------------------------------------------------------------

METASTABLE_BAND = (1e-4, 0.5)
PROBE_BATCH = 10_000


def _tune_rng(seed: int, tune: TuneValue, purpose: int):
    """Deterministic per-tune stream so search and oracle agree exactly."""
    return np.random.default_rng(
        [seed & 0xFFFFFFFF, tune.data_code, tune.clock_code, tune.lut_select, purpose]
    )


def probe_zero_rate(sensor: SensorInstance, tune: TuneValue, seed: int,
                    batch: int = PROBE_BATCH) -> float:
    """Observed zero rate of a probe batch at ambient conditions."""
    p0 = sensor.zero_probability(1.0, tune)
    rng = _tune_rng(seed, tune, 0)
    return float(rng.binomial(batch, p0)) / batch


def max_zero_count(sensor: SensorInstance, tune: TuneValue, seed: int,
                   t_sense_ms: float, window: int = 255) -> int:
    """Largest window zero count over the characterization interval."""
    cycles = int(t_sense_ms * 1e3 * sensor.clock_mhz)
    n_windows = max(cycles // window, 1)
    p0 = sensor.zero_probability(1.0, tune)
    rng = _tune_rng(seed, tune, 1)
    return int(window_zero_counts(p0, n_windows, window, rng).max())


def is_metastable(rate: float, band=METASTABLE_BAND) -> bool:
    return band[0] <= rate <= band[1]


def tune(sensor: SensorInstance, seed: int, t_sense_ms: float = 100.0,
         window: int = 255, probe_batch: int = PROBE_BATCH,
         band=METASTABLE_BAND) -> TuneValue:
    """Find the operating point with the lowest maximum zero count.

    For every data code, binary-search the clock code for the metastable
    boundary with LUT select 0, then try the adjacent clock codes with every
    LUT select.  Candidates whose probe zero rate falls inside the
    metastability band are scored by their maximum window zero count over
    the characterization interval; ties break toward the smallest clock
    code.  Raises TuningError when no candidate is metastable.
    """
    clock_max = 2 ** sensor.clock_code_bits - 1
    best: tuple | None = None
    for data_code in range(32):
        lo, hi = 0, clock_max
        while lo < hi:
            mid = (lo + hi) // 2
            cand = TuneValue(data_code, mid, 0)
            rate = probe_zero_rate(sensor, cand, seed, probe_batch)
            if rate > 0.0:
                lo = mid + 1  # zeros seen: clock still too early
            else:
                hi = mid
        for clock_code in range(max(lo - 2, 0), min(lo + 2, clock_max + 1)):
            for select in range(sensor.lut_arity):
                cand = TuneValue(data_code, clock_code, select)
                rate = probe_zero_rate(sensor, cand, seed, probe_batch)
                if not is_metastable(rate, band):
                    continue
                score = max_zero_count(sensor, cand, seed, t_sense_ms, window)
                key = (score, cand.clock_code, cand.data_code, cand.lut_select)
                if best is None or key < best[0]:
                    best = (key, cand)
    if best is None:
        raise TuningError(
            "no metastable tune found; check path delay parameters"
        )
    sensor.tune = best[1]
    return best[1]


# -- ring-oscillator characterization ---------------------------------------

def ro_calibration(code: int, chain_len: int = 8, stages: int = 11,
                   stage_delay_ps: float = 350.0, per_tap_ps: float = 78.0,
                   base_ps: float = 600.0) -> float:
    """Ring-oscillator period in ns for one chain code.

    The oscillator loops `stages` inverting stages in series with the delay
    chain; the period is twice the loop delay.
    """
    loop_ps = stages * stage_delay_ps + chain_delay(code, chain_len,
                                                    per_tap_ps, base_ps)
    return 2.0 * loop_ps / 1000.0


def ro_calibration_series(chain_len: int = 8, stages: int = 11,
                          stage_delay_ps: float = 350.0,
                          per_tap_ps: float = 78.0,
                          base_ps: float = 600.0) -> list[tuple[int, float]]:
    """(code, period_ns) sweep over the full chain code space, for plotting."""
    codes = range(2 ** chain_code_bits(chain_len))
    return [(c, ro_calibration(c, chain_len, stages, stage_delay_ps,
                               per_tap_ps, base_ps)) for c in codes]
