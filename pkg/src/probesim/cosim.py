"""Shared simulated-time loop for fabric, heating, sensor, and defense.

Time is integer picoseconds.  The sensor samples every fabric clock cycle
and its zero counter is read out every ``t_detect`` cycles on a fixed global
window grid; the thermal field follows the laser spot with exact
exponential updates; defense events fire when the latch sets and complete
after the configured reconfiguration latency.  Functional fabric activity
is summarized per *epoch*: between defense state changes the stimulus is
periodic, so one period of cycle-accurate simulation yields every
primitive's toggle amplitude at the lock-in frequency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import defense as defense_mod
from .fabric import FabricModel
from .sensor import SensorInstance
from .thermal import LaserSpot, ThermalField


class ScenarioError(Exception):
    """Scenario-level contract violation (bad region, bad stimulus, ...)."""


class Stimulus:
    """Periodic external input program; cycle 0 is the phase reference."""

    period_cycles: int = 1

    def inputs_at(self, cycle: int) -> dict[str, int]:
        raise NotImplementedError


class ResetToggleStimulus(Stimulus):
    """Global reset alternating every half period, plus static inputs.

    This is the profiling stimulus: registers that hold a 1 toggle at the
    lock-in frequency, registers that hold a 0 stay dark.
    """

    def __init__(self, half_period_cycles: int, static: dict[str, int] | None = None):
        if half_period_cycles < 1:
            raise ScenarioError("reset half period must be >= 1 cycle")
        self.half_period_cycles = half_period_cycles
        self.period_cycles = 2 * half_period_cycles
        self.static = dict(static or {})

    def inputs_at(self, cycle: int) -> dict[str, int]:
        inputs = dict(self.static)
        inputs["rst"] = (cycle // self.half_period_cycles) % 2
        return inputs


class ShiftStimulus(Stimulus):
    """Serial pattern fed into a shift register input, repeating."""

    def __init__(self, pattern: str, input_net: str = "sin",
                 static: dict[str, int] | None = None):
        if not pattern or set(pattern) - {"0", "1"}:
            raise ScenarioError(f"bad shift pattern {pattern!r}")
        self.pattern = [int(b) for b in pattern]
        self.period_cycles = len(self.pattern)
        self.input_net = input_net
        self.static = dict(static or {})

    def inputs_at(self, cycle: int) -> dict[str, int]:
        inputs = dict(self.static)
        inputs[self.input_net] = self.pattern[cycle % self.period_cycles]
        return inputs


class IdleStimulus(Stimulus):
    """Nothing toggles."""

    def __init__(self, static: dict[str, int] | None = None):
        self.period_cycles = 1
        self.static = dict(static or {})

    def inputs_at(self, cycle: int) -> dict[str, int]:
        return dict(self.static)


def stimulus_for_target_freq(clock_mhz: float, target_freq_mhz: float,
                             static=None) -> ResetToggleStimulus:
    if target_freq_mhz > clock_mhz / 2.0:
        raise ScenarioError(
            f"target frequency {target_freq_mhz} MHz above clock/2"
        )
    half = round(clock_mhz / (2.0 * target_freq_mhz))
    return ResetToggleStimulus(half, static)


@dataclass
class EpochActivity:
    """Positions and lock-in coefficients of every primitive in one epoch."""

    xs: np.ndarray
    ys: np.ndarray
    coefs: np.ndarray  # complex, normalized so a full 0/1 toggle is 1.0
    names: list[str]

    def signal_at(self, x_um: float, y_um: float, psf_sigma_um: float) -> float:
        if self.xs.size == 0:
            return 0.0
        d2 = (self.xs - x_um) ** 2 + (self.ys - y_um) ** 2
        weights = np.exp(-d2 / (psf_sigma_um ** 2))
        return float(abs(np.dot(weights, self.coefs)))


class CoSimulation:
    """One scenario's simulated timeline."""

    def __init__(self, model: FabricModel, thermal: ThermalField,
                 sensor: SensorInstance, policy: defense_mod.DefensePolicy,
                 stimulus: Stimulus, seed: int, t_detect: int = 255,
                 record_counters: bool = True):
        self.model = model
        self.thermal = thermal
        self.sensor = sensor
        self.policy = policy
        self.stimulus = stimulus
        self.seed = seed
        self.t_detect = t_detect
        self.record_counters = record_counters
        self.cycle_ps = sensor.cycle_ps
        self.window_ps = t_detect * self.cycle_ps
        self.t_ps = 0
        self.windows_done = 0
        self.threshold: float | None = policy.threshold
        ss = np.random.SeedSequence(seed)
        streams = ss.spawn(3)
        self.sensor_rng = np.random.default_rng(streams[0])
        self.image_rng = np.random.default_rng(streams[1])
        self.eop_rng = np.random.default_rng(streams[2])
        # The defense stream also keys on the policy's own seed so one-time
        # randomness can be re-rolled independently of the scenario seed.
        self.defense_rng = np.random.default_rng(
            [seed & 0xFFFFFFFF, policy.rng_seed & 0xFFFFFFFF, 0xDEF]
        )
        self.pending_event: defense_mod.ReconfigEvent | None = None
        self.trigger_time_us: float | None = None
        self.counters_log: list[tuple[int, int, int, int]] = []
        self.defense_log: list[dict] = []
        self._epochs: list[tuple[int, int]] = [(0, 0)]
        self._epoch_id = 0
        self._activity_cache: dict[int, EpochActivity] = {}
        model.set_latch_net(0)
        model.settle(stimulus.inputs_at(0))

    # -- time --------------------------------------------------------------

    @property
    def t_us(self) -> float:
        return self.t_ps / 1e6

    def set_spot(self, spot: LaserSpot | None) -> None:
        self.thermal.set_spot(spot)

    def _pending_completion_ps(self) -> int | None:
        if self.pending_event is None or self.pending_event.applied:
            return None
        return round(self.pending_event.completes_at_us * 1e6)

    def advance_to(self, t_target_ps: int) -> None:
        """Run sensor windows and defense events up to the target time."""
        if t_target_ps < self.t_ps:
            raise ScenarioError("time cannot run backwards")
        while True:
            boundary = t_target_ps
            ev_ps = self._pending_completion_ps()
            if ev_ps is not None and ev_ps <= t_target_ps:
                boundary = max(ev_ps, self.t_ps)
            self._run_windows_until(boundary)
            self._advance_field(boundary)
            self.t_ps = boundary
            # A trigger inside the window batch may schedule a completion
            # that falls within the interval just covered; apply it with its
            # true timestamp before handing time back to the caller.
            ev_ps = self._pending_completion_ps()
            if ev_ps is not None and ev_ps <= self.t_ps:
                self._complete_event()
                continue
            if self.t_ps >= t_target_ps:
                break

    def advance_for(self, duration_ps: int) -> None:
        self.advance_to(self.t_ps + duration_ps)

    def _advance_field(self, t_target_ps: int) -> None:
        dt_us = (t_target_ps - self.t_ps) / 1e6
        if dt_us > 0:
            self.thermal.advance(dt_us)

    # -- sensor window stream ------------------------------------------------

    def _window_delta_ts(self, n: int) -> np.ndarray:
        """Sensor-site temperature at the next n window ends (projected)."""
        first_end = (self.windows_done + 1) * self.window_ps
        ends_us = (first_end + self.window_ps * np.arange(n) - self.t_ps) / 1e6
        site = self.sensor.site
        now = self.thermal.delta_t_at_site(site)
        iy, ix = self.thermal._cell_index(
            (site.x + 0.5) * self.thermal.site_pitch_um,
            (site.y + 0.5) * self.thermal.site_pitch_um,
        )
        steady = float(self.thermal._source[iy, ix]) * self.thermal.tau_us
        return steady + (now - steady) * np.exp(-ends_us / self.thermal.tau_us)

    def _run_windows_until(self, t_ps: int) -> None:
        n = t_ps // self.window_ps - self.windows_done
        if n <= 0:
            return
        delta_ts = self._window_delta_ts(n)
        # Slack is affine in the delay factor; evaluate it exactly per window.
        ambient_slack = self.sensor.slack_ps(1.0)
        factors = 1.0 + self.thermal.alpha_per_k * delta_ts
        shift = (self.sensor.clock_route_ps
                 - self.sensor.data_route_ps
                 - self.sensor.lut_pin_base_ps
                 - self.sensor.tune.lut_select * self.sensor.lut_pin_step_ps)
        slacks = ambient_slack + (factors - 1.0) * shift
        p0 = 1.0 - ndtr(slacks / self.sensor.jitter_sigma_ps)
        if self.record_counters:
            draws = self.sensor_rng.random((n, self.t_detect))
            zeros = draws < p0[:, None]
            counts = zeros.sum(axis=1)
            pulses = np.zeros(n, dtype=int)
            run = np.zeros(n, dtype=int)
            for j in range(self.t_detect):
                run = (run + 1) * zeros[:, j]
                np.maximum(pulses, run, out=pulses)
        else:
            counts = self.sensor_rng.binomial(self.t_detect, p0)
            pulses = None
        if self.threshold is not None and not self.sensor.latched:
            hits = np.flatnonzero(counts >= self.threshold)
            if hits.size:
                k = int(hits[0])
                fire_ps = (self.windows_done + k + 1) * self.window_ps
                self.sensor.latched = True
                self.model.set_latch_net(1)
                self._fire_defense(fire_ps)
        if self.record_counters:
            base = self.windows_done
            latched_from = None
            if self.trigger_time_us is not None:
                latched_from = round(self.trigger_time_us * 1e6)
            for i in range(n):
                end_ps = (base + i + 1) * self.window_ps
                latched = int(latched_from is not None and end_ps >= latched_from)
                self.counters_log.append(
                    (base + i, int(counts[i]), int(pulses[i]), latched)
                )
        self.windows_done += n

    # -- defense ---------------------------------------------------------------

    def _fire_defense(self, fire_ps: int) -> None:
        if self.trigger_time_us is not None:
            return
        self.trigger_time_us = fire_ps / 1e6
        event = defense_mod.on_trigger(
            self.policy, self.model, self.trigger_time_us, self.defense_rng,
            exclude_sites=[self.sensor.site],
        )
        entry = {
            "trigger_time_us": self.trigger_time_us,
            "mode": self.policy.mode,
            "event_complete_us": self.trigger_time_us,
            "placement_diff": "",
            "permutation": "",
        }
        if event is None:
            # Immediate response (none/polymorphic/zeroize or capacity
            # fallback): activity changes right away.
            self._new_epoch(fire_ps)
        else:
            self.pending_event = event
            entry["event_complete_us"] = event.completes_at_us
            self._new_epoch(fire_ps)  # hold state: protected stop toggling
        self.defense_log.append(entry)

    def _complete_event(self) -> None:
        event = self.pending_event
        defense_mod.apply_event(self.model, event)
        if self.policy.move_sensor and event.new_placement:
            # Optionally carry the sensor into the reconfigured region.
            slots = defense_mod.free_ff_slots(self.model,
                                              self.policy.allowed_region)
            if slots:
                pick = slots[int(self.defense_rng.integers(len(slots)))]
                self.sensor.site = pick[0]
        self._new_epoch(round(event.completes_at_us * 1e6))
        if self.defense_log:
            self.defense_log[-1]["placement_diff"] = event.placement_diff()
            if event.permutation is not None:
                self.defense_log[-1]["permutation"] = event.permutation.cycle_notation()
        self.pending_event = None

    # -- epochs and activity ------------------------------------------------

    @property
    def epoch_id(self) -> int:
        return self._epoch_id

    def _new_epoch(self, t_ps: int) -> None:
        self._epoch_id += 1
        self._epochs.append((t_ps, self._epoch_id))

    def invalidate_activity(self) -> None:
        """Force a new epoch after an external change (e.g. input vector)."""
        self._new_epoch(self.t_ps)

    def epoch_segments(self, t0_ps: int, t1_ps: int) -> list[tuple[int, int, int]]:
        """(start, end, epoch_id) cover of the half-open interval [t0, t1)."""
        segs = []
        for i, (start, eid) in enumerate(self._epochs):
            end = (self._epochs[i + 1][0]
                   if i + 1 < len(self._epochs) else t1_ps)
            s, e = max(start, t0_ps), min(end, t1_ps)
            if s < e:
                segs.append((s, e, eid))
        return segs

    def activity(self, epoch_id: int | None = None) -> EpochActivity:
        """Primitive toggle amplitudes for the current epoch."""
        eid = self._epoch_id if epoch_id is None else epoch_id
        cached = self._activity_cache.get(eid)
        if cached is not None:
            return cached
        act = self._simulate_activity()
        self._activity_cache[eid] = act
        return act

    def _simulate_activity(self) -> EpochActivity:
        """One steady periodic stimulus cycle, cycle-accurate.

        Runs two stimulus periods (the first settles the pipeline into its
        periodic orbit) and correlates every primitive's waveform with the
        fundamental of the stimulus period.  Normalization makes an ideal
        0/1 square toggle come out at amplitude 1.
        """
        model, stim = self.model, self.stimulus
        period = stim.period_cycles
        model.set_latch_net(int(self.sensor.latched))
        names, xs, ys = [], [], []
        for name, ff in model.ffs.items():
            names.append(name)
            x, y = model.slot_position_um(ff.site, ff.slot, "ff")
            xs.append(x)
            ys.append(y)
        lut_names = list(model.luts)
        for name in lut_names:
            lut = model.luts[name]
            x, y = model.slot_position_um(lut.site, lut.slot, "lut")
            names.append(name)
            xs.append(x)
            ys.append(y)
        waves = np.zeros((len(names), period))
        for cycle in range(2 * period):
            model.step_clock(stim.inputs_at(cycle))
            if cycle >= period:
                t = cycle - period
                for i, ff_name in enumerate(model.ffs):
                    waves[i, t] = model.state[ff_name]
                for j, lut_name in enumerate(lut_names):
                    out = model.luts[lut_name].output_net
                    waves[len(model.ffs) + j, t] = model.net_values[out]
        if period == 1:
            coefs = np.zeros(len(names), dtype=complex)
        else:
            phases = np.exp(-2j * np.pi * np.arange(period) / period)
            coefs = waves @ phases * math.sin(math.pi / period)
        return EpochActivity(np.array(xs), np.array(ys), coefs, names)

    # -- probing helpers -------------------------------------------------------

    def resolve_probe_net(self, x_um: float, y_um: float,
                          radius_um: float | None = None) -> str | None:
        """Output net of the primitive closest to a probe point, if any."""
        radius = radius_um if radius_um is not None else self.model.site_pitch_um / 2
        best, best_d2 = None, radius * radius
        for ff in self.model.ffs.values():
            px, py = self.model.slot_position_um(ff.site, ff.slot, "ff")
            d2 = (px - x_um) ** 2 + (py - y_um) ** 2
            if d2 <= best_d2:
                best, best_d2 = ff.q, d2
        for lut in self.model.luts.values():
            px, py = self.model.slot_position_um(lut.site, lut.slot, "lut")
            d2 = (px - x_um) ** 2 + (py - y_um) ** 2
            if d2 <= best_d2:
                best, best_d2 = lut.output_net, d2
        return best

    def cycle_trace(self, net: str, n_cycles: int) -> np.ndarray:
        """Net value per cycle for one stimulus replay from phase zero."""
        model = self.model
        model.set_latch_net(int(self.sensor.latched))
        values = np.zeros(n_cycles)
        for cycle in range(n_cycles):
            model.step_clock(self.stimulus.inputs_at(cycle))
            values[cycle] = model.net_values[net]
        return values
