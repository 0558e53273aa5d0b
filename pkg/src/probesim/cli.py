"""Command-line front end.

Exit codes: 0 success, 2 config/netlist error, 3 tuning failure,
4 defense capacity error, 5 scenario error, 1 unexpected failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness
from .cosim import ScenarioError
from .defense import CapacityError, DefenseError
from .fabric import FabricError
from .harness import ConfigError, load_scenario
from .netlist import NetlistError
from .sensor import TuningError

EXIT_CONFIG = 2
EXIT_TUNING = 3
EXIT_CAPACITY = 4
EXIT_SCENARIO = 5


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="probesim",
        description="Optical-probing attack and delay-sensor defense simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, multi_scenario=False):
        if multi_scenario:
            p.add_argument("--scenario", action="append", required=True,
                           metavar="FILE", help="scenario file (repeatable)")
        else:
            p.add_argument("--scenario", required=True, metavar="FILE",
                           help="scenario file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
        p.add_argument("--out", default=None, metavar="DIR",
                       help="artifact output directory")

    add_common(sub.add_parser("tune", help="tune the sensor and report the result"))
    add_common(sub.add_parser("eofm", help="run the EOFM raster scan"))
    add_common(sub.add_parser("eop", help="run the EOP waveform probe"))
    add_common(sub.add_parser("attack", help="full attack/defense pipeline"))
    add_common(sub.add_parser("stability", help="idle stability endurance run"))
    batch = sub.add_parser("batch", help="run several scenarios")
    add_common(batch, multi_scenario=True)
    batch.add_argument("--jobs", type=int, default=1,
                       help="scenarios to run in parallel")
    return parser


def _cmd_tune(args) -> int:
    scn = load_scenario(args.scenario, args.seed)
    sensor = harness.build_sensor(scn)
    tuned = harness.tune_sensor(scn, sensor)
    threshold = harness.derive_threshold(sensor, scn.seed,
                                         scn.characterize_windows, scn.t_detect)
    print(f"tune: {tuned}")
    print(f"ambient_slack_ps: {sensor.slack_ps(1.0):.3f}")
    print(f"trigger_threshold: {threshold:.0f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "summary.txt", "w") as fh:
            fh.write(f"scenario: {scn.name}\ntune: {tuned}\n"
                     f"trigger_threshold: {threshold:.0f}\n")
        from .sensor import ro_calibration_series
        with open(out / "ro_calibration.csv", "w") as fh:
            fh.write("code,period_ns\n")
            for code, period in ro_calibration_series(
                    sensor.chain_len, per_tap_ps=sensor.per_tap_ps,
                    base_ps=sensor.element_base_ps):
                fh.write(f"{code},{period:.6f}\n")
    return 0


def _cmd_run(args, require_kind=None) -> int:
    scn = load_scenario(args.scenario, args.seed)
    if require_kind and not scn.kind.startswith(require_kind):
        raise ConfigError(
            f"{args.scenario}: {args.command} command needs kind {require_kind}*, "
            f"scenario has {scn.kind}"
        )
    out = Path(args.out) if args.out else None
    result = harness.run(scn, out)
    sys.stdout.write(result.summary.to_text())
    return 0


def _cmd_stability(args) -> int:
    scn = load_scenario(args.scenario, args.seed)
    if scn.kind != "stability":
        raise ConfigError(f"{args.scenario}: stability command needs kind = stability")
    out = Path(args.out) if args.out else None
    result = harness.run(scn, out)
    sys.stdout.write(result.summary.to_text())
    if result.stability.triggered:
        print("stability FAILURE: false-positive trigger at "
              f"{result.stability.false_positive_at_us:.0f} us")
        return EXIT_SCENARIO
    return 0


def _cmd_batch(args) -> int:
    out = Path(args.out) if args.out else Path("runs")
    summaries = harness.run_batch(args.scenario, out, args.jobs, args.seed)
    for s in summaries:
        trig = f"{s.trigger_time_us:.1f}us" if s.trigger_time_us is not None else "-"
        extra = ""
        if s.bits_total:
            extra = f" bits={s.bits_correct}/{s.bits_total}"
        print(f"{s.scenario}: trigger={trig}{extra}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "tune": _cmd_tune,
        "eofm": lambda a: _cmd_run(a, require_kind="eofm"),
        "eop": lambda a: _cmd_run(a, require_kind="eop"),
        "attack": _cmd_run,
        "stability": _cmd_stability,
        "batch": _cmd_batch,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, NetlistError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TuningError as exc:
        print(f"tuning failure: {exc}", file=sys.stderr)
        return EXIT_TUNING
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except DefenseError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ScenarioError, FabricError) as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO


if __name__ == "__main__":
    sys.exit(main())
