"""Command-line front end.

Three subcommands:

``cearange run``
    Execute a scenario file (or a packaged fixture by name) and write the
    report as JSON or as a CSV bundle.

``cearange catalog``
    Inspect the shipped threat catalog: show records, print score/count
    statistics, or validate a catalog document against the completeness
    gate.

``cearange attack-suite``
    Run the packaged attack demonstrations and print one PASS/FAIL line
    per check.

Exit codes: 0 success, 1 configuration/validation error, 2 numeric
divergence or a failed attack-suite check, 3 I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

from . import attacks, engine, physics, report, risk
from .errors import CeaRangeError, ConfigError, NumericDivergenceError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2
EXIT_SUITE_FAIL = 2
EXIT_IO = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cearange",
        description="Deterministic cyber range for controlled-environment agriculture.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write its report")
    run.add_argument("scenario", help="scenario file path or packaged fixture name (e.g. t055)")
    run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run.add_argument(
        "--format",
        choices=("json", "csv-bundle"),
        default="json",
        help="json: single report file; csv-bundle: directory with report.json + timeline.csv",
    )
    run.add_argument(
        "--out",
        default=None,
        help="output directory (default: $CEARANGE_OUT_DIR or the working directory)",
    )
    run.set_defaults(func=_cmd_run)

    catalog = sub.add_parser("catalog", help="inspect the threat catalog")
    catalog_sub = catalog.add_subparsers(dest="catalog_command", required=True)
    show = catalog_sub.add_parser("show", help="list records, or show one in full")
    show.add_argument("threat_id", nargs="?", default=None)
    show.set_defaults(func=_cmd_catalog_show)
    stats = catalog_sub.add_parser("stats", help="score bands, letter counts, techniques")
    stats.set_defaults(func=_cmd_catalog_stats)
    validate = catalog_sub.add_parser(
        "validate", help="check a catalog against the completeness gate"
    )
    validate.add_argument(
        "--file",
        default=None,
        help="catalog YAML to validate (default: the synthetic complete catalog)",
    )
    validate.set_defaults(func=_cmd_catalog_validate)

    suite = sub.add_parser("attack-suite", help="run packaged attack demonstrations")
    suite.add_argument(
        "target",
        choices=sorted(_SUITE_TARGETS) + ["field", "ml", "federated", "all"],
        help="a single demonstration, or a lane (field / ml / federated / all)",
    )
    suite.set_defaults(func=_cmd_attack_suite)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericDivergenceError as exc:
        print(f"error: numeric divergence: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CeaRangeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


# --------------------------------------------------------------------------
# run
# --------------------------------------------------------------------------


def _resolve_scenario(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    fixture = name if name.endswith(".yaml") else f"{name}.yaml"
    return attacks.fixture_scenario(fixture)


def _cmd_run(args) -> int:
    spec = engine.load_scenario(_resolve_scenario(args.scenario))
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    rep = engine.run_scenario(spec)

    out_dir = Path(args.out or os.environ.get("CEARANGE_OUT_DIR") or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.format == "json":
        out_path = out_dir / f"{rep.scenario_name}.report.json"
        digest = report.write_json_report(rep, out_path)
        print(f"wrote {out_path}")
    else:
        bundle_dir = out_dir / rep.scenario_name
        digest = report.write_csv_bundle(rep, bundle_dir)
        print(f"wrote {bundle_dir / 'report.json'} and {bundle_dir / 'timeline.csv'}")

    print(f"scenario: {rep.scenario_name} (threat: {rep.threat_id or '-'}, seed: {rep.seed})")
    print(f"report digest: {digest}")
    if rep.financials is not None:
        print(
            f"loss fraction: {rep.loss_fraction:.4f}"
            f" / loss: ${rep.financials['loss_usd']:,.2f}"
            f" of ${rep.financials['cycle_value_usd']:,.2f}"
        )
        if rep.financials["loss_range_usd"] is not None:
            lo, hi = rep.financials["loss_range_usd"]
            print(f"loss range: ${lo:,.2f} .. ${hi:,.2f}")
    for event in rep.damage_events:
        print(f"damage: {event['kind']} at {event['t_s'] / 3600.0:.2f} h")
    for event in rep.safety_events:
        print(
            f"safety: {event['kind']} at {event['t_s'] / 3600.0:.2f} h "
            f"({event['level_ppm']:.0f} ppm)"
        )
    return EXIT_OK


# --------------------------------------------------------------------------
# catalog
# --------------------------------------------------------------------------


def _cmd_catalog_show(args) -> int:
    catalog = risk.builtin_catalog()
    if args.threat_id is None:
        for record in catalog.records():
            print(
                f"{record.threat_id}  {record.dread.composite:>2} {record.dread.band:<8} "
                f"{record.stride}  {record.title}"
            )
        return EXIT_OK
    try:
        record = catalog.get(args.threat_id)
    except risk.UnknownThreatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"id:             {record.threat_id}")
    print(f"title:          {record.title}")
    print(f"stride:         {record.stride} ({record.element})")
    print(f"trust boundary: {record.trust_boundary}")
    print(f"techniques:     {', '.join(record.techniques)}")
    print(f"dread:          {record.dread.composite} ({record.dread.band})")
    if record.dread.components is not None:
        names = ", ".join(
            f"{name}={value}"
            for name, value in zip(risk.DREAD_COMPONENTS, record.dread.components)
        )
        print(f"components:     {names}")
    if record.description:
        print(f"description:    {record.description.strip()}")
    return EXIT_OK


def _cmd_catalog_stats(args) -> int:
    catalog = risk.builtin_catalog()
    print(f"records: {len(catalog.records())} (complete: {catalog.complete})")
    print("stride counts: " + ", ".join(f"{k}={v}" for k, v in sorted(catalog.stride_counts().items())))
    print("band counts:   " + ", ".join(f"{k}={v}" for k, v in sorted(catalog.band_counts().items())))
    histogram = catalog.technique_histogram()
    top = sorted(histogram.items(), key=lambda kv: (-kv[1], kv[0]))
    print("techniques:    " + ", ".join(f"{k}={v}" for k, v in top))
    return EXIT_OK


def _cmd_catalog_validate(args) -> int:
    if args.file is not None:
        catalog = risk.load_catalog(args.file)
    else:
        catalog = risk.synthetic_complete_catalog()
    counts = catalog.stride_counts()
    expected = risk.COMPLETE_CATALOG_COUNTS
    total = sum(counts.values())
    for letter in sorted(expected):
        marker = "ok" if counts.get(letter, 0) == expected[letter] else "MISMATCH"
        print(f"{letter}: {counts.get(letter, 0):>3} (gate {expected[letter]:>3})  {marker}")
    print(f"total: {total} (gate {sum(expected.values())})")
    if not catalog.complete:
        print("catalog does not claim completeness; gate not applicable")
        return EXIT_OK
    if counts == dict(expected):
        print("complete catalog: VALID")
        return EXIT_OK
    print("complete catalog: INVALID")
    return EXIT_CONFIG


# --------------------------------------------------------------------------
# attack-suite
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Check:
    name: str
    ok: bool
    detail: str


def _fixture_report(name: str) -> report.SimReport:
    return engine.run_scenario(engine.load_scenario(attacks.fixture_scenario(name)))


def _event_times(rep: report.SimReport, kind: str) -> list[float]:
    return [e["t_s"] for e in rep.damage_events if e["kind"] == kind]


def _suite_t055() -> list[Check]:
    started = time.monotonic()
    spec = engine.load_scenario(attacks.fixture_scenario("t055.yaml"))
    rep = engine.run_scenario(spec)
    elapsed = time.monotonic() - started
    checks = []
    times = {e["kind"]: e["t_s"] for e in rep.safety_events}
    start_ppm = spec.initial.co2_ppm if spec.initial.co2_ppm is not None else spec.zone.ambient_co2_ppm
    for kind, threshold in (("co2-pel", physics.PEL_CO2_PPM), ("co2-idlh", physics.IDLH_CO2_PPM)):
        expected = physics.co2_time_to(threshold, start_ppm, spec.zone)
        got = times.get(kind)
        ok = got is not None and abs(got - expected) <= 0.02 * expected
        checks.append(
            Check(
                f"t055-{kind}",
                ok,
                f"crossed at {got / 3600.0:.3f} h" if got is not None else "never crossed",
            )
        )
    checks.append(Check("t055-runtime", elapsed < 5.0, f"{elapsed:.2f} s"))
    return checks


def _suite_t030() -> list[Check]:
    rep = _fixture_report("t030.yaml")
    total = _event_times(rep, "heat-total-loss")
    ok = bool(total) and 4 * 3600.0 <= total[0] <= 8 * 3600.0
    detail = f"total loss at {total[0] / 3600.0:.2f} h" if total else "no total-loss event"
    return [Check("t030-heat-total-loss", ok, detail)]


def _suite_t041() -> list[Check]:
    rep = _fixture_report("t041.yaml")
    checks = [
        Check(
            "t041-hermaphroditism",
            rep.hermaphroditism,
            "photoperiod violated on 2 consecutive nights"
            if rep.hermaphroditism
            else "no hermaphroditism event",
        )
    ]
    rng = rep.financials["loss_range_usd"]
    ok = rng is not None and 1_485_000.0 <= rng[0] and rng[1] <= 1_567_500.0
    detail = f"${rng[0]:,.0f} .. ${rng[1]:,.0f}" if rng else "no loss range"
    checks.append(Check("t041-loss-range", ok, detail))
    return checks


def _suite_t007() -> list[Check]:
    rep = _fixture_report("t007-co2-spoof.yaml")
    pel = [e for e in rep.safety_events if e["kind"] == "co2-pel"]
    reads = [row.co2_read_ppm for row in rep.timeline]
    interlocks = [e for e in rep.events if e["kind"] == "co2-interlock"]
    checks = [
        Check("t007-pel-crossed", bool(pel), f"{len(pel)} PEL crossing(s)"),
        Check(
            "t007-readings-normal",
            max(reads) < 500.0,
            f"max spoofed reading {max(reads):.0f} ppm",
        ),
        Check("t007-no-interlock", not interlocks, f"{len(interlocks)} interlock trip(s)"),
    ]
    growth_rep = _fixture_report("t007-growth.yaml")
    growth = growth_rep.detection.get("growth")
    ok = bool(growth and growth["divergent"])
    detail = (
        f"max relative gap {growth['max_relative_gap']:.3f}" if growth else "no growth summary"
    )
    checks.append(Check("t007-growth-divergence", ok, detail))
    return checks


def _suite_t064() -> list[Check]:
    rep = _fixture_report("t064.yaml")
    resets = [e for e in rep.events if e["kind"] == "watchdog-reset"]
    onset = _event_times(rep, "heat-onset")
    final_temp = rep.timeline[-1].temp_c
    return [
        Check("t064-watchdog-reset", bool(resets), f"{len(resets)} reset(s)"),
        Check(
            "t064-heat-onset",
            bool(onset) and 3600.0 <= onset[0] <= 3 * 3600.0 + 1800.0,
            f"onset at {onset[0] / 3600.0:.2f} h" if onset else "no onset",
        ),
        Check("t064-recovery", final_temp < 30.0, f"final temp {final_temp:.1f} C"),
    ]


def _suite_t066() -> list[Check]:
    rep = _fixture_report("t066.yaml")
    requests = [e for e in rep.events if e["kind"] == "autonomy-request"]
    denied = [e for e in requests if e["payload"]["outcome"] == "denied"]
    granted = [e for e in requests if e["payload"]["outcome"] == "granted"]
    levels = {row.autonomy_level for row in rep.timeline}
    return [
        Check("t066-denied-without-credential", bool(denied), f"{len(denied)} denied"),
        Check("t066-granted-with-credential", bool(granted), f"{len(granted)} granted"),
        Check("t066-reached-l4", 4 in levels, f"levels seen: {sorted(levels)}"),
        Check(
            "t066-damage-applied",
            rep.loss_fraction > 0.0,
            f"loss fraction {rep.loss_fraction:.3f}",
        ),
    ]


def _suite_humidity() -> list[Check]:
    started = time.monotonic()
    rep = _fixture_report("humidity-88.yaml")
    elapsed = time.monotonic() - started
    onset = _event_times(rep, "pathogen-onset")
    checks = []
    ok = bool(onset) and 48 * 3600.0 <= onset[0] <= 72 * 3600.0
    checks.append(
        Check(
            "humidity-onset-window",
            ok,
            f"onset at {onset[0] / 3600.0:.2f} h" if onset else "no pathogen onset",
        )
    )
    first_exceed = next((row.t_s for row in rep.timeline if row.rh_pct > 85.0), None)
    ok = bool(onset) and first_exceed is not None and abs(
        onset[0] - (first_exceed + 48 * 3600.0)
    ) <= 2 * rep.dt_s
    checks.append(
        Check(
            "humidity-onset-exact",
            ok,
            f"first exceed {first_exceed / 3600.0:.2f} h + 48 h"
            if first_exceed is not None
            else "true RH never exceeded threshold",
        )
    )
    checks.append(Check("humidity-runtime", elapsed < 10.0, f"{elapsed:.2f} s"))
    return checks


_IRRIGATION_WINDOWS_H = {
    "aeroponic": (0.0, 1.0),
    "nft": (2.0, 4.0),
    "rockwool": (6.0, 24.0),
    "coco": (12.0, 48.0),
}


def _suite_irrigation() -> list[Check]:
    started = time.monotonic()
    onsets = {}
    checks = []
    for substrate, (low, high) in _IRRIGATION_WINDOWS_H.items():
        rep = _fixture_report(f"irrigation-{substrate}.yaml")
        onset = _event_times(rep, "drought-onset")
        rel_h = (onset[0] - 2 * 3600.0) / 3600.0 if onset else None
        onsets[substrate] = rel_h
        ok = rel_h is not None and low <= rel_h <= high
        checks.append(
            Check(
                f"irrigation-{substrate}-window",
                ok,
                f"onset {rel_h:.2f} h after shutoff" if rel_h is not None else "no onset",
            )
        )
    order = ["aeroponic", "nft", "rockwool", "coco"]
    values = [onsets[s] for s in order]
    ordered = all(v is not None for v in values) and all(
        a < b for a, b in zip(values, values[1:])
    )
    checks.append(
        Check(
            "irrigation-ordering",
            ordered,
            " < ".join(f"{s}={onsets[s]:.2f}h" if onsets[s] is not None else f"{s}=?" for s in order),
        )
    )
    elapsed = time.monotonic() - started
    checks.append(Check("irrigation-runtime", elapsed < 30.0, f"{elapsed:.2f} s"))
    return checks


def _suite_tuner() -> list[Check]:
    started = time.monotonic()
    result = attacks.run_tuner_poison_pair()
    elapsed = time.monotonic() - started
    return [
        Check(
            "tuner-limiter-off-ratio",
            result.overshoot_ratio_off >= 2.0,
            f"poisoned/clean overshoot {result.overshoot_ratio_off:.2f}x",
        ),
        Check(
            "tuner-limiter-on-ratio",
            result.overshoot_ratio_on <= 1.2,
            f"limited/clean overshoot {result.overshoot_ratio_on:.2f}x",
        ),
        Check(
            "tuner-injection-stealth",
            result.injection_alarms == 0,
            f"{result.injection_alarms} alarm(s) during injection",
        ),
        Check("tuner-runtime", elapsed < 120.0, f"{elapsed:.1f} s"),
    ]


def _suite_drift() -> list[Check]:
    started = time.monotonic()
    slow = attacks.run_drift_poison(drift_enabled=True)
    sudden = attacks.run_drift_poison(drift_enabled=False)
    elapsed = time.monotonic() - started
    return [
        Check(
            "drift-rolling-sees-normal",
            slow.rolling_flagged_fraction <= 0.1,
            f"rolling flags {slow.rolling_flagged_fraction:.0%} of payload",
        ),
        Check(
            "drift-golden-flags-payload",
            slow.golden_flagged_fraction >= 0.9,
            f"golden flags {slow.golden_flagged_fraction:.0%} of payload",
        ),
        Check(
            "drift-divergence-flagged",
            slow.divergence_flagged,
            f"golden divergence {slow.divergence_score:.4f}"
            if slow.divergence_score is not None
            else "no divergence measurement",
        ),
        Check(
            "sudden-flagged-by-both",
            sudden.rolling_flagged_fraction >= 0.9 and sudden.golden_flagged_fraction >= 0.9,
            f"rolling {sudden.rolling_flagged_fraction:.0%}, "
            f"golden {sudden.golden_flagged_fraction:.0%}",
        ),
        Check("drift-runtime", elapsed < 120.0, f"{elapsed:.1f} s"),
    ]


def _suite_schedule() -> list[Check]:
    started = time.monotonic()
    result = attacks.adversarial_schedule_search()
    replay = attacks.evaluate_schedule(result.model, result.schedule, result.seed)
    elapsed = time.monotonic() - started
    return [
        Check("schedule-found", result.found, f"after {result.iterations} iterations"),
        Check(
            "schedule-in-bounds",
            result.schedule.in_bounds(),
            f"temps {result.schedule.temps_c}, rhs {result.schedule.rhs_pct}",
        ),
        Check(
            "schedule-under-threshold",
            result.evaluation.max_score < result.threshold,
            f"max score {result.evaluation.max_score:.6f} < {result.threshold:.6f}",
        ),
        Check(
            "schedule-damage-floor",
            result.evaluation.damage_severity >= result.damage_floor,
            f"severity {result.evaluation.damage_severity:.3f} >= {result.damage_floor}",
        ),
        Check(
            "schedule-replay-identical",
            replay.scores == result.evaluation.scores,
            "replayed scores byte-identical"
            if replay.scores == result.evaluation.scores
            else "replayed scores differ",
        ),
        Check("schedule-runtime", elapsed < 180.0, f"{elapsed:.1f} s"),
    ]


def _suite_reward() -> list[Check]:
    result = attacks.run_reward_poison_pair()
    return [
        Check(
            "reward-energy-improves",
            result.poisoned.energy_kwh < result.clean.energy_kwh,
            f"energy {result.poisoned.energy_kwh:.2f} kWh vs clean {result.clean.energy_kwh:.2f}",
        ),
        Check(
            "reward-pathogen-worsens",
            result.poisoned.pathogen_hours > result.clean.pathogen_hours,
            f"pathogen-risk {result.poisoned.pathogen_hours:.2f} h "
            f"vs clean {result.clean.pathogen_hours:.2f} h",
        ),
    ]


def _suite_federated() -> list[Check]:
    started = time.monotonic()
    experiment = attacks.run_fed_backdoor()
    elapsed = time.monotonic() - started
    checks = []
    for rule in ("krum", "trimmed-mean", "fl-trust"):
        ratio = experiment.ratio(rule)
        checks.append(
            Check(
                f"federated-vs-{rule}",
                ratio >= 5.0,
                f"fed-avg deviation {ratio:.1f}x the {rule} deviation",
            )
        )
    checks.append(Check("federated-runtime", elapsed < 120.0, f"{elapsed:.1f} s"))
    return checks


_SUITE_TARGETS = {
    "T007": _suite_t007,
    "T030": _suite_t030,
    "T041": _suite_t041,
    "T055": _suite_t055,
    "T064": _suite_t064,
    "T066": _suite_t066,
    "humidity": _suite_humidity,
    "irrigation": _suite_irrigation,
    "tuner-poison": _suite_tuner,
    "drift-poison": _suite_drift,
    "adversarial-schedule": _suite_schedule,
    "reward-poison": _suite_reward,
    "fed-backdoor": _suite_federated,
}

_SUITE_LANES = {
    "field": ("T055", "T030", "T041", "T007", "T064", "T066", "humidity", "irrigation"),
    "ml": ("tuner-poison", "drift-poison", "adversarial-schedule", "reward-poison"),
    "federated": ("fed-backdoor",),
}
_SUITE_LANES["all"] = _SUITE_LANES["field"] + _SUITE_LANES["ml"] + _SUITE_LANES["federated"]


def _cmd_attack_suite(args) -> int:
    targets = _SUITE_LANES.get(args.target, (args.target,))
    failures = []
    for target in targets:
        for check in _SUITE_TARGETS[target]():
            marker = "PASS" if check.ok else "FAIL"
            print(f"{marker} {check.name}: {check.detail}")
            if not check.ok:
                failures.append(check.name)
    if failures:
        print(f"{len(failures)} check(s) failed: {', '.join(failures)}", file=sys.stderr)
        return EXIT_SUITE_FAIL
    print("all checks passed")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
