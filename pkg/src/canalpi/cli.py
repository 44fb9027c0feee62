"""Scenario orchestration and command-line entry point.

A scenario is a single JSON document: channel, controller, inflow, grid,
perturbation, certificate options and a list of assertions. The pipeline is
steady solve -> discrete equilibrium -> certificate -> closed-loop run ->
analysis -> artifacts, with CI-friendly exit codes:

    0  all assertions pass
    2  parse/config error
    3  regime or boundary-solve failure
    4  certificate infeasible although the scenario expected it valid
    5  assertion failure

Verbs: run <file-or-name> [...], list, describe <name>, certify <file-or-name>.
The output root comes from --out or CANALPI_OUTPUT_ROOT (default ./canalpi_out).
"""

import argparse
import concurrent.futures
import datetime
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__, analysis, pde
from .certifier import certify
from .channel import ChannelConfig, Grid
from .errors import BoundarySolveError, ConfigError, DomainError, RegimeError
from .steady import InflowSignal, solve_steady, steady_residual

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_REGIME = 3
EXIT_CERT = 4
EXIT_ASSERT = 5

_SCENARIO_DIR = os.path.join(os.path.dirname(__file__), "scenarios")


@dataclass
class ScenarioSpec:
    """Parsed scenario document."""

    name: str
    description: str
    channel: ChannelConfig
    controller: dict          # k_p, k_I, variant
    inflow: InflowSignal
    grid_n: int
    h_c: float
    q_ref: float              # reference (initial) inflow for the steady solve
    perturbation: dict
    horizon_transits: float
    sample_every_transits: float
    certificate: dict         # epsilon_rel | epsilon, mu
    outputs: str
    expect: list
    seed: int = 0

    @staticmethod
    def from_dict(d):
        try:
            channel = ChannelConfig.from_dict(d["channel"])
            inflow = InflowSignal.from_dict(d.get("inflow", {"variant": "constant", "q": 1.0}))
            ctrl = dict(d["controller"])
            h_c = float(ctrl["h_c"])
            pert = dict(d.get("perturbation", {"kind": "none"}))
            if pert.get("kind", "none") not in ("none", "height_bump", "velocity_bump"):
                raise ConfigError(f"unknown perturbation kind {pert.get('kind')!r}")
            grid_n = int(d.get("grid_n", 201))
            spec = ScenarioSpec(
                name=d.get("name", "unnamed"),
                description=d.get("description", ""),
                channel=channel,
                controller=ctrl,
                inflow=inflow,
                grid_n=grid_n,
                h_c=h_c,
                q_ref=float(d.get("q_ref", inflow(0.0))),
                perturbation=pert,
                horizon_transits=float(d.get("horizon_transits", 10.0)),
                sample_every_transits=float(d.get("sample_every_transits", 0.25)),
                certificate=dict(d.get("certificate", {})),
                outputs=d.get("outputs", d.get("name", "scenario")),
                expect=list(d.get("expect", [])),
                seed=int(d.get("seed", 0)),
            )
        except KeyError as exc:
            raise ConfigError(f"scenario is missing key {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if spec.horizon_transits <= 0 or spec.sample_every_transits <= 0:
            raise ConfigError("horizon and sampling must be positive")
        if spec.q_ref <= 0:
            raise ConfigError("reference inflow must be positive")
        return spec


def _set_by_path(tree, path, value):
    keys = path.split(".")
    node = tree
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def load_scenario(source, overrides=()):
    """Load a scenario from a file path or a bundled name, applying
    flat dotted key=value overrides."""
    path = source
    if not os.path.exists(path):
        candidate = os.path.join(_SCENARIO_DIR, f"{source}.json")
        if os.path.exists(candidate):
            path = candidate
        else:
            raise ConfigError(f"scenario {source!r} not found (no file, not bundled)")
    try:
        with open(path) as fh:
            tree = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed scenario JSON: {exc}") from exc
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        _set_by_path(tree, key, value)
    return ScenarioSpec.from_dict(tree)


def bundled_scenarios():
    names = sorted(os.path.splitext(f)[0] for f in os.listdir(_SCENARIO_DIR)
                   if f.endswith(".json"))
    out = {}
    for name in names:
        with open(os.path.join(_SCENARIO_DIR, f"{name}.json")) as fh:
            out[name] = json.load(fh).get("description", "")
    return out


@dataclass
class ScenarioResult:
    exit_code: int
    stage: str
    messages: list = field(default_factory=list)
    analysis: dict = field(default_factory=dict)
    assertions: list = field(default_factory=list)


def _build_initial(spec, grid, equilibrium, ctrl, cfg):
    kind = spec.perturbation.get("kind", "none")
    z0 = pde.consistent_z(cfg, ctrl, equilibrium)
    if kind == "none":
        return pde.perturbed_state(equilibrium, z=z0), z0
    amp = float(spec.perturbation["amplitude"])
    center = float(spec.perturbation.get("center", 0.5 * cfg.L))
    width = float(spec.perturbation.get("width", 0.3 * cfg.L))
    shape = spec.perturbation.get("shape", "poly")
    bump = pde.height_bump(grid, amp, center, width, shape=shape)
    if kind == "height_bump":
        return pde.perturbed_state(equilibrium, dH=bump, z=z0), z0
    return pde.perturbed_state(equilibrium, dV=bump, z=z0), z0


def _z_drift(t, z, inflow, transient_periods=5):
    if inflow.variant != "sinusoid":
        return None
    period = 2.0 * np.pi / inflow.omega
    t0 = transient_periods * period
    if t[-1] < t0 + period:
        return None
    mask = t >= t0
    slope = analysis.harmonic_trend(t[mask], z[mask], inflow.omega)
    span = float(t[mask][-1] - t[mask][0])
    scale = float(np.ptp(z[mask]))
    return abs(slope) * span / scale if scale > 0 else 0.0


def run_scenario(spec: ScenarioSpec, out_root, write_outputs=True) -> ScenarioResult:
    """Execute one scenario end to end. Never raises for expected failure
    modes; the exit code carries the outcome."""
    res = ScenarioResult(exit_code=EXIT_OK, stage="parse")
    outdir = os.path.join(out_root, spec.outputs)
    expect_kinds = {e.get("kind") for e in spec.expect}

    cfg = spec.channel
    try:
        grid = Grid(n=spec.grid_n, L=cfg.L)
        ctrl_kwargs = dict(k_p=float(spec.controller["k_p"]),
                           k_I=float(spec.controller["k_I"]),
                           h_c=spec.h_c,
                           variant=spec.controller.get("variant", "pure_pi"))
    except (ConfigError, KeyError, TypeError, ValueError) as exc:
        res.exit_code, res.stage = EXIT_PARSE, "parse"
        res.messages.append(str(exc))
        return res

    # steady + discrete equilibrium
    res.stage = "steady"
    try:
        steady = solve_steady(cfg, spec.q_ref, spec.h_c, grid)
        sigma = pde.default_sigma(steady, cfg.g)
        equilibrium = pde.discrete_equilibrium(cfg, spec.q_ref, spec.h_c, grid, sigma, seed=steady)
    except (RegimeError, DomainError) as exc:
        res.exit_code = EXIT_REGIME
        res.messages.append(f"steady stage: {exc}")
        return res
    transit = cfg.L / float(np.min(np.sqrt(cfg.g * steady.H) - steady.V))
    res.analysis["steady_residual"] = steady_residual(cfg, steady)
    res.analysis["transit_time"] = transit
    res.analysis["sigma"] = sigma

    # certificate
    res.stage = "certify"
    eps = spec.certificate.get("epsilon")
    if eps is None and "epsilon_rel" in spec.certificate:
        lam1 = float(equilibrium.V[0] + np.sqrt(cfg.g * equilibrium.H[0]))
        lam2 = float(np.sqrt(cfg.g * equilibrium.H[0]) - equilibrium.V[0])
        eps = float(spec.certificate["epsilon_rel"]) * lam2 / lam1
    cert = certify(cfg, equilibrium, ctrl_kwargs["k_p"], ctrl_kwargs["k_I"],
                   epsilon=eps, mu=spec.certificate.get("mu"))
    res.analysis["certificate"] = cert.report()
    if not cert.valid and "certificate_valid" in expect_kinds:
        res.exit_code = EXIT_CERT
        res.messages.append(f"certificate invalid: {cert.diagnostic}")
        if write_outputs:
            _write_artifacts(outdir, spec, cfg, steady, equilibrium, cert, None, None, res)
        return res

    # simulation
    res.stage = "simulate"
    horizon = spec.horizon_transits * transit
    sample_every = spec.sample_every_transits * transit
    record = None
    target_record = None
    try:
        spec.inflow.check_positive(horizon)
        if ctrl_kwargs["variant"] == "feedforward":
            target_state = pde.perturbed_state(equilibrium, z=0.0)
            target_record = pde.simulate_target(cfg, spec.h_c, target_state, spec.inflow,
                                                horizon, sample_every, sigma=sigma)
            ctrl = pde.ControllerSpec(feedforward_flux=pde.flux_interpolant(target_record),
                                      **ctrl_kwargs)
            tmap = {round(t, 9): i for i, t in enumerate(target_record.t_samples)}

            def reference(t, _rec=target_record, _map=tmap):
                i = _map.get(round(t, 9))
                if i is None:
                    i = int(np.argmin(np.abs(_rec.t_samples - t)))
                return _rec.snapshots[i]
        else:
            ctrl = pde.ControllerSpec(**ctrl_kwargs)
            if spec.inflow.variant == "constant":
                reference = equilibrium
            else:
                def reference(t, _cfg=cfg, _grid=grid, _inflow=spec.inflow, _hc=spec.h_c):
                    p = solve_steady(_cfg, float(_inflow(t)), _hc, _grid)
                    return p.H, p.V
        initial, z_ref = _build_initial(spec, grid, equilibrium, ctrl, cfg)
        record = pde.run(cfg, ctrl, initial, spec.inflow, horizon, sample_every,
                         sigma=sigma, reference=reference)
    except ConfigError as exc:
        res.exit_code = EXIT_PARSE
        res.messages.append(f"simulate stage: {exc}")
        return res
    except (RegimeError, BoundarySolveError) as exc:
        res.exit_code = EXIT_REGIME
        res.messages.append(f"simulate stage: {exc}")
        record = getattr(exc, "record", None)
        if write_outputs:
            _write_artifacts(outdir, spec, cfg, steady, equilibrium, cert, record, target_record, res)
        return res

    # analysis
    res.stage = "analyze"
    res.analysis["mass_balance_rel"] = analysis.mass_balance_residual(record)
    res.analysis["ctrl_residual_max"] = float(np.max(record.ctrl_residual))
    res.analysis["h2_initial"] = float(record.h2_dev[0])
    res.analysis["h2_final"] = float(record.h2_dev[-1])
    series = None
    if cert.valid and ctrl_kwargs["variant"] != "feedforward":
        series = analysis.lyapunov_series(
            record, cert, None, lambda p: pde.interior_rhs(cfg, p, sigma), z_ref=z_ref)
        res.analysis["lyap_initial"] = float(series.lyap[0])
        res.analysis["lyap_final"] = float(series.lyap[-1])
    if spec.inflow.variant == "sinusoid":
        try:
            rep = analysis.iss_check(record.t_samples, record.h2_dev, spec.inflow, horizon)
            res.analysis["iss"] = rep.to_dict()
        except DomainError as exc:
            res.analysis["iss"] = {"error": str(exc)}
        drift = _z_drift(record.t_samples, record.z_samples, spec.inflow)
        if drift is not None:
            res.analysis["z_trend_fraction"] = drift

    # assertions
    res.stage = "assert"
    failures = []
    for exp in spec.expect:
        ok, msg = _evaluate_assertion(exp, cert, record, series, res.analysis, transit)
        res.assertions.append({"kind": exp.get("kind"), "passed": ok, "message": msg})
        if not ok:
            failures.append(msg)
    if write_outputs:
        _write_artifacts(outdir, spec, cfg, steady, equilibrium, cert, record, target_record, res,
                         series=series)
    if failures:
        res.exit_code = EXIT_ASSERT
        res.messages.extend(failures)
    return res


def _evaluate_assertion(exp, cert, record, series, report, transit):
    kind = exp.get("kind")
    if kind == "certificate_valid":
        return cert.valid, "certificate expected valid" + ("" if cert.valid else f": {cert.diagnostic}")
    if kind == "certificate_invalid":
        return (not cert.valid), "certificate expected invalid"
    if kind == "mass_balance_max":
        v = report["mass_balance_rel"]
        return v < float(exp.get("value", 1e-6)), f"mass balance {v:.3g}"
    if kind == "ctrl_residual_max":
        v = report["ctrl_residual_max"]
        return v < float(exp.get("value", 1e-10)), f"controller residual {v:.3g}"
    if kind == "final_h2_ratio_max":
        ratio = record.h2_dev[-1] / record.h2_dev[0]
        return ratio < float(exp.get("value", 1e-2)), f"final/initial H2 ratio {ratio:.3g}"
    if kind == "h2_never_below_ratio":
        ratio = float(np.min(record.h2_dev / record.h2_dev[0]))
        return ratio >= float(exp.get("value", 0.5)), f"min H2 ratio {ratio:.3g}"
    if kind == "lyap_monotone":
        if series is None:
            return False, "no Lyapunov series available"
        after = float(exp.get("after_transits", 2.0)) * transit
        slack = float(exp.get("slack", 1e-9))
        mask = series.t >= after
        worst = float(np.max(np.diff(series.lyap[mask])))
        return worst <= slack, f"max Lyapunov increase {worst:.3g}"
    if kind == "fitted_gamma_min":
        if series is None:
            return False, "no Lyapunov series available"
        frac = float(exp.get("fit_start_frac", 0.4))
        t0 = series.t[0] + frac * (series.t[-1] - series.t[0])
        gamma, r2 = analysis.fit_decay(series.t, series.lyap, t0)
        report["fitted_gamma"] = gamma
        report["fit_r2"] = r2
        ok = gamma > float(exp.get("value", 0.0)) and r2 > float(exp.get("r2_min", 0.0))
        return ok, f"gamma {gamma:.4g}, r2 {r2:.4f}"
    if kind == "iss_bounded":
        iss = report.get("iss", {})
        return bool(iss.get("bounded")), f"iss {iss}"
    if kind == "z_no_drift":
        v = report.get("z_trend_fraction")
        if v is None:
            return False, "no z-trend measurement"
        return v < float(exp.get("max_trend_fraction", 0.1)), f"z trend fraction {v:.3g}"
    if kind == "tracking_final_max":
        frac = float(exp.get("window_frac", 0.2))
        t = record.t_samples
        mask = t >= t[-1] - frac * (t[-1] - t[0])
        v = float(np.max(record.h2_dev[mask]))
        return v < float(exp.get("value", 1e-6)), f"late tracking deviation {v:.3g}"
    return False, f"unknown assertion kind {kind!r}"


def _write_artifacts(outdir, spec, cfg, steady, equilibrium, cert, record, target_record,
                     res, series=None):
    os.makedirs(outdir, exist_ok=True)
    manifest = {
        "scenario": spec.name,
        "description": spec.description,
        "version": __version__,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "channel": cfg.to_dict(),
        "controller": spec.controller,
        "inflow": spec.inflow.to_dict(),
        "grid_n": spec.grid_n,
        "h_c": spec.h_c,
        "q_ref": spec.q_ref,
        "perturbation": spec.perturbation,
        "horizon_transits": spec.horizon_transits,
        "sample_every_transits": spec.sample_every_transits,
        "certificate_options": spec.certificate,
        "seed": spec.seed,
        "analysis": res.analysis,
        "assertions": res.assertions,
        "stage": res.stage,
        "exit_code": res.exit_code,
    }
    if record is not None:
        manifest["run"] = record.manifest()
    analysis.write_report(os.path.join(outdir, "manifest.json"), manifest)
    analysis.write_report(os.path.join(outdir, "analysis.json"),
                          {"analysis": res.analysis, "assertions": res.assertions})
    steady.to_csv(os.path.join(outdir, "steady.csv"), params={"Q": spec.q_ref, "H_c": spec.h_c})
    equilibrium.to_csv(os.path.join(outdir, "equilibrium.csv"),
                       params={"Q": spec.q_ref, "H_c": spec.h_c})
    cert.to_json(os.path.join(outdir, "certificate.json"))
    if cert.fields is not None and cert.chi is not None:
        cert.arrays_to_csv(os.path.join(outdir, "certificate_arrays.csv"))
        cert.fields.to_csv(os.path.join(outdir, "fields.csv"))
    if record is not None:
        record.to_csv(os.path.join(outdir, "trajectory.csv"))
    if target_record is not None:
        target_record.to_csv(os.path.join(outdir, "target_trajectory.csv"))
    if series is not None:
        series.to_csv(os.path.join(outdir, "norms.csv"))


def _output_root(args):
    if getattr(args, "out", None):
        return args.out
    return os.environ.get("CANALPI_OUTPUT_ROOT", os.path.join(os.getcwd(), "canalpi_out"))


def main(argv=None):
    parser = argparse.ArgumentParser(prog="canalpi",
                                     description="PI-controlled open-channel laboratory")
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="run one or more scenarios end-to-end")
    p_run.add_argument("scenarios", nargs="+", help="scenario file(s) or bundled name(s)")
    p_run.add_argument("--out", help="output root directory")
    p_run.add_argument("--parallel", action="store_true", help="run scenarios concurrently")
    p_run.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="flat dotted override, e.g. grid_n=401")

    p_cert = sub.add_parser("certify", help="certificate only, no simulation")
    p_cert.add_argument("scenario", help="scenario file or bundled name")
    p_cert.add_argument("--out", help="output root directory")
    p_cert.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE")

    sub.add_parser("list", help="list bundled scenarios")

    p_desc = sub.add_parser("describe", help="describe a bundled scenario")
    p_desc.add_argument("name")

    args = parser.parse_args(argv)

    if args.verb == "list":
        for name, desc in bundled_scenarios().items():
            print(f"{name}: {desc}")
        return EXIT_OK

    if args.verb == "describe":
        catalog = bundled_scenarios()
        if args.name not in catalog:
            print(f"unknown scenario {args.name!r}", file=sys.stderr)
            return EXIT_PARSE
        print(f"{args.name}: {catalog[args.name]}")
        return EXIT_OK

    if args.verb == "certify":
        try:
            spec = load_scenario(args.scenario, args.overrides)
        except ConfigError as exc:
            print(f"parse error: {exc}", file=sys.stderr)
            return EXIT_PARSE
        keep = {"certificate_valid", "certificate_invalid"}
        spec.expect = [e for e in spec.expect if e.get("kind") in keep]
        spec.horizon_transits = min(spec.horizon_transits, 0.01)
        spec.sample_every_transits = min(spec.sample_every_transits, 0.01)
        spec.perturbation = {"kind": "none"}
        res = run_scenario(spec, _output_root(args))
        _print_result(spec.name, res)
        return res.exit_code

    # run verb
    specs = []
    for source in args.scenarios:
        try:
            specs.append(load_scenario(source, args.overrides))
        except ConfigError as exc:
            print(f"parse error in {source!r}: {exc}", file=sys.stderr)
            return EXIT_PARSE
    root = _output_root(args)
    results = []
    if args.parallel and len(specs) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=min(4, len(specs))) as pool:
            futures = [pool.submit(run_scenario, s, root) for s in specs]
            results = [f.result() for f in futures]
    else:
        results = [run_scenario(s, root) for s in specs]
    worst = EXIT_OK
    for spec, res in zip(specs, results):
        _print_result(spec.name, res)
        worst = max(worst, res.exit_code)
    return worst


def _print_result(name, res: ScenarioResult):
    status = "ok" if res.exit_code == EXIT_OK else f"exit {res.exit_code} at stage {res.stage}"
    print(f"[{name}] {status}")
    for a in res.assertions:
        mark = "PASS" if a["passed"] else "FAIL"
        print(f"  {mark} {a['kind']}: {a['message']}")
    for m in res.messages:
        print(f"  ! {m}")


if __name__ == "__main__":
    sys.exit(main())
