"""Command-line front end: ``udops {bound,run,budget,feasibility,compile}``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import experiments as ex
from .channels import KrausChannel, NotCPTPError
from .dilation import DilationError, compile_channel, compile_povm, verify_circuit
from .discrimination import PovmSet, probe_search, symmetric_ud_bound, ud_feasibility
from .hilbert import DEFAULT_TRUNCATION, fock_state
from .metrics import chi_matrix, process_fidelity
from .noisesim import (
    BUDGET_CONFIGS,
    STAGES,
    ExperimentPlan,
    NoiseModel,
    circuit_chi,
    error_budget,
    probe_state_fidelity,
    propagate_exact,
    sample_shots,
    shots_csv,
)
from .serialize import decode_vector, encode_vector

DEFAULT_SHOTS = 50_000


class ConfigError(ValueError):
    pass


# -- formatting -----------------------------------------------------------------------

def fmt(x) -> str:
    """12 significant digits; negative zero printed as 0."""
    x = float(x)
    return f"{(x if x != 0 else 0.0):.12g}"


def csv_text(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(v if isinstance(v, str) else fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def json_text(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def conditional_csv(report) -> str:
    n = report.n_ops
    rows = []
    for op in range(n):
        for m in range(n + 1):
            rows.append([str(op), "I" if m == n else str(m), report.conditional[op, m]])
    return csv_text(["operation", "outcome", "probability"], rows)


class Output:
    """Writes named files under a directory, or streams them to stdout."""

    def __init__(self, out_dir: str | None):
        self.dir = Path(out_dir) if out_dir else None
        if self.dir:
            self.dir.mkdir(parents=True, exist_ok=True)

    def emit(self, name: str, text: str):
        if self.dir:
            # newline="" keeps LF line endings on every platform
            with open(self.dir / name, "w", newline="", encoding="utf-8") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)


# -- config ---------------------------------------------------------------------------

def config_schema() -> dict:
    return json.loads(resources.files("udops").joinpath("config.schema.json").read_text())


def validate_config(cfg: dict, source: str = "config") -> dict:
    validator = jsonschema.Draft202012Validator(config_schema())
    err = jsonschema.exceptions.best_match(validator.iter_errors(cfg))
    if err is not None:
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{source}: field '{where}': {err.message}")
    return cfg


def load_config(path: str) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    cfg = validate_config(cfg, path)
    cfg["_base"] = str(Path(path).resolve().parent)
    return cfg


def load_channels(path: str) -> list[KrausChannel]:
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read channels file {path}: {exc}") from None
    items = obj["channels"] if isinstance(obj, dict) else obj
    try:
        chans = [KrausChannel.from_json(c) for c in items]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: invalid channel: {exc}") from None
    if len(chans) < 2:
        raise ConfigError(f"{path}: need at least two channels, got {len(chans)}")
    return chans


def resolve_probe(spec: dict | None, d: int, default: str | None, channels=None, seed: int = 0):
    spec = spec or ({"name": default} if default else None)
    if spec is None:
        raise ConfigError("field 'probe': a probe is required for this experiment")
    if len(spec) != 1:
        raise ConfigError("field 'probe': give exactly one of name, amplitudes, search")
    if "name" in spec:
        name = spec["name"]
        if name == "vacuum":
            return fock_state(0, d)
        if name == "uniform":
            return np.full(d, 1 / np.sqrt(d), dtype=complex)
        if d != 4:
            raise ConfigError(f"field 'probe/name': plus03 needs d=4, got d={d}")
        return ex.block_pauli_probe()
    if "amplitudes" in spec:
        v = decode_vector(spec["amplitudes"])
        if v.shape != (d,):
            raise ConfigError(f"field 'probe/amplitudes': expected {d} amplitudes, got {v.size}")
        norm = np.linalg.norm(v)
        if abs(norm - 1) > 1e-10:
            raise ConfigError(f"field 'probe/amplitudes': state norm is {norm:.12g}, expected 1")
        return v
    s = spec["search"]
    res = probe_search(channels, s["trials"], s.get("seed", seed))
    if not res.found:
        raise ConfigError(f"field 'probe/search': no feasible probe in {s['trials']} trials")
    return res.probe


@dataclass
class Point:
    tag: str
    setup: ex.Setup
    kind: str


def config_points(cfg: dict, seed: int = 0) -> list[Point]:
    kind = cfg["experiment"]
    par = cfg.get("parameters", {})
    probe_spec = cfg.get("probe")
    if kind == "displacement_ud":
        if probe_spec not in (None, {"name": "vacuum"}):
            raise ConfigError("field 'probe': displacement_ud always uses the vacuum probe")
        n, dt = par.get("N", 4), par.get("d_trunc", DEFAULT_TRUNCATION)
        try:
            return [Point(f"N{n}_alpha{a:g}", ex.displacement_setup(n, a, dt), kind) for a in par.get("alpha", [1.6])]
        except ValueError as exc:
            raise ConfigError(f"field 'parameters': {exc}") from None
    if kind == "block_dephasing_ud":
        d = par.get("d", 4)
        parts = par.get("partitions")
        if parts is None and d not in ex.DEPHASING_PARTITIONS:
            raise ConfigError(f"field 'parameters/d': no built-in partitions for d={d}; give 'partitions'")
        try:
            chans = ex.dephasing_channels(d, parts)
        except ValueError as exc:
            raise ConfigError(f"field 'parameters/partitions': {exc}") from None
        probe = resolve_probe(probe_spec, d, "uniform", chans, seed)
        return [Point(f"d{d}", ex.custom_setup(chans, probe, f"block dephasing d={d}"), kind)]
    if kind == "block_pauli_ud":
        pairs = tuple(tuple(p) for p in par.get("pauli_pairs", ex.DEFAULT_PAULI_PAIRS))
        pts = []
        for eta in par.get("eta", [0.5]):
            try:
                chans = ex.block_pauli_channels(eta, pairs)
            except ValueError as exc:
                raise ConfigError(f"field 'parameters': {exc}") from None
            probe = resolve_probe(probe_spec, 4, "plus03", chans, seed)
            pts.append(Point(f"eta{eta:g}", ex.custom_setup(chans, probe, f"block Pauli eta={eta:g}"), kind))
        return pts
    if "channels_file" not in par:
        raise ConfigError("field 'parameters/channels_file': required for custom experiments")
    path = Path(cfg.get("_base", ".")) / par["channels_file"]
    chans = load_channels(str(path))
    probe = resolve_probe(probe_spec, chans[0].dim, None, chans, seed)
    return [Point("custom", ex.custom_setup(chans, probe), kind)]


def noise_of(cfg: dict) -> NoiseModel:
    try:
        return NoiseModel.from_json(cfg.get("noise", {}))
    except ValueError as exc:
        raise ConfigError(f"field 'noise': {exc}") from None


def warn(msg: str):
    print(f"warning: {msg}", file=sys.stderr)


# -- commands -------------------------------------------------------------------------

def bound_rows(n: int, alphas) -> list[list[float]]:
    rows = []
    for a in alphas:
        b, c_sq = symmetric_ud_bound(a, n) if a > 0 else (0.0, np.full(n, 1.0 / n))
        rows.append([a, b, *c_sq])
    return rows


def parse_grid(args) -> list[float]:
    if args.alpha_range:
        start, stop, step = args.alpha_range
        if step <= 0 or stop < start:
            raise ConfigError("--alpha-range needs START <= STOP and STEP > 0")
        k = int(np.floor((stop - start) / step + 1e-9))
        grid = [round(start + i * step, 12) for i in range(k + 1)]
    elif args.alpha:
        try:
            grid = [float(x) for x in args.alpha.split(",")]
        except ValueError:
            raise ConfigError(f"--alpha: cannot parse {args.alpha!r} as comma-separated numbers") from None
    else:
        grid = [round(0.4 + 0.2 * i, 12) for i in range(9)]
    if any(a < 0 for a in grid):
        raise ConfigError("alpha grid must be nonnegative")
    return grid


def cmd_bound(args) -> int:
    if args.n < 2:
        raise ConfigError("--n must be >= 2")
    grid = parse_grid(args)
    rows = bound_rows(args.n, grid)
    out = Output(args.out)
    if args.format == "json":
        doc = [{"alpha": r[0], "p_con_bound": r[1], "c_sq": list(r[2:])} for r in rows]
        out.emit(f"bound_N{args.n}.json", json_text(doc))
    else:
        header = ["alpha", "p_con_bound", *[f"c{r}" for r in range(args.n)]]
        out.emit(f"bound_N{args.n}.csv", csv_text(header, rows))
    return 0


def _shots(args, cfg) -> int:
    return args.shots if args.shots is not None else cfg.get("shots", DEFAULT_SHOTS)


def _seed(args, cfg) -> int:
    return args.seed if args.seed is not None else cfg.get("seed", 0)


def _out_dir(args, cfg):
    return args.out or cfg.get("output", {}).get("dir")


def _run_plan(plan: ExperimentPlan, noise, stages, shots: int, ideal=None) -> tuple[dict, object, list]:
    exact = propagate_exact(plan, noise, stages)
    doc = {"ideal": ideal.to_json() if ideal else None, "exact": exact.to_json(), "empirical": None}
    records = []
    if shots > 0:
        plan = ExperimentPlan(plan.probe, plan.channel_circuits, plan.povm_circuit, shots, plan.seed, plan.assignment)
        records, emp = sample_shots(plan, noise, stages)
        doc["empirical"] = emp.to_json()
        doc["shots"] = shots
    return doc, exact, records


def cmd_run(args) -> int:
    out_shots_csv = False
    if args.plan:
        try:
            obj = json.loads(Path(args.plan).read_text())
            plan, noise = ExperimentPlan.from_json(obj["plan"]), NoiseModel.from_json(obj.get("noise", {}))
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot read plan document {args.plan}: {exc}") from None
        seed = args.seed if args.seed is not None else plan.seed
        plan = ExperimentPlan(plan.probe, plan.channel_circuits, plan.povm_circuit, plan.shots, seed, plan.assignment)
        shots = args.shots if args.shots is not None else plan.shots
        work = [("plan", plan, None, STAGES)]
        out = Output(args.out)
    else:
        cfg = load_config(args.config)
        seed, shots = _seed(args, cfg), _shots(args, cfg)
        noise = noise_of(cfg)
        stages = tuple(cfg.get("noisy_stages", STAGES))
        out = Output(_out_dir(args, cfg))
        out_shots_csv = cfg.get("output", {}).get("shots_csv", False)
        work = []
        for pt in config_points(cfg, seed):
            if not pt.setup.feasible:
                an = pt.setup.analysis
                bad = [i for i, f in enumerate(an.feasible) if not f]
                warn(f"{pt.tag}: UD infeasible with this probe; operations {bad} cannot be heralded")
                continue
            work.append((pt.tag, pt.setup.plan(max(shots, 1), seed), pt.setup.ideal_report(), stages))
    summary = []
    for tag, plan, ideal, stages in work:
        doc, exact, records = _run_plan(plan, noise, stages, shots, ideal)
        doc = {"tag": tag, **doc}
        summary.append({"tag": tag, "p_con": exact.p_con, "p_inc": exact.p_inc, "p_err": exact.p_err})
        if out.dir:
            out.emit(f"report_{tag}.json", json_text(doc))
            out.emit(f"conditional_{tag}.csv", conditional_csv(exact))
            if out_shots_csv and records:
                out.emit(f"shots_{tag}.csv", shots_csv(records))
        elif args.format == "json":
            out.emit("", json_text(doc))
        else:
            out.emit("", conditional_csv(exact))
    if out.dir:
        if args.format == "json":
            sys.stdout.write(json_text(summary))
        else:
            sys.stdout.write(csv_text(["tag", "p_con", "p_inc", "p_err"],
                                      [[s["tag"], s["p_con"], s["p_inc"], s["p_err"]] for s in summary]))
    return 0


BUDGET_HEADER = ["config", "distance", "state_infid", "proc_infid_X", "proc_infid_Y", "proc_infid_Z"]


def budget_table(pt: Point, noise: NoiseModel, stages) -> tuple[list, dict]:
    setup = pt.setup
    plan = setup.plan(1, 0)
    ideal = setup.ideal_report()
    budget = error_budget(plan, noise, ideal, stages)
    rows = []
    pauli = pt.kind == "block_pauli_ud"
    ideal_chi = [chi_matrix(c) for c in setup.channels] if pauli else []
    for row in budget.rows:
        line = [row.config, row.distance]
        if pauli:
            nm = noise.with_toggles(*BUDGET_CONFIGS[row.config])
            line.append(1 - probe_state_fidelity(setup.probe, nm))
            line += [1 - process_fidelity(circuit_chi(c, nm), x) for c, x in zip(plan.channel_circuits, ideal_chi)]
        else:
            line += ["", "", "", ""]
        rows.append(line)
    contrib = {k: {"distance": v, "fraction": f} for k, (v, f) in budget.contributions().items()}
    return rows, contrib


def cmd_budget(args) -> int:
    cfg = load_config(args.config)
    base = noise_of(cfg)
    out = Output(_out_dir(args, cfg))
    for pt in config_points(cfg, _seed(args, cfg)):
        if not pt.setup.feasible:
            warn(f"{pt.tag}: UD infeasible with this probe; skipped")
            continue
        # the block-Pauli budget scores the measurement stage on ideal inputs
        default = ("povm",) if pt.kind == "block_pauli_ud" else STAGES
        stages = tuple(cfg.get("noisy_stages", default))
        for gt in cfg.get("gate_times", [base.gate_time]):
            noise = NoiseModel.from_json({**base.to_json(), "gate_time": gt})
            rows, contrib = budget_table(pt, noise, stages)
            name = f"budget_{pt.tag}_gt{gt:g}"
            if args.format == "json":
                doc = {"tag": pt.tag, "gate_time": gt, "noisy_stages": list(stages),
                       "rows": [dict(zip(BUDGET_HEADER, r)) for r in rows], "contributions": contrib}
                out.emit(name + ".json", json_text(doc))
            else:
                out.emit(name + ".csv", csv_text(BUDGET_HEADER, rows))
    return 0


def feasibility_doc(chans, probe, an, search=None) -> dict:
    doc = {
        "probe": encode_vector(probe),
        "feasible": list(an.feasible),
        "all_feasible": an.all_feasible,
        "support_dims": an.support_dims(),
        "conclusive_probability": an.conclusive_probability,
        "povm": an.povm.to_json() if an.povm is not None else None,
    }
    if search is not None:
        doc["search"] = search
    return doc


def cmd_feasibility(args) -> int:
    out = Output(args.out)
    if args.config:
        cfg = load_config(args.config)
        items = [(pt.tag, list(pt.setup.channels), pt.setup.probe) for pt in config_points(cfg, _seed(args, cfg))]
    elif args.channels:
        chans = load_channels(args.channels)
        d = chans[0].dim
        if args.search:
            res = probe_search(chans, args.search, args.seed or 0)
            if not res.found:
                out.emit("feasibility.json", json_text({"found": False, "trials": args.search,
                                                        "all_feasible": False}))
                return 0
            probe = res.probe
        elif args.probe:
            probe = resolve_probe({"amplitudes": json.loads(args.probe)}, d, None)
        else:
            probe = resolve_probe({"name": args.probe_name}, d, None)
        items = [("channels", chans, probe)]
    else:
        raise ConfigError("feasibility needs --config or --channels")
    for tag, chans, probe in items:
        an = ud_feasibility(chans, probe)
        search = {"trials": args.search, "seed": args.seed or 0} if args.search and not args.config else None
        if not an.all_feasible:
            warn(f"{tag}: UD infeasible for operations {[i for i, f in enumerate(an.feasible) if not f]}")
        out.emit(f"feasibility_{tag}.json", json_text(feasibility_doc(chans, probe, an, search)))
    return 0


def cmd_compile(args) -> int:
    out = Output(args.out)
    if args.channel:
        try:
            ch = KrausChannel.from_json(json.loads(Path(args.channel).read_text()))
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot read channel {args.channel}: {exc}") from None
        circ = compile_channel(ch)
        doc = {"circuit": circ.to_json(), "process_fidelity": verify_circuit(circ, ch),
               "unitarity_error": circ.unitarity_error()}
        out.emit("circuit_channel.json", json_text(doc))
    elif args.povm:
        try:
            povm = PovmSet.from_json(json.loads(Path(args.povm).read_text()))
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot read POVM {args.povm}: {exc}") from None
        circ = compile_povm(povm)
        out.emit("circuit_povm.json", json_text({"circuit": circ.to_json(), "unitarity_error": circ.unitarity_error()}))
    elif args.config:
        cfg = load_config(args.config)
        seed, shots = _seed(args, cfg), _shots(args, cfg)
        for pt in config_points(cfg, seed):
            if not pt.setup.feasible:
                warn(f"{pt.tag}: UD infeasible with this probe; skipped")
                continue
            plan = pt.setup.plan(max(shots, 1), seed)
            out.emit(f"plan_{pt.tag}.json", json_text({"plan": plan.to_json(), "noise": noise_of(cfg).to_json()}))
    else:
        raise ConfigError("compile needs --channel, --povm or --config")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory (default: stdout, or the config's output.dir)")
    common.add_argument("--shots", type=int, help="override the shot count (0 disables sampling)")
    common.add_argument("--format", choices=("json", "csv"), default="csv")

    p = argparse.ArgumentParser(prog="udops", description="Unambiguous discrimination of quantum operations.")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bound", parents=[common], help="symmetric coherent-state UD bound over an alpha grid")
    b.add_argument("--n", type=int, default=4, help="number of displacements")
    g = b.add_mutually_exclusive_group()
    g.add_argument("--alpha", help="comma-separated |alpha| values")
    g.add_argument("--alpha-range", type=float, nargs=3, metavar=("START", "STOP", "STEP"))
    b.set_defaults(fn=cmd_bound)

    r = sub.add_parser("run", parents=[common], help="ideal, exact-noisy and sampled reports")
    r.add_argument("--plan", help="plan+noise JSON document written by 'compile --config'")
    r.set_defaults(fn=cmd_run)

    bu = sub.add_parser("budget", parents=[common], help="error budget per noise configuration")
    bu.set_defaults(fn=cmd_budget)

    f = sub.add_parser("feasibility", parents=[common], help="support-based UD feasibility")
    f.add_argument("--channels", help="JSON list of Kraus channels")
    f.add_argument("--probe", help="probe amplitudes as JSON [[re, im], ...]")
    f.add_argument("--probe-name", choices=("vacuum", "uniform", "plus03"), default="uniform")
    f.add_argument("--search", type=int, metavar="TRIALS", help="search random probes instead")
    f.set_defaults(fn=cmd_feasibility)

    c = sub.add_parser("compile", parents=[common], help="compile a channel, POVM, or experiment to circuits")
    c.add_argument("--channel", help="Kraus channel JSON")
    c.add_argument("--povm", help="POVM JSON")
    c.set_defaults(fn=cmd_compile)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command in ("run", "budget") and not (args.config or getattr(args, "plan", None)):
        print(f"error: {args.command} needs --config" + (" or --plan" if args.command == "run" else ""),
              file=sys.stderr)
        return 2
    if args.shots is not None and args.shots < 0:
        print("error: --shots must be >= 0", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except (ConfigError, NotCPTPError, DilationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
