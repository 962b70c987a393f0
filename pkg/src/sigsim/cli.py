"""``sigsim`` command line: characterize, train, fit, simulate, compare, norify.

Exit codes: 0 success, 1 usage error, 2 data error (missing or malformed
input, unwritable output), 3 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
import warnings
from collections import Counter
from contextlib import contextmanager
from pathlib import Path

from . import __version__
from .engine import simulate_circuit
from .fitting import FitConfig, FitError, fit_rms, fit_trace
from .mlp import CorruptModel, FormatVersionMismatch, TrainConfig
from .netlist import BenchSyntaxError, NetlistError, decompose_to_nor, emit_bench, load_c17, parse_bench
from .pipeline import (compare_run, naive_delay, random_stimuli, stimulus_slope_range, train_transfer_model)
from .refmodel import (AnalogGateParams, StepTooCoarse, SweepSpec, read_table, run_characterization,
                       simulate_chain, write_table)
from .sigmoid import SCALE, TraceError, digitize, format_trace, mismatch_time, read_trace
from .transfer import ModelMissing, ModelRegistry, bundle_hash, save_bundle, stub_model
from .waveform import read_waveform, sample_trace, write_samples_tsv, write_waveform

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3
MODEL_DIR_ENV = "SIGSIM_MODEL_DIR"
PS = 1e-12
OUTPUT_KEYS = ("out", "report", "mapping")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class Manifest:
    """Run record: configuration hash, seeds, model hashes, timings, warnings."""

    def __init__(self, subcommand: str, args: argparse.Namespace):
        self.subcommand = subcommand
        cfg = {k: v for k, v in sorted(vars(args).items())
               if k not in ("jobs", "manifest", "func", "config") and not callable(v)}
        self.config = cfg
        # where results go does not change what they are
        hashed = {k: v for k, v in cfg.items() if k not in OUTPUT_KEYS}
        self.config_hash = hashlib.sha256(json.dumps(hashed, sort_keys=True, default=str).encode()).hexdigest()
        self.seeds: dict = {}
        self.bundles: dict = {}
        self.timings: dict = {}
        self.warnings: Counter = Counter()
        self.extra: dict = {}
        self.path: Path | None = None

    @contextmanager
    def phase(self, name: str):
        t = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = round(time.perf_counter() - t, 6)

    def as_dict(self) -> dict:
        return {"tool": "sigsim", "version": __version__, "subcommand": self.subcommand,
                "config": self.config, "config_hash": self.config_hash, "seeds": self.seeds,
                "model_bundles": self.bundles, "timings_s": self.timings,
                "warnings": dict(sorted(self.warnings.items())), **self.extra}

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=2, sort_keys=True, default=str) + "\n")


def _range_ps(text: str) -> tuple[float, float, float]:
    try:
        lo, hi, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi:step in ps, got {text!r}") from None
    return (lo * PS, hi * PS, step * PS)


def _random_spec(text: str):
    try:
        mu, sigma, n, seed = text.split(",")
        return float(mu) * PS, float(sigma) * PS, int(n), int(seed)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected mu_ps,sigma_ps,n,seed, got {text!r}") from None


def _out_dir(path: str) -> Path:
    d = Path(path)
    try:
        d.mkdir(parents=True, exist_ok=True)
        probe = d / ".sigsim-write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise OSError(f"cannot write to output directory {d}: {e.strerror or e}") from None
    return d


def _params(args) -> AnalogGateParams:
    return AnalogGateParams(vdd=args.vdd, tau_rise=args.tau_rise * PS, tau_fall=args.tau_fall * PS)


def _load_registry(args, man: Manifest) -> ModelRegistry:
    src = args.models or os.environ.get(MODEL_DIR_ENV)
    if not src:
        raise UsageError(f"no model directory: pass --models or set {MODEL_DIR_ENV}")
    d = Path(src)
    reg = ModelRegistry.load(d)
    for p in sorted(d.iterdir()):
        if (p / "meta.json").is_file():
            man.bundles[p.name] = bundle_hash(p)
    return reg


def _circuit(args):
    raw = load_c17() if args.bench == "c17" else parse_bench(Path(args.bench).read_text())
    return decompose_to_nor(raw, allow_inv=args.allow_inv)


# -- subcommands ------------------------------------------------------------

def cmd_characterize(args, man: Manifest) -> int:
    spec = SweepSpec(ta=args.ta, tb=args.tb, tc=args.tc, targets=args.targets,
                     prefix=args.prefix, suffix=args.suffix, dt=args.dt * PS)
    params = _params(args)
    out = _out_dir(args.out)
    with man.phase("characterize"):
        res = run_characterization(spec, params, args.template, args.kind, args.jobs)
    name = f"table_{args.kind}_{args.template}.tsv"
    with man.phase("write"):
        write_table(out / name, res.rows)
        if args.dump_samples:
            waves = simulate_chain(spec, params, spec.grid()[0], args.kind, args.template)
            for j, w in enumerate(waves):
                write_samples_tsv(out / f"chain_net{j}.tsv", _resample(w, args.dump_samples * PS))
                write_waveform(out / f"chain_net{j}.wave", w)  # full resolution, readable by `fit`
    report = {"grid_points": res.grid_points, "rows": len(res.rows), "dropped_fits": res.dropped_fits,
              "duplicates_removed": res.duplicates, "table": name}
    man.extra["report"] = report
    man.path = out / "manifest.json"
    print(f"{res.grid_points} grid points, {len(res.rows)} rows ({res.dropped_fits} fits dropped, "
          f"{res.duplicates} duplicates removed) -> {out / name}")
    return 0


def cmd_train(args, man: Manifest) -> int:
    rows = read_table(args.table)
    cfg = TrainConfig(epochs=args.epochs, seed=args.seed)
    man.seeds["train"] = args.seed
    with man.phase("train"):
        model = train_transfer_model(rows, args.kind, args.fanout_class, cfg, args.jobs)
    out = _out_dir(args.out)
    save_bundle(model, out)
    man.bundles[out.name] = bundle_hash(out)
    man.path = out / "manifest.json"
    for name in ("rise_slope", "rise_delay", "fall_slope", "fall_delay"):
        net = getattr(model, name)
        print(f"{name}: train MSE {net.train_loss:.4g}, validation MSE {net.val_loss:.4g}")
    return 0


def cmd_fit(args, man: Manifest) -> int:
    w = read_waveform(args.waveform)
    vdd = args.vdd
    initial = int(w.samples[0] >= vdd / 2) if args.initial == "auto" else int(args.initial)
    log: list = []
    with man.phase("fit"):
        tr = fit_trace(w, args.n, vdd, initial, FitConfig(), log)
    rms = fit_rms(w, tr)
    if args.report:
        Path(args.report).write_text("".join(f"{i}\t{c:.17g}\t{lam:.17g}\n" for i, c, lam in log))
    text = format_trace(tr, comment=f"fit of {Path(args.waveform).name}, n = {args.n}")
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    print(f"rms residual {rms:.6g} V ({rms / vdd:.4%} of vdd)", file=sys.stderr if not args.out else sys.stdout)
    return 0


def _stimuli(args, circuit, reg: ModelRegistry | None):
    if args.random:
        mu, sigma, n, seed = args.random
        slopes = stimulus_slope_range(reg) if reg is not None and all(m.stats for m in reg) else None
        kw = {"slope_range": slopes} if slopes else {}
        from .refmodel import DEFAULT_SLOPE_RANGE
        return random_stimuli(circuit, mu, sigma, n, seed, kw.get("slope_range", DEFAULT_SLOPE_RANGE), args.vdd)
    if not args.stimuli:
        raise UsageError("give --stimuli DIR or --random mu,sigma,n,seed")
    d = Path(args.stimuli)
    out = {}
    for name in circuit.inputs:
        p = d / f"{name}.trace"
        if not p.is_file():
            raise FileNotFoundError(f"missing stimulus file {p}")
        out[name] = read_trace(p)
    return out


def cmd_simulate(args, man: Manifest) -> int:
    circuit = _circuit(args)
    reg = _load_registry(args, man)
    if args.random:
        man.seeds["stimuli"] = args.random[3]
    stim = _stimuli(args, circuit, reg)
    params = _params(args)
    stats: dict = {}
    with man.phase("simulate"):
        traces = simulate_circuit(circuit, reg, stim, params.threshold, args.jobs, stats)
    man.extra["simultaneous_input_events"] = stats.get("ties", 0)
    man.extra["tie_gates"] = stats.get("tie_gates", [])
    out = _out_dir(args.out) if args.out else None
    digital = {n: digitize(tr, params.threshold) for n, tr in traces.items()}
    if out:
        with man.phase("write"):
            tdir = out / "traces"
            tdir.mkdir(exist_ok=True)
            for n, tr in traces.items():
                (tdir / f"{n}.trace").write_text(format_trace(tr))
            with open(out / "digital.txt", "w") as fh:
                for n in traces:
                    d = digital[n]
                    fh.write(f"{n}\t{d.initial_level}\t" + " ".join(f"{t:.17g}" for t in d.times) + "\n")
            if args.dump_samples:
                horizon = _horizon(traces)
                step = args.dump_samples * PS
                for n in circuit.outputs:
                    w = sample_trace(traces[n], 0.0, step, int(horizon / step) + 1)
                    write_samples_tsv(out / f"{n}.samples.tsv", w)
    for n in circuit.outputs:
        d = digital[n]
        print(f"{n}: initial {d.initial_level}, {len(d.times)} crossings")
    if args.oracle:
        with man.phase("oracle"):
            res, _ = compare_run(circuit, reg, stim, naive_delay(reg) if all(m.stats for m in reg) else 0.0,
                                 params, jobs=args.jobs)
        man.extra["t_err_s"] = {"sigmoid": res.t_err_sigmoid, "naive": res.t_err_naive}
        print(f"t_err vs reference: sigmoid {res.t_err_sigmoid:.6g} s, naive fixed delay {res.t_err_naive:.6g} s")
    if out:
        man.path = out / "manifest.json"
    return 0


def _horizon(traces) -> float:
    last = max((tr.b[-1] for tr in traces.values() if len(tr)), default=0.0)
    return last / SCALE + 100e-12


def _resample(w, step):
    from .waveform import SampledWaveform
    k = max(1, int(round(step / w.dt)))
    return SampledWaveform(w.t0, w.dt * k, w.samples[::k])


def cmd_compare(args, man: Manifest) -> int:
    a, b = Path(args.a), Path(args.b)
    if a.is_dir() != b.is_dir():
        raise UsageError("compare two trace files or two directories")
    pairs = []
    if a.is_dir():
        names = sorted({p.name for p in a.glob("*.trace")} & {p.name for p in b.glob("*.trace")})
        if not names:
            raise FileNotFoundError("no common .trace files to compare")
        pairs = [(n[:-6], a / n, b / n) for n in names]
    else:
        pairs = [(a.stem, a, b)]
    loaded = [(n, read_trace(p), read_trace(q)) for n, p, q in pairs]
    horizon = args.horizon * PS if args.horizon else max(_horizon({0: p, 1: q}) for _, p, q in loaded)
    total = 0.0
    for n, p, q in loaded:
        e = mismatch_time(digitize(p), digitize(q), horizon)
        total += e
        if len(loaded) > 1:
            print(f"{n}\t{e:.6g}")
    print(f"t_err {total:.6g} s over horizon {horizon:.6g} s")
    man.extra["t_err_s"] = total
    return 0


def cmd_norify(args, man: Manifest) -> int:
    c = _circuit(args)
    text = emit_bench(c)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.mapping:
        Path(args.mapping).write_text("".join(f"{k}\t{' '.join(v) or '(wire)'}\n" for k, v in c.mapping.items()))
    print(f"{len(c.gates)} gates ({c.nor_count()} NOR2)", file=sys.stderr)
    return 0


def cmd_stub(args, man: Manifest) -> int:
    out = _out_dir(args.out)
    reg = ModelRegistry.uniform(args.delay * PS * SCALE, args.slope)
    reg.save(out)
    man.path = out / "manifest.json"
    print(f"wrote {len(reg)} constant models to {out}")
    return 0


def cmd_dump_trace(args, man: Manifest) -> int:
    tr = read_trace(args.trace)
    step = args.dt * PS
    horizon = args.horizon * PS if args.horizon else _horizon({0: tr})
    w = sample_trace(tr, 0.0, step, int(horizon / step) + 1)
    if args.format == "tsv":
        write_samples_tsv(args.out, w)
    else:
        write_waveform(args.out, w)
    return 0


def _emit_manifest(args, man: Manifest) -> None:
    if args.manifest:
        man.write(args.manifest)
    elif man.path is not None:
        man.write(man.path)
    else:
        print("manifest: " + json.dumps(man.as_dict(), sort_keys=True, default=str), file=sys.stderr)


# -- parser -----------------------------------------------------------------

def _add_params(p):
    p.add_argument("--vdd", type=float, default=0.8, help="supply voltage [V]")
    p.add_argument("--tau-rise", type=float, default=4.0, help="reference rise time constant [ps]")
    p.add_argument("--tau-fall", type=float, default=3.0, help="reference fall time constant [ps]")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="sigsim", description="Sigmoid-trace timing simulation of INV/NOR circuits.")
    ap.add_argument("--version", action="version", version=f"sigsim {__version__}")
    ap.add_argument("--config", help="text file of 'key = value' lines overriding option defaults")
    ap.add_argument("--manifest", help="write the run manifest to this path")
    ap.add_argument("--jobs", type=int, default=1, help="worker count; results do not depend on it")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("characterize", help="sweep the reference chain and write a training table")
    p.add_argument("--kind", choices=("INV", "NOR2"), default="NOR2")
    p.add_argument("--template", choices=("chain", "fanout2"), default="chain")
    p.add_argument("--ta", type=_range_ps, default=(5 * PS, 20 * PS, 1 * PS), metavar="LO:HI:STEP")
    p.add_argument("--tb", type=_range_ps, default=(5 * PS, 20 * PS, 1 * PS), metavar="LO:HI:STEP")
    p.add_argument("--tc", type=_range_ps, default=(5 * PS, 20 * PS, 1 * PS), metavar="LO:HI:STEP")
    p.add_argument("--targets", type=int, default=4)
    p.add_argument("--prefix", type=int, default=3)
    p.add_argument("--suffix", type=int, default=2)
    p.add_argument("--dt", type=float, default=0.1, help="sample step [ps]")
    p.add_argument("--dump-samples", type=float, metavar="DT_PS", help="also dump chain waveforms of the first grid point")
    p.add_argument("--out", required=True)
    _add_params(p)
    p.set_defaults(func=cmd_characterize)

    p = sub.add_parser("train", help="train a transfer-model bundle from a table")
    p.add_argument("table")
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("INV", "NOR2"), default="NOR2")
    p.add_argument("--fanout-class", type=int, choices=(1, 2), default=1)
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fit", help="fit a sigmoid trace to a sampled waveform")
    p.add_argument("waveform")
    p.add_argument("-n", type=int, required=True, help="number of transitions")
    p.add_argument("--vdd", type=float, default=0.8)
    p.add_argument("--initial", choices=("auto", "0", "1"), default="auto")
    p.add_argument("--report", help="write per-iteration cost log (TSV)")
    p.add_argument("--out", help="trace file (default: stdout)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="simulate a bench circuit with transfer models")
    p.add_argument("bench", help="bench file, or 'c17' for the bundled benchmark")
    p.add_argument("--models", help=f"model directory (default: ${MODEL_DIR_ENV})")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--stimuli", help="directory of <input>.trace files")
    g.add_argument("--random", type=_random_spec, metavar="MU,SIGMA,N,SEED", help="random stimuli (ps)")
    p.add_argument("--oracle", action="store_true", help="also run the reference model and report t_err")
    p.add_argument("--allow-inv", action="store_true", help="map NOT to INV instead of NOR(a, a)")
    p.add_argument("--dump-samples", type=float, metavar="DT_PS")
    p.add_argument("--out")
    _add_params(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="t_err between two traces (or two trace directories)")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--horizon", type=float, help="[ps]; default: last transition + 100 ps")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("norify", help="rewrite a bench circuit into INV/NOR2 gates")
    p.add_argument("bench")
    p.add_argument("--allow-inv", action="store_true")
    p.add_argument("--out")
    p.add_argument("--mapping", help="write original gate -> emitted gates report")
    p.set_defaults(func=cmd_norify)

    p = sub.add_parser("stub-models", help="write constant-delay models for every gate class")
    p.add_argument("--delay", type=float, required=True, help="[ps]")
    p.add_argument("--slope", type=float, default=50.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stub)

    p = sub.add_parser("dump-trace", help="sample a trace file for plotting")
    p.add_argument("trace")
    p.add_argument("--dt", type=float, default=0.1, help="[ps]")
    p.add_argument("--horizon", type=float, help="[ps]")
    p.add_argument("--format", choices=("tsv", "waveform"), default="tsv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_trace)
    return ap


def read_config(path) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def _apply_config(parser, argv, cfg: dict):
    """Re-parse with config values as defaults; explicit flags still win."""
    args = parser.parse_args(argv)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions + parser._actions}
    defaults = {}
    for k, v in cfg.items():
        act = actions.get(k)
        if act is None:
            raise UsageError(f"unknown config key {k!r} for '{args.command}'")
        if act.const is not None and act.nargs == 0:
            defaults[k] = v.lower() in ("1", "true", "yes", "on")
        else:
            defaults[k] = act.type(v) if act.type else v
    sub.set_defaults(**{k: v for k, v in defaults.items() if k in {a.dest for a in sub._actions}})
    parser.set_defaults(**{k: v for k, v in defaults.items() if k in {a.dest for a in parser._actions}})
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        try:
            args = parser.parse_args(argv)
            if args.config:
                args = _apply_config(parser, argv, read_config(args.config))
        except SystemExit as e:  # --help, --version and argparse usage errors
            return e.code if isinstance(e.code, int) else EXIT_USAGE
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        man = Manifest(args.command, args)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            rc = args.func(args, man)
        for w in caught:
            man.warnings[w.category.__name__] += 1
            print(f"sigsim: warning: {w.message}", file=sys.stderr)
        _emit_manifest(args, man)
        return rc
    except UsageError as e:
        print(f"sigsim: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FitError, StepTooCoarse, FloatingPointError) as e:
        print(f"sigsim: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError, TraceError, BenchSyntaxError, NetlistError, CorruptModel,
            FormatVersionMismatch, ModelMissing) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"sigsim: data error: {msg}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
