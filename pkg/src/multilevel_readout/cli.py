"""``mlreadout`` command-line entry point.

Each subcommand produces one or more named CSV/JSONL outputs. With ``--out
DIR`` they are written atomically together with a ``<subcommand>.manifest.json``
run manifest; otherwise the data goes to standard output. Progress goes to
standard error.

Exit codes: 0 success, 1 validation/config/input error, 2 internal invariant
violation.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .ancilla import LEVELS, AncillaConfusion
from .dynamics import (DEFAULT_DT as PULSE_DT, IntegratorError, ef_pulse, ge_pulse, optimize_amplitude,
                       rabi_populations, scan_amplitude, shelving_chain, fit_qnd)
from .hmm import CorruptInputError, HiddenMarkovModel, classify_mle, forward_backward, majority_vote
from .params import ConfigError, builtin_codes, get_code, load_params
from .protocol import CLASSIFIERS, ErrorModel, ResetRunawayError, default_herald, iter_sequences, \
    qnd_experiment, run_experiment
from .readout import (DEFAULT_DT, DEFAULT_NOISE_STD, DEFAULT_T_RISE, ResponseTemplates, ShelvingCurve,
                      default_t_m_grid, misassignment_curves, shelving_rabi)
from .records import SEQUENCE_SCHEMA, read_sequences, write_sequences
from .theory import theory_curves, write_theory_csv

MANIFEST_SCHEMA = "run-manifest/1"
CSV_SCHEMAS = {
    "theory": "theory-curves/1",
    "protocol": "protocol-infidelity/1",
    "qnd": "qnd-lifetimes/1",
    "qnd_fit": "qnd-fit/1",
    "labels": "hmm-labels/1",
    "posteriors": "hmm-posteriors/1",
    "trajectory": "misassignment-curves/1",
    "confusion": "confusion-matrix/1",
    "shelving": "shelving-rabi/1",
    "pulse_scan": "pulse-scan/1",
    "pulse_chain": "pulse-chain/1",
    "prepare": "heralding-belief/1",
    "sequences": SEQUENCE_SCHEMA,
}
U64_MAX = (1 << 64) - 1


class UsageError(ValueError):
    """Bad command-line arguments (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class Output:
    name: str
    schema: str
    write: Callable
    data: bytes = b""


@dataclass
class RunContext:
    args: argparse.Namespace
    params: object
    seed: int
    trials: int | None
    threads: int
    inputs: list = field(default_factory=list)   # files whose bytes enter the input hash


# --------------------------------------------------------------------------- helpers


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _float_list(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


def _csv_writer(fh):
    import csv

    return csv.writer(fh, lineterminator="\n")


def _r(x) -> str:
    return repr(float(x))


# --------------------------------------------------------------------------- subcommands


def cmd_theory(ctx: RunContext) -> list:
    a, p = ctx.args, ctx.params
    kdt = p.kdt if a.kdt is None else a.kdt
    kut = p.kut if a.kut is None else a.kut
    d0 = p.delta_0 if a.delta0 is None else a.delta0
    d1 = p.delta_1 if a.delta1 is None else a.delta1
    curves = theory_curves(a.L, a.N_max, kdt, kut, d0, d1, include_even=a.include_even)
    return [Output("theory.csv", CSV_SCHEMAS["theory"], lambda fh: write_theory_csv(fh, curves))]


def cmd_hmm_classify(ctx: RunContext) -> list:
    a, p = ctx.args, ctx.params
    path = Path(a.input)
    if not path.is_file():
        raise FileNotFoundError(f"{path}: no such file")
    ctx.inputs.append(path)
    models = {}
    label_rows, post_rows = [], []
    for seq in read_sequences(path):
        name = a.code or seq.code
        if name is None:
            raise CorruptInputError(f"{path}: trial {seq.trial_id} has no code; pass --code")
        code = get_code(name)
        if name not in models:
            models[name] = HiddenMarkovModel.from_params(p, code)
        m = models[name]
        post = forward_backward(seq.outcomes, seq.durations, code.prior_vector(p.n_max), m.transition,
                                m.emission)
        mle = classify_mle(post, code)
        maj = majority_vote(seq.outcomes)
        label_rows.append((seq.trial_id, name, len(seq.outcomes), int(maj), int(mle),
                           float(sum(post[n] for n in code.support(1))), int(seq.stuck)))
        if a.posteriors:
            post_rows.append((seq.trial_id, post))

    def write_labels(fh):
        w = _csv_writer(fh)
        w.writerow(["trial_id", "code", "N", "majority", "mle", "posterior_1L", "stuck"])
        for r in label_rows:
            w.writerow(list(r[:5]) + [_r(r[5]), r[6]])

    def write_post(fh):
        w = _csv_writer(fh)
        w.writerow(["trial_id", "n_0", "probability"])
        for tid, post in post_rows:
            for n, q in enumerate(post):
                w.writerow([tid, n, _r(q)])

    outs = [Output("labels.csv", CSV_SCHEMAS["labels"], write_labels)]
    if a.posteriors:
        outs.append(Output("posteriors.csv", CSV_SCHEMAS["posteriors"], write_post))
    return outs


def cmd_protocol_run(ctx: RunContext) -> list:
    a, p = ctx.args, ctx.params
    names = a.code or [c.name for c in builtin_codes() if c.name.startswith("fock")]
    codes = [get_code(n) for n in names]
    classifiers = tuple(a.classifier or CLASSIFIERS)
    model = ErrorModel(fixed=a.fixed)
    trials = ctx.trials or 100_000
    tables = []
    for code in codes:
        tables.append(run_experiment(code, trials, a.N_max, p, classifiers, model, ctx.seed, ctx.threads,
                                     progress=True))

    def write(fh):
        for i, t in enumerate(tables):
            t.write_csv(fh, postselect=a.postselect_stuck, header=(i == 0))

    outs = [Output("protocol.csv", CSV_SCHEMAS["protocol"], write)]
    if a.sequences:
        def write_seq(fh):
            for code in codes:
                for logical in (0, 1):
                    for n0 in code.support(logical):
                        for s in iter_sequences(code, n0, a.N_max, a.sequences, p, model, ctx.seed):
                            fh.write(s.to_json() + "\n")

        outs.append(Output("sequences.jsonl", CSV_SCHEMAS["sequences"], write_seq))
    return outs


def cmd_protocol_qnd(ctx: RunContext) -> list:
    a, p = ctx.args, ctx.params
    if a.tau0 is not None:
        p = p.replace(storage_T1=a.tau0)
    intervals = a.intervals or [2e-6, 4e-6, 8e-6, 16e-6, 32e-6, 64e-6]
    points = qnd_experiment(p, intervals, ctx.trials or 200_000, ctx.seed)
    fit = fit_qnd([q.interval for q in points], [q.lifetime for q in points],
                  [q.lifetime_err for q in points])

    def write_points(fh):
        w = _csv_writer(fh)
        w.writerow(["interval", "lifetime", "lifetime_err", "trials"])
        for q in points:
            w.writerow([_r(q.interval), _r(q.lifetime), _r(q.lifetime_err), q.trials])

    def write_fit(fh):
        w = _csv_writer(fh)
        w.writerow(["tau0", "tau0_err", "p_d", "p_d_err"])
        w.writerow([_r(fit.tau0), _r(fit.tau0_err), _r(fit.p_d), _r(fit.p_d_err)])

    return [Output("qnd.csv", CSV_SCHEMAS["qnd"], write_points),
            Output("qnd_fit.csv", CSV_SCHEMAS["qnd_fit"], write_fit)]


def cmd_trajectory_curves(ctx: RunContext) -> list:
    a, p = ctx.args, ctx.params
    templates = ResponseTemplates(noise_std=a.noise, t_rise=a.t_rise)
    levels = [s.strip() for s in a.levels.split(",")]
    counts = misassignment_curves(levels, default_t_m_grid(a.t_max, a.dt), ctx.trials or 100_000, p,
                                  templates, ctx.seed, a.dt, ctx.threads)
    outs = [Output("trajectory_curves.csv", CSV_SCHEMAS["trajectory"], counts.write_csv)]
    if sorted(counts.counts) == [0, 1, 2, 3]:
        k = counts.best_index()
        conf = counts.confusion(k)

        def write_conf(fh):
            w = _csv_writer(fh)
            w.writerow(["t_m", "true"] + [f"P_{s}" for s in LEVELS])
            for i, s in enumerate(LEVELS):
                w.writerow([_r(counts.t_m[k]), s] + [_r(x) for x in conf.matrix[i]])

        outs.append(Output("confusion.csv", CSV_SCHEMAS["confusion"], write_conf))
    return outs


def cmd_trajectory_shelve(ctx: RunContext) -> list:
    a, p = ctx.args, ctx.params
    pi = ge_pulse().pi_amplitude
    amps = pi * np.linspace(1.0 - a.span, 1.0 + a.span, a.points)
    conf = AncillaConfusion.default()
    curves = []
    for shelved in (False, True):
        if a.ideal:
            curves.append(shelving_rabi(amps / pi, shelved, confusion=conf))
        else:
            curves.append(shelving_rabi(amps, shelved, confusion=conf,
                                        populations=lambda x, s: rabi_populations(x, s, p, dt=a.dt)))

    def write(fh):
        w = _csv_writer(fh)
        w.writerow(["amplitude", "shelved", "p_g", "p_not_g"])
        for shelved, c in zip((0, 1), curves):
            for x, pg in zip(c.amplitudes, c.p_g):
                w.writerow([_r(x), shelved, _r(pg), _r(1.0 - pg)])

    return [Output("shelving.csv", CSV_SCHEMAS["shelving"], write)]


def cmd_pulse(ctx: RunContext) -> list:
    a, p = ctx.args, ctx.params
    outs = []
    if a.chain:
        res = shelving_chain(p, a.measurement_time, dt=a.dt)

        def write_chain(fh):
            w = _csv_writer(fh)
            w.writerow(["ge_amplitude", "ef_amplitude", "P_g", "P_g_shelved", "P_g_meas", "measurement_time"])
            w.writerow([_r(res.ge.amplitude), _r(res.ef.amplitude), _r(res.p_g), _r(res.p_g_shelved),
                        _r(res.p_g_meas), _r(res.measurement_time)])

        outs.append(Output("pulse_chain.csv", CSV_SCHEMAS["pulse_chain"], write_chain))
    else:
        pulse = ge_pulse() if a.transition == "ge" else ef_pulse()
        rho0 = None
        if a.transition == "ef":
            from .dynamics import density, evolve

            ge = optimize_amplitude(ge_pulse(), p, dt=a.dt)
            rho0 = evolve(density(0), ge, p, dt=a.dt).final[0]
        scan = scan_amplitude(pulse, p, rho0, a.points, a.span, a.dt)
        outs.append(Output("pulse_scan.csv", CSV_SCHEMAS["pulse_scan"], scan.write_csv))
    return outs


def cmd_prepare(ctx: RunContext) -> list:
    a, p = ctx.args, ctx.params
    belief = default_herald(a.target_n, p, a.checks, a.initial_error)

    def write(fh):
        w = _csv_writer(fh)
        w.writerow(["check", "n", "probability", "acceptance"])
        for k, vec in enumerate(belief.history):
            acc = vec.sum()
            for n, q in enumerate(vec / acc):
                w.writerow([k, n, _r(q), _r(acc)])

    return [Output("prepare.csv", CSV_SCHEMAS["prepare"], write)]


# --------------------------------------------------------------------------- parser


def _common(defaults: bool) -> argparse.ArgumentParser:
    d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
    g = _Parser(add_help=False)
    g.add_argument("--config", metavar="PATH", default=d(None), help="YAML parameter file")
    g.add_argument("--seed", type=_u64, default=d(0), help="unsigned 64-bit master seed")
    g.add_argument("--trials", type=_positive_int, default=d(None), help="Monte Carlo trials")
    g.add_argument("--out", metavar="DIR", default=d(None), help="output directory (default: stdout)")
    g.add_argument("--threads", type=_positive_int, default=d(1), help="worker threads")
    g.add_argument("--postselect-stuck", action="store_true", default=d(False),
                   help="drop trials containing a stuck reset")
    return g


def build_parser() -> argparse.ArgumentParser:
    sub_common = _common(False)
    parser = _Parser(prog="mlreadout", description=__doc__.splitlines()[0], parents=[_common(True)])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sp = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sp.required = True

    t = sp.add_parser("theory", parents=[sub_common], help="closed-form majority-vote infidelity")
    t.add_argument("--L", type=_positive_int, required=True, help="code distance")
    t.add_argument("--N-max", dest="N_max", type=_positive_int, default=31)
    t.add_argument("--kdt", type=float, default=None)
    t.add_argument("--kut", type=float, default=None)
    t.add_argument("--delta0", type=float, default=None)
    t.add_argument("--delta1", type=float, default=None)
    t.add_argument("--include-even", action="store_true")
    t.set_defaults(func=cmd_theory)

    h = sp.add_parser("hmm", help="hidden Markov model inference")
    hs = h.add_subparsers(dest="hmm_command", metavar="ACTION", parser_class=_Parser)
    hs.required = True
    hc = hs.add_parser("classify", parents=[sub_common], help="posteriors and labels for a JSONL file")
    hc.add_argument("input", help="JSONL readout sequences")
    hc.add_argument("--code", default=None, help="override the code stored in the records")
    hc.add_argument("--posteriors", action="store_true", help="also write full posteriors")
    hc.set_defaults(func=cmd_hmm_classify)

    pr = sp.add_parser("protocol", help="repeated-readout protocol simulation")
    ps = pr.add_subparsers(dest="protocol_command", metavar="ACTION", parser_class=_Parser)
    ps.required = True
    run = ps.add_parser("run", parents=[sub_common], help="infidelity vs number of readouts")
    run.add_argument("--code", action="append", choices=[c.name for c in builtin_codes()])
    run.add_argument("--N-max", dest="N_max", type=_positive_int, default=31)
    run.add_argument("--classifier", action="append", choices=CLASSIFIERS)
    run.add_argument("--fixed", action="store_true", help="ideal one-shot votes (theory model)")
    run.add_argument("--sequences", type=int, default=0, metavar="K",
                     help="also dump the first K raw sequences per Fock input as JSONL")
    run.set_defaults(func=cmd_protocol_run)
    q = ps.add_parser("qnd", parents=[sub_common], help="photon lifetime vs readout interval")
    q.add_argument("--intervals", type=_float_list, default=None, help="comma-separated seconds")
    q.add_argument("--tau0", type=float, default=None, help="intrinsic lifetime (default storage_T1)")
    q.set_defaults(func=cmd_protocol_qnd)

    tr = sp.add_parser("trajectory", help="dispersive readout trajectories")
    ts = tr.add_subparsers(dest="trajectory_command", metavar="ACTION", parser_class=_Parser)
    ts.required = True
    cu = ts.add_parser("curves", parents=[sub_common], help="misassignment vs acquisition time")
    cu.add_argument("--levels", default="g,e,f,h")
    cu.add_argument("--t-max", dest="t_max", type=float, default=4e-6)
    cu.add_argument("--dt", type=float, default=DEFAULT_DT)
    cu.add_argument("--noise", type=float, default=DEFAULT_NOISE_STD)
    cu.add_argument("--t-rise", dest="t_rise", type=float, default=DEFAULT_T_RISE)
    cu.set_defaults(func=cmd_trajectory_curves)
    sh = ts.add_parser("shelve", parents=[sub_common], help="Rabi curves with and without shelving")
    sh.add_argument("--points", type=_positive_int, default=41)
    sh.add_argument("--span", type=float, default=0.1)
    sh.add_argument("--dt", type=float, default=PULSE_DT)
    sh.add_argument("--ideal", action="store_true", help="ideal rotations instead of master equation")
    sh.set_defaults(func=cmd_trajectory_shelve)

    pu = sp.add_parser("pulse", parents=[sub_common], help="pi-pulse simulations")
    pu.add_argument("--transition", choices=("ge", "ef"), default="ge")
    pu.add_argument("--points", type=_positive_int, default=41)
    pu.add_argument("--span", type=float, default=0.1)
    pu.add_argument("--dt", type=float, default=PULSE_DT)
    pu.add_argument("--chain", action="store_true", help="optimized g-e + e-f shelving chain")
    pu.add_argument("--measurement-time", dest="measurement_time", type=float, default=1.84e-6)
    pu.set_defaults(func=cmd_pulse)

    pp = sp.add_parser("prepare", parents=[sub_common], help="heralded Fock-state preparation")
    pp.add_argument("--target-n", dest="target_n", type=int, required=True)
    pp.add_argument("--checks", type=int, default=3)
    pp.add_argument("--initial-error", dest="initial_error", type=float, default=0.1)
    pp.set_defaults(func=cmd_prepare)
    return parser


# --------------------------------------------------------------------------- manifest


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _options(args) -> dict:
    skip = {"func", "out", "threads", "config"}
    out = {}
    for k, v in sorted(vars(args).items()):
        if k not in skip:
            out[k] = v
    return out


def input_hash(subcommand: str, options: dict, config: dict, inputs) -> str:
    h = hashlib.sha256()
    h.update(json.dumps({"subcommand": subcommand, "options": options, "config": config},
                        sort_keys=True, default=repr).encode())
    for p in inputs:
        h.update(b"\0file\0")
        h.update(Path(p).read_bytes())
    return h.hexdigest()


def build_manifest(subcommand, ctx: RunContext, outputs, out_dir: Path, duration: float) -> dict:
    options = _options(ctx.args)
    config = ctx.params.to_dict()
    return {
        "schema": MANIFEST_SCHEMA,
        "version": __version__,
        "subcommand": subcommand,
        "options": json.loads(json.dumps(options, default=repr)),
        "config": config,
        "seed": ctx.seed,
        "trials": ctx.trials,
        "input_hash": input_hash(subcommand, options, config, ctx.inputs),
        "outputs": [{"path": o.name, "schema": o.schema, "sha256": _sha256(o.data)} for o in outputs],
        "duration_s": duration,
    }


def validate_manifest(path) -> dict:
    """Load a manifest and check its schema and the checksums of its outputs."""
    path = Path(path)
    m = json.loads(path.read_text())
    if m.get("schema") != MANIFEST_SCHEMA:
        raise ValueError(f"{path}: unknown manifest schema {m.get('schema')!r}")
    for key in ("subcommand", "config", "seed", "input_hash", "outputs", "duration_s"):
        if key not in m:
            raise ValueError(f"{path}: missing key {key!r}")
    load_params(m["config"])
    for o in m["outputs"]:
        f = path.parent / o["path"]
        if _sha256(f.read_bytes()) != o["sha256"]:
            raise ValueError(f"{f}: checksum does not match manifest")
    return m


# --------------------------------------------------------------------------- main


def _subcommand_name(args) -> str:
    parts = [args.command]
    for k in ("hmm_command", "protocol_command", "trajectory_command"):
        if getattr(args, k, None):
            parts.append(getattr(args, k))
    return " ".join(parts)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    params = load_params(args.config)
    ctx = RunContext(args, params, args.seed, args.trials, args.threads)
    name = _subcommand_name(args)
    t0 = time.perf_counter()
    outputs = args.func(ctx)
    for o in outputs:
        buf = io.StringIO()
        o.write(buf)
        o.data = buf.getvalue().encode()
    duration = time.perf_counter() - t0
    if args.out is None:
        for i, o in enumerate(outputs):
            if len(outputs) > 1:
                sys.stdout.write(("\n" if i else "") + f"# {o.name}\n")
            sys.stdout.write(o.data.decode())
        sys.stdout.flush()
        return 0
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for o in outputs:
        _atomic_write(out_dir / o.name, o.data)
    manifest = build_manifest(name, ctx, outputs, out_dir, duration)
    stem = name.replace(" ", "_")
    _atomic_write(out_dir / f"{stem}.manifest.json",
                  (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    print(f"wrote {', '.join(o.name for o in outputs)} to {out_dir}", file=sys.stderr)
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except SystemExit as exc:          # --help / --version
        return int(exc.code or 0)
    except (UsageError, ConfigError, CorruptInputError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (IntegratorError, ResetRunawayError, FloatingPointError, AssertionError, RuntimeError) as exc:
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
