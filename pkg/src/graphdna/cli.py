"""Command-line front end: simulate, encode, power, train, eval, bench, sweep, bounds.

Every command writes its artifacts through a staging directory, so a failed
run leaves nothing behind, and finishes with a JSON manifest holding every
resolved parameter. Passing that manifest back through ``--config`` reruns
the command with identical settings.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import shutil
import sys
import tempfile
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import bounds as bnd
from . import dna as dna_mod
from . import factorize as fz
from . import graph as gr
from . import metrics, plotting, synth
from .errors import DivergenceError, GraphDNAError, InputError, NnzCapError, UndefinedMetricError
from .ratings import RatingData, to_implicit

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_DIVERGENCE, EXIT_RESOURCE = 0, 2, 3, 4, 5

METHODS = ("mf", "grmf", "grmf_power", "grmf_dna", "wmf", "wmf_dna", "cofactor", "cofactor_dna")
NEEDS_GRAPH = {"grmf", "grmf_power", "grmf_dna", "wmf_dna", "cofactor", "cofactor_dna"}
USES_DNA = {"grmf_dna", "wmf_dna", "cofactor_dna"}
IMPLICIT = {"wmf", "wmf_dna"}

# keys that name files; they are recorded in the manifest but never read back from it
PATH_KEYS = {"out", "report", "graph", "ratings", "dna", "model", "baseline", "graph_model",
             "triplets", "config", "figure"}


class UsageError(GraphDNAError):
    kind = "usage"


# ----------------------------------------------------------------------
# parsing helpers

def _floats(text):
    return [float(x) for x in str(text).replace(",", " ").split()]


def _ints(text):
    return [int(x) for x in str(text).replace(",", " ").split()]


def _theta(text):
    return math.inf if str(text).strip().lower() in ("inf", "+inf", "none", "off") else float(text)


def read_config(path) -> dict:
    """Flat ``key = value`` file, or a manifest written by an earlier run."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        try:
            params = json.loads(text)["params"]
        except (ValueError, KeyError) as exc:
            raise InputError(f"{path}: not a run manifest") from exc
        return {k: v for k, v in params.items() if k not in PATH_KEYS}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


def _coerce(parser, dest, value):
    for act in parser._actions:
        if act.dest == dest:
            if value is None or act.type is None or not isinstance(value, str):
                return value
            return act.type(value)
    raise UsageError(f"unknown config key {dest!r}")


def _add_common(p):
    p.add_argument("--config", help="flat key = value file (or an earlier manifest)")
    p.add_argument("--threads", type=int, default=None, help="cap on BLAS worker threads")
    p.add_argument("--seed", type=int, default=0)


def _add_dna(p):
    p.add_argument("--c", type=int, default=500, help="bits per signature")
    p.add_argument("--k", type=int, default=4, help="hash functions")
    p.add_argument("--d", type=int, default=1, help="propagation depth")
    p.add_argument("--theta", type=_theta, default=math.inf, help="saturation cap (inf = off)")


def _add_train(p):
    p.add_argument("--method", choices=METHODS, default="grmf")
    p.add_argument("--rank", type=int, default=10)
    p.add_argument("--lambda-l", type=float, default=0.1)
    p.add_argument("--lambda-g", type=float, default=0.1)
    p.add_argument("--rho", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--graph", help="edge list (required by graph methods)")
    p.add_argument("--dna", help="DNA matrix file; encoded on the fly from --c/--k/--d when absent")
    p.add_argument("--weights", type=_floats, default=[0.0, 1.0], help="power weights w_1..w_K (G^1..G^K)")
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--nnz-cap", type=int, default=gr.DEFAULT_NNZ_CAP)
    p.add_argument("--implicit-threshold", type=float, default=None,
                   help="binarize explicit ratings at this value")
    _add_dna(p)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="graphdna", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthetic ratings over a smoothed random graph")
    _add_common(p)
    p.add_argument("--out", required=True, help="output prefix (<out>.ratings, <out>.graph)")
    for name, default in synth.SynthConfig().as_dict().items():
        if name == "seed":
            continue
        flag = "--" + name.replace("_", "-")
        p.add_argument(flag, type=type(default), default=default)
    p.add_argument("--implicit-threshold", type=float, default=None)

    p = sub.add_parser("encode", help="Bloom-filter DNA of a graph")
    _add_common(p)
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--triplets", help="also write (i, bit) pairs here")
    _add_dna(p)

    p = sub.add_parser("power", help="sum_i w_i G^i with thresholding")
    _add_common(p)
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--weights", type=_floats, required=True, help="w_1..w_K")
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--nnz-cap", type=int, default=gr.DEFAULT_NNZ_CAP)

    p = sub.add_parser("train", help="fit one factorization model")
    _add_common(p)
    p.add_argument("--ratings", required=True)
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--report", help="text report; a history figure is written next to it")
    _add_train(p)

    p = sub.add_parser("eval", help="RMSE / RGG or ranking metrics for a trained model")
    _add_common(p)
    p.add_argument("--ratings", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--baseline", help="model trained without a graph (for RGG)")
    p.add_argument("--graph-model", help="model trained on the first-order graph (for RGG)")
    p.add_argument("--split", default="test", choices=("train", "validation", "test"))
    p.add_argument("--ks", type=_ints, default=[1, 5])
    p.add_argument("--neutral", type=float, default=0.0)
    p.add_argument("--half-life", type=float, default=5.0)
    p.add_argument("--report")

    p = sub.add_parser("bench", help="encoding wall time against depth")
    _add_common(p)
    p.add_argument("--graph", help="edge list; an Erdos-Renyi graph is drawn when absent")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--p", type=float, default=1e-3)
    p.add_argument("--depths", type=_ints, default=[1, 2, 3, 4])
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--c", type=int, default=500)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--theta", type=_theta, default=math.inf)
    p.add_argument("--report")

    p = sub.add_parser("sweep", help="grid search on validation RMSE")
    _add_common(p)
    p.add_argument("--ratings", required=True)
    p.add_argument("--out", help="best model file")
    p.add_argument("--report")
    p.add_argument("--lambda-l-grid", type=_floats, default=list(fz.LAMBDA_GRID))
    p.add_argument("--lambda-g-grid", type=_floats, default=list(fz.LAMBDA_GRID))
    _add_train(p)

    p = sub.add_parser("bounds", help="Monte-Carlo check of the overlap envelope")
    _add_common(p)
    p.add_argument("--cs", type=_ints, default=list(bnd.DEFAULT_C))
    p.add_argument("--ks", type=_ints, default=list(bnd.DEFAULT_K))
    p.add_argument("--shares", type=_floats, default=list(bnd.DEFAULT_SHARES))
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--delta", type=float, default=0.3)
    p.add_argument("--report")
    return ap


def parse(argv):
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.config:
        sub = ap._subparsers._group_actions[0].choices[args.command]
        cfg = read_config(args.config)
        cfg.pop("command", None)
        explicit = {a.dest for a in sub._actions if any(s in argv for s in a.option_strings)}
        for key, val in cfg.items():
            if key in explicit:
                continue
            setattr(args, key, _coerce(sub, key, val))
    return args


# ----------------------------------------------------------------------
# output plumbing

class Stage:
    """Collects outputs in a scratch directory and moves them into place at the end."""

    def __init__(self):
        self.tmp = None
        self.final = {}

    def path(self, final) -> str:
        final = Path(final)
        if self.tmp is None:
            final.parent.mkdir(parents=True, exist_ok=True)
            self.tmp = Path(tempfile.mkdtemp(prefix=".graphdna-", dir=final.parent))
        staged = self.tmp / f"{len(self.final)}_{final.name}"
        self.final[str(staged)] = final
        return str(staged)

    def commit(self) -> list[str]:
        written = []
        for staged, final in self.final.items():
            base = Path(staged)
            # a writer may add sibling files (e.g. split index lists) next to its path
            for sib in sorted(base.parent.glob(base.name + "*")):
                target = final.with_name(final.name + sib.name[len(base.name):])
                os.replace(sib, target)
                written.append(str(target))
        self.discard()
        return written

    def discard(self):
        if self.tmp is not None:
            shutil.rmtree(self.tmp, ignore_errors=True)
            self.tmp = None


@contextmanager
def staged():
    st = Stage()
    try:
        yield st
    except BaseException:
        st.discard()
        raise


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _jsonable(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def write_manifest(path, args, argv, wall, extra, outputs):
    params = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in ("threads",)}
    doc = {
        "command": args.command,
        "argv": list(argv),
        "params": params,
        "seed": args.seed,
        "wall_time_s": wall,
        "outputs": {p: _sha256(p) for p in outputs if os.path.isfile(p)},
        **{k: _jsonable(v) for k, v in extra.items()},
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
    return doc


def block(name: str, lines) -> str:
    body = "\n".join(lines)
    return f"--- begin {name} ---\n{body}\n--- end {name} ---"


def table(rows, cols) -> list[str]:
    def fmt(v):
        if isinstance(v, (bool, np.bool_)):
            return str(bool(v)).lower()
        if isinstance(v, (float, np.floating)):
            return "inf" if math.isinf(v) else f"{v:.6g}"
        return str(v)
    return ["\t".join(cols)] + ["\t".join(fmt(r[c]) for c in cols) for r in rows]


def emit(text: str, report, st: Stage | None = None):
    print(text)
    if report:
        target = st.path(report) if st is not None else report
        with open(target, "w") as fh:
            fh.write(text + "\n")


def _figure_path(report, default_stem, suffix=".png"):
    if report:
        return str(Path(report).with_suffix(suffix))
    return None if default_stem is None else default_stem + suffix


# ----------------------------------------------------------------------
# shared model plumbing

def load_ratings(args) -> RatingData:
    data = RatingData.load(args.ratings)
    thr = getattr(args, "implicit_threshold", None)
    if thr is not None and data.mode == "explicit":
        data = to_implicit(data, thr)
    return data


def load_graph(path, n=None) -> gr.SparseGraph:
    return gr.load_edges(path, n=n)


def resolve_dna(args, g) -> dna_mod.DnaMatrix:
    if args.dna:
        b = dna_mod.load(args.dna)
        if b.n != g.n:
            raise InputError(f"DNA has {b.n} rows, graph has {g.n} nodes")
        return b
    return dna_mod.encode(g, dna_mod.DnaConfig(args.c, args.k, args.d, args.theta, args.seed))


def train_config(args, **over) -> fz.TrainConfig:
    kw = dict(rank=args.rank, lambda_l=args.lambda_l, lambda_g=args.lambda_g, rho=args.rho,
              epochs=args.epochs, seed=args.seed)
    kw.update(over)
    return fz.TrainConfig(**kw)


def prepare(args, data):
    """The graph-like object a method consumes, plus nnz bookkeeping."""
    method = args.method
    if method in IMPLICIT and data.mode != "implicit":
        raise InputError(f"{method} needs implicit data; pass --implicit-threshold")
    if method not in IMPLICIT and method not in ("cofactor", "cofactor_dna") and data.mode == "implicit":
        raise InputError(f"{method} expects explicit ratings")
    if method in NEEDS_GRAPH and not args.graph:
        raise UsageError(f"method {method} requires --graph")
    nnz = {"nnz_train": data.count("train")}
    if method in ("mf", "wmf") and not args.graph:
        return None, nnz
    g = load_graph(args.graph, n=data.n) if args.graph else None
    if g is not None and g.n != data.n:
        raise InputError(f"graph has {g.n} nodes, ratings have {data.n} users")
    if method in ("mf", "wmf"):
        return None, nnz
    nnz["nnz_graph"] = g.nnz
    if method == "grmf_power":
        p = gr.power_combine(g, args.weights, args.threshold, args.nnz_cap)
        nnz["nnz_power"] = p.nnz
        return p, nnz
    if method in USES_DNA:
        b = resolve_dna(args, g)
        nnz["nnz_dna"] = b.nnz
        if method == "cofactor_dna":
            return b, nnz
        return gr.augment(g, b), nnz
    return g, nnz


def fit(method, data, side, cfg):
    if method in ("cofactor", "cofactor_dna"):
        return fz.train_cofactor(data, side, cfg)
    if method in IMPLICIT:
        return fz.train_wmf(data, side, cfg)
    return fz.train_grmf(data, side, cfg)


# ----------------------------------------------------------------------
# commands

def cmd_simulate(args, st):
    cfg = synth.SynthConfig(**{k: getattr(args, k) for k in synth.SynthConfig().as_dict()})
    data, g, _ = synth.generate(cfg)
    if args.implicit_threshold is not None:
        data = to_implicit(data, args.implicit_threshold)
    data.save(st.path(f"{args.out}.ratings"))
    gr.save_edges(g, st.path(f"{args.out}.graph"))
    counts = {s: data.count(s) for s in ("train", "validation", "test")}
    lines = metrics.format_kv({"n": data.n, "m": data.m, "edges": g.nnz // 2,
                               "mean_degree": float(g.degrees().mean()), **counts})
    emit(block("simulate", lines), None)
    return {"nnz": {"nnz_graph": g.nnz, "nnz_ratings": len(data)}}, f"{args.out}.manifest.json"


def cmd_encode(args, st):
    g = load_graph(args.graph)
    cfg = dna_mod.DnaConfig(args.c, args.k, args.d, args.theta, args.seed)
    t0 = time.perf_counter()
    b = dna_mod.encode(g, cfg)
    secs = time.perf_counter() - t0
    b.save(st.path(args.out))
    if args.triplets:
        dna_mod.save_triplets(b, st.path(args.triplets))
    pop = b.popcounts()
    lines = metrics.format_kv({"n": b.n, "c": b.c, "k": b.k, "d": b.d, "nnz": b.nnz,
                               "mean_popcount": float(pop.mean()), "max_popcount": int(pop.max(initial=0)),
                               "encode_seconds": secs})
    emit(block("encode", lines), None)
    return {"nnz": {"nnz_graph": g.nnz, "nnz_dna": b.nnz}}, f"{args.out}.manifest.json"


def cmd_power(args, st):
    g = load_graph(args.graph)
    p = gr.power_combine(g, args.weights, args.threshold, args.nnz_cap)
    gr.save_edges(p, st.path(args.out))
    emit(block("power", metrics.format_kv({"n": p.n, "nnz": p.nnz, "nnz_graph": g.nnz})), None)
    return {"nnz": {"nnz_graph": g.nnz, "nnz_power": p.nnz}}, f"{args.out}.manifest.json"


def _rating_lines(model, data):
    vals = {}
    for split in ("train", "validation", "test"):
        if data.count(split):
            vals[f"rmse_{split}"] = metrics.model_rmse(model, data, split)
    return vals


def cmd_train(args, st):
    data = load_ratings(args)
    side, nnz = prepare(args, data)
    model = fit(args.method, data, side, train_config(args))
    model.save(st.path(args.out))
    vals = {"method": args.method, "epochs": args.epochs,
            "objective": float(model.history[-1]) if model.history else float("nan")}
    if data.mode == "explicit":
        vals.update(_rating_lines(model, data))
    text = block("train", metrics.format_kv(vals))
    emit(text, args.report, st)
    if args.report and model.history:
        plotting.plot_history(model.history, st.path(_figure_path(args.report, None)))
    return {"nnz": nnz, "history": [float(h) for h in model.history]}, f"{args.out}.manifest.json"


def cmd_eval(args, st):
    data = load_ratings(args)
    model = fz.FactorModel.load(args.model)
    if model.n_users != data.n or model.m != data.m:
        raise InputError("model shape does not match the ratings file")
    if data.mode == "implicit":
        rep = metrics.ranking_metrics(model, data, ks=args.ks, neutral=args.neutral,
                                      half_life=args.half_life, split=args.split)
        vals = dict(rep.values)
        vals.update(rep.counts)
    else:
        vals = {"rmse": metrics.model_rmse(model, data, args.split)}
        if args.baseline and args.graph_model:
            base = metrics.model_rmse(fz.FactorModel.load(args.baseline), data, args.split)
            first = metrics.model_rmse(fz.FactorModel.load(args.graph_model), data, args.split)
            vals.update(rmse_no_graph=base, rmse_graph=first, rgg=metrics.rgg(base, first, vals["rmse"]))
    text = block("eval", metrics.format_kv(vals))
    emit(text, args.report, st)
    target = args.report or args.model
    return {"metrics": vals}, f"{target}.eval.manifest.json"


def cmd_bench(args, st):
    if args.graph:
        g = load_graph(args.graph)
    else:
        g = gr.erdos_renyi(args.n, args.p, np.random.default_rng(args.seed))
    rows = []
    for d in args.depths:
        cfg = dna_mod.DnaConfig(args.c, args.k, d, args.theta, args.seed)
        best = math.inf
        for _ in range(max(1, args.repeats)):
            t0 = time.perf_counter()
            b = dna_mod.encode(g, cfg)
            best = min(best, time.perf_counter() - t0)
        rows.append({"d": d, "seconds": best, "nnz": b.nnz, "mean_popcount": float(b.popcounts().mean())})
    base = rows[0]["seconds"]
    for r in rows:
        r["ratio"] = r["seconds"] / base if base > 0 else math.inf
    head = metrics.format_kv({"n": g.n, "edges": g.nnz // 2, "c": args.c, "k": args.k})
    text = block("bench", head + table(rows, ["d", "seconds", "ratio", "nnz", "mean_popcount"]))
    emit(text, args.report, st)
    fig = _figure_path(args.report, None)
    if fig:
        plotting.plot_bench(rows, st.path(fig))
    stem = args.report or "bench"
    return {"nnz": {"nnz_graph": g.nnz}, "rows": rows}, f"{stem}.manifest.json"


def cmd_sweep(args, st):
    data = load_ratings(args)
    if data.count("validation") == 0:
        raise InputError("sweep selects on the validation split, which is empty")
    side, nnz = prepare(args, data)
    if args.method in ("mf", "wmf"):
        grid_g = [0.0]
    elif args.method in ("cofactor", "cofactor_dna"):
        grid_g = [args.lambda_g]
    else:
        grid_g = args.lambda_g_grid
    results, best, best_model = [], None, None
    for ll in args.lambda_l_grid:
        for lg in grid_g:
            try:
                model = fit(args.method, data, side, train_config(args, lambda_l=ll, lambda_g=lg))
            except DivergenceError:
                results.append({"lambda_l": ll, "lambda_g": lg, "val_rmse": math.nan, "test_rmse": math.nan})
                continue
            row = {"lambda_l": ll, "lambda_g": lg,
                   "val_rmse": metrics.model_rmse(model, data, "validation"),
                   "test_rmse": metrics.model_rmse(model, data, "test") if data.count("test") else math.nan}
            results.append(row)
            if best is None or row["val_rmse"] < best["val_rmse"]:
                best, best_model = row, model
    if best is None:
        raise DivergenceError("every grid point diverged")
    if args.out:
        best_model.save(st.path(args.out))
    lines = table(results, ["lambda_l", "lambda_g", "val_rmse", "test_rmse"])
    lines += metrics.format_kv({f"best_{k}": v for k, v in best.items()})
    emit(block("sweep", lines), args.report, st)
    fig = _figure_path(args.report, None)
    if fig and len(grid_g) > 0:
        plotting.plot_sweep([r for r in results if not math.isnan(r["val_rmse"])], st.path(fig))
    stem = args.out or args.report or "sweep"
    return {"nnz": nnz, "results": results, "best": best}, f"{stem}.manifest.json"


def cmd_bounds(args, st):
    rows = bnd.run_grid(args.cs, args.ks, args.shares, trials=args.trials, delta=args.delta, seed=args.seed)
    cols = bnd.report_columns()
    inside = sum(bool(r["in_envelope"]) for r in rows)
    lines = table(rows, cols) + metrics.format_kv({"points": len(rows), "in_envelope": inside})
    emit(block("bounds", lines), args.report, st)
    fig = _figure_path(args.report, None)
    if fig:
        plotting.plot_bounds(rows, st.path(fig))
    stem = args.report or "bounds"
    return {"rows": rows}, f"{stem}.manifest.json"


COMMANDS = {"simulate": cmd_simulate, "encode": cmd_encode, "power": cmd_power, "train": cmd_train,
            "eval": cmd_eval, "bench": cmd_bench, "sweep": cmd_sweep, "bounds": cmd_bounds}


def _fail(kind: str, msg: str, code: int) -> int:
    print(f"error: {kind}: {' '.join(str(msg).split())}", file=sys.stderr)
    return code


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except (InputError, OSError) as exc:
        return _fail("input", exc, EXIT_INPUT)
    try:
        with threadpool_limits(limits=args.threads), staged() as st:
            t0 = time.perf_counter()
            extra, manifest = COMMANDS[args.command](args, st)
            wall = time.perf_counter() - t0
            outputs = st.commit()
        write_manifest(manifest, args, argv, wall, extra, outputs)
    except NnzCapError as exc:
        return _fail("nnz-cap", exc, EXIT_RESOURCE)
    except MemoryError as exc:
        return _fail("resource-cap", exc or "out of memory", EXIT_RESOURCE)
    except DivergenceError as exc:
        return _fail("divergence", exc, EXIT_DIVERGENCE)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except UndefinedMetricError as exc:
        return _fail("undefined-metric", exc, EXIT_INPUT)
    except (InputError, OSError) as exc:
        return _fail("input", exc, EXIT_INPUT)
    except ValueError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
