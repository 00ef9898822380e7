"""Command-line pipeline: graphs, corpora, probes, scoring, percolation, fits.

Every subcommand reads an optional key=value config file, applies flag
overrides, and writes its outputs into a run directory together with a
manifest (resolved config, config hash, library versions). Primary outputs
contain no timestamps, so re-running with an identical manifest reproduces
them byte for byte. Exit codes: 0 success, 2 config error (the message names
the offending key), 1 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, analysis, bridge, corpus, evaluation, grammar, percolation, typegraph

GRID_HELP = "pgrid syntax start:stop:count (log-spaced); exponent grids start:stop:step"


class ConfigError(Exception):
    pass


def _read_config(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    values: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as ex:
        raise ConfigError(f"config: cannot read {path}: {ex}") from None
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigError(f"config key {line!r}: expected key=value")
        values[key.strip()] = val.strip()
    return values


def _resolve(args: argparse.Namespace, config: dict[str, str], spec: dict[str, tuple]) -> dict:
    """Merge flag > config > default; reject unknown config keys."""
    unknown = set(config) - set(spec)
    if unknown:
        raise ConfigError(f"config key {sorted(unknown)[0]!r} is not recognized")
    out = {}
    for key, (typ, default) in spec.items():
        flag_val = getattr(args, key.replace("-", "_"), None)
        if flag_val is not None:
            out[key] = flag_val
        elif key in config:
            try:
                out[key] = typ(config[key])
            except ValueError as ex:
                raise ConfigError(f"config key {key!r}: {ex}") from None
        else:
            out[key] = default
    return out


def _parse_loggrid(text: str) -> np.ndarray:
    try:
        start, stop, count = text.split(":")
        return np.geomspace(float(start), float(stop), int(count))
    except ValueError:
        raise ConfigError(f"config key 'pgrid': cannot parse {text!r} (start:stop:count)") from None


def _parse_stepgrid(text: str) -> np.ndarray:
    try:
        start, stop, step = (float(v) for v in text.split(":"))
        return np.arange(start, stop + 1e-12, step)
    except ValueError:
        raise ConfigError(f"exponent grid: cannot parse {text!r} (start:stop:step)") from None


def _mix(text: str) -> tuple[float, float, float]:
    parts = tuple(float(v) for v in text.split(","))
    if len(parts) != 3:
        raise ValueError("mix needs three comma-separated fractions")
    return parts  # type: ignore[return-value]


def _write_manifest(out_dir: Path, subcommand: str, resolved: dict) -> None:
    config_str = json.dumps(resolved, sort_keys=True, default=str)
    manifest = {
        "subcommand": subcommand,
        "config": json.loads(config_str),
        "config_hash": hashlib.sha256(config_str.encode()).hexdigest(),
        "versions": {
            "perclang": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


GRAPH_SPEC = {
    "entities": (int, 900),
    "properties": (int, 18000),
    "classes": (int, 10),
    "verbs": (int, 200),
    "edge_fraction": (float, 0.15),
    "seed": (int, 0),
}


def _graph_params(resolved: dict) -> typegraph.TypeGraphParams:
    return typegraph.TypeGraphParams(
        n_entities=resolved["entities"],
        n_desc_props=resolved["properties"],
        n_classes=resolved["classes"],
        n_verbs=resolved["verbs"],
        edge_fraction=resolved["edge_fraction"],
        seed=resolved["seed"],
    )


def cmd_gen_graph(args) -> int:
    resolved = _resolve(args, _read_config(args.config), GRAPH_SPEC)
    out = _out_dir(args)
    graph = typegraph.build_typegraph(_graph_params(resolved))
    typegraph.save_typegraph(graph, out / "graph.npz")
    (out / "graph_summary.txt").write_text(typegraph.summarize_typegraph(graph))
    _write_manifest(out, "gen-graph", resolved)
    return 0


GEN_CORPUS_SPEC = dict(
    GRAPH_SPEC,
    graph=(str, ""),
    batches=(int, 10),
    batch_size=(int, corpus.DEFAULT_BATCH_SIZE),
    mix=(_mix, corpus.DEFAULT_MIX),
    stream_seed=(int, 0),
)


def cmd_gen_corpus(args) -> int:
    resolved = _resolve(args, _read_config(args.config), GEN_CORPUS_SPEC)
    out = _out_dir(args)
    if resolved["graph"]:
        graph = typegraph.load_typegraph(resolved["graph"])
    else:
        graph = typegraph.build_typegraph(_graph_params(resolved))
    typegraph.save_typegraph(graph, out / "graph.npz")
    vocab = corpus.build_vocabulary(graph)
    corpus.write_vocabulary(out / "vocab.txt", vocab)
    gram = grammar.default_grammar()
    stream = corpus.sample_stream(
        graph, gram, vocab,
        mix=tuple(resolved["mix"]),
        batch_size=resolved["batch_size"],
        seed=resolved["stream_seed"],
    )
    examples = [ex for _ in range(resolved["batches"]) for ex in next(stream)]
    corpus.write_examples(out / "corpus.jsonl", examples, vocab)
    corpus.write_stream_config(
        out / "stream.cfg",
        corpus.StreamConfig(
            seed=resolved["stream_seed"],
            batch_size=resolved["batch_size"],
            mix=tuple(resolved["mix"]),
            graph_path="graph.npz",
        ),
    )
    _write_manifest(out, "gen-corpus", resolved)
    return 0


PROBES_SPEC = {
    "graph": (str, ""),
    "family": (str, "all"),
    "count": (int, 1000),
    "probe_seed": (int, 0),
}


def cmd_probes(args) -> int:
    resolved = _resolve(args, _read_config(args.config), PROBES_SPEC)
    if not resolved["graph"]:
        raise ConfigError("config key 'graph': a graph file is required")
    out = _out_dir(args)
    graph = typegraph.load_typegraph(resolved["graph"])
    vocab = corpus.build_vocabulary(graph)
    gram = grammar.default_grammar()
    families = (
        evaluation.PROBE_FAMILIES if resolved["family"] == "all" else (resolved["family"],)
    )
    for family in families:
        probes = evaluation.build_probes(
            graph, gram, vocab, resolved["count"], resolved["probe_seed"], family
        )
        evaluation.write_probes(out / f"probes_{family}.jsonl", probes)
    _write_manifest(out, "probes", resolved)
    return 0


EVAL_SPEC = {
    "graph": (str, ""),
    "records": (str, ""),
    "probes": (str, ""),
    "responses": (str, ""),
}


def cmd_eval(args) -> int:
    resolved = _resolve(args, _read_config(args.config), EVAL_SPEC)
    if not resolved["graph"]:
        raise ConfigError("config key 'graph': a graph file is required")
    if not resolved["records"] and not resolved["responses"]:
        raise ConfigError("config key 'records': need records and/or responses to score")
    if bool(resolved["probes"]) != bool(resolved["responses"]):
        raise ConfigError("config key 'responses': probes and responses go together")
    out = _out_dir(args)
    graph = typegraph.load_typegraph(resolved["graph"])
    vocab = corpus.build_vocabulary(graph)
    gram = grammar.default_grammar()
    reports: dict[int, evaluation.MetricReport] = {}

    def merge(new_reports):
        for rep in new_reports:
            base = reports.setdefault(rep.iteration, evaluation.MetricReport(rep.iteration, {}, {}))
            base.values.update(rep.values)
            base.counts.update(rep.counts)

    if resolved["records"]:
        records = evaluation.read_records(resolved["records"])
        merge(evaluation.score_generations(records, gram, graph, vocab))
    if resolved["responses"]:
        requests = evaluation.read_probes(resolved["probes"])
        responses = evaluation.read_responses(resolved["responses"])
        merge(evaluation.score_probes(requests, responses, graph))
    evaluation.write_metrics_csv(out / "metrics.csv", [reports[i] for i in sorted(reports)])
    _write_manifest(out, "eval", resolved)
    return 0


PERCOLATE_SPEC = {
    "pgrid": (str, "1e-5:1e-3:40"),
    "trials": (int, 20),
    "seed": (int, 0),
    "workers": (int, 1),
    "graph": (str, ""),
    "poisson": (str, ""),  # "n_left,n_right,lambda1,lambda2"
}


def _percolate_one(payload):
    (n_left, n_right, p_chunk, trials, seed, base, offset) = payload
    curve = percolation.simulate_percolation(
        n_left, n_right, p_chunk, trials, seed, base=base, p_offset=offset
    )
    return curve


def cmd_percolate(args) -> int:
    resolved = _resolve(args, _read_config(args.config), PERCOLATE_SPEC)
    out = _out_dir(args)
    p_grid = _parse_loggrid(resolved["pgrid"])
    sources = [bool(args.complete), bool(resolved["graph"]), bool(resolved["poisson"])]
    if sum(sources) != 1:
        raise ConfigError("config key 'graph': choose exactly one of --complete, graph, poisson")
    if args.complete:
        n_left, n_right = args.complete
        base: percolation.Base = percolation.CompleteBase()
    elif resolved["graph"]:
        tg = typegraph.load_typegraph(resolved["graph"])
        base = percolation.typegraph_base(tg)
        n_left, n_right = tg.n_entities, tg.n_desc_props
    else:
        try:
            nl, nr, lam1, lam2 = resolved["poisson"].split(",")
            n_left, n_right = int(nl), int(nr)
            base = percolation.ConfigurationBase(
                percolation.DegreeDistribution.poisson(float(lam1)),
                percolation.DegreeDistribution.poisson(float(lam2)),
            )
        except ValueError:
            raise ConfigError(
                "config key 'poisson': expected n_left,n_right,lambda1,lambda2"
            ) from None

    workers = max(1, resolved["workers"])
    if workers == 1:
        curve = percolation.simulate_percolation(
            n_left, n_right, p_grid, resolved["trials"], resolved["seed"], base=base
        )
    else:
        chunks = np.array_split(np.arange(len(p_grid)), workers)
        payloads = [
            (n_left, n_right, p_grid[idx], resolved["trials"], resolved["seed"], base, int(idx[0]))
            for idx in chunks if len(idx)
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_percolate_one, payloads))
        curve = percolation.PercolationCurve(
            p=np.concatenate([c.p for c in parts]),
            largest_mean=np.concatenate([c.largest_mean for c in parts]),
            largest_std=np.concatenate([c.largest_std for c in parts]),
            mean_finite=np.concatenate([c.mean_finite for c in parts]),
            n_left=n_left,
            n_right=n_right,
            trials=resolved["trials"],
        )
    percolation.curve_to_csv(curve, out / "curve.csv")
    _write_manifest(out, "percolate", resolved)
    return 0


BRIDGE_SPEC = {
    "entities": (int, 900),
    "classes": (int, 10),
    "verbs": (int, 200),
    "edge_fraction": (float, 0.15),
    "seed": (int, 0),
    "properties_list": (str, "14800,18000,21200,27600,32400,38800"),
    "batch_size": (int, 128),
    "calibration_sentences": (int, bridge.DEFAULT_CALIBRATION_SENTENCES),
    "metric": (str, ""),
}


def cmd_bridge(args) -> int:
    resolved = _resolve(args, _read_config(args.config), BRIDGE_SPEC)
    out = _out_dir(args)
    observed: dict[float, float] = {}
    if args.metrics:
        if not resolved["metric"]:
            raise ConfigError("config key 'metric': needed to extract observed breakpoints")
        for path in args.metrics:
            label, curve = _metric_curve(path, resolved["metric"])
            observed[label] = analysis.bilinear_fit(curve).breakpoint
    rows = []
    for k_text in resolved["properties_list"].split(","):
        n_props = int(k_text)
        params = typegraph.TypeGraphParams(
            n_entities=resolved["entities"],
            n_desc_props=n_props,
            n_classes=resolved["classes"],
            n_verbs=resolved["verbs"],
            edge_fraction=resolved["edge_fraction"],
            seed=resolved["seed"],
        )
        t_star, p_c = bridge.predicted_transition(
            params,
            batch_size=resolved["batch_size"],
            calibration_sentences=resolved["calibration_sentences"],
        )
        rows.append((n_props, t_star, p_c, observed.get(float(n_props), float("nan"))))
    with open(out / "predicted.csv", "w", encoding="utf-8") as fh:
        fh.write("# schema: perclang/bridge/v1\n")
        fh.write("properties,predicted_iteration,threshold_p,observed_breakpoint\n")
        for row in rows:
            fh.write(f"{row[0]},{row[1]!r},{row[2]!r},{row[3]!r}\n")
    _write_manifest(out, "bridge", resolved)
    return 0


def _metric_curve(path: str, metric: str) -> tuple[float, analysis.Curve]:
    """(label, curve) for one metric from a metrics CSV; label from sibling manifest."""
    reports = evaluation.read_metrics_csv(path)
    xs = [r.iteration for r in reports if metric in r.values]
    ys = [r.values[metric] for r in reports if metric in r.values]
    if not xs:
        raise ConfigError(f"config key 'metric': {metric!r} absent from {path}")
    label = 0.0
    manifest_path = Path(path).parent / "manifest.json"
    if manifest_path.exists():
        cfg = json.loads(manifest_path.read_text()).get("config", {})
        label = float(cfg.get("properties", 0.0))
    xs_arr = np.asarray(xs, dtype=float)
    if xs_arr[0] <= 0:  # iteration 0 cannot sit on a log axis
        xs_arr = xs_arr + 1.0
    return label, analysis.Curve(xs_arr, np.asarray(ys, dtype=float), label or 1.0)


def cmd_analyze(args) -> int:
    resolved = _resolve(args, _read_config(args.config), {"metric": (str, "")})
    out = _out_dir(args)
    metric = resolved["metric"]
    if args.mode in ("fit", "collapse") and not metric:
        raise ConfigError("config key 'metric': required for fit/collapse")

    if args.mode == "fit":
        with open(out / "fits.csv", "w", encoding="utf-8") as fh:
            fh.write("# schema: perclang/fits/v1\n")
            fh.write("file,metric,label,breakpoint,left_slope,right_slope,mse\n")
            for path in args.inputs:
                label, curve = _metric_curve(path, metric)
                fit = analysis.bilinear_fit(curve)
                fh.write(
                    f"{path},{metric},{label!r},{fit.breakpoint!r},"
                    f"{fit.left_slope!r},{fit.right_slope!r},{fit.mse!r}\n"
                )
    elif args.mode == "powerlaw":
        points = []
        with open(args.inputs[0], "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#") or line[0].isalpha():
                    continue
                x, y, *_ = line.split(",")
                points.append((float(x), float(y)))
        fit = analysis.powerlaw_fit(points)
        with open(out / "powerlaw.csv", "w", encoding="utf-8") as fh:
            fh.write("# schema: perclang/powerlaw/v1\n")
            fh.write("exponent,prefactor,residual\n")
            fh.write(f"{fit.exponent!r},{fit.prefactor!r},{fit.residual!r}\n")
    else:
        curves = []
        for i, path in enumerate(args.inputs):
            label, curve = _metric_curve(path, metric)
            if args.labels:
                labels = [float(v) for v in args.labels.split(",")]
                if len(labels) != len(args.inputs):
                    raise ConfigError("config key 'labels': one label per input file")
                curve = analysis.Curve(curve.x, curve.y, labels[i])
            curves.append(curve)
        alpha_grid = _parse_stepgrid(args.alpha) if args.alpha else analysis.DEFAULT_EXPONENT_GRID
        beta_grid = _parse_stepgrid(args.beta) if args.beta else None
        result = analysis.collapse_scan(curves, alpha_grid, beta_grid)
        with open(out / "collapse.csv", "w", encoding="utf-8") as fh:
            fh.write("# schema: perclang/collapse/v1\n")
            fh.write(f"# best alpha={result.alpha!r} beta={result.beta!r} score={result.score!r}\n")
            fh.write("alpha,beta,score\n")
            for alpha, beta, score in result.table:
                fh.write(f"{alpha!r},{beta!r},{score!r}\n")
        print(f"best alpha={result.alpha} beta={result.beta} score={result.score:.6g}")
    _write_manifest(out, f"analyze-{args.mode}", resolved | {"metric": metric})
    return 0


def _add_common(sub, spec: dict[str, tuple]):
    sub.add_argument("--config", help="key=value config file")
    sub.add_argument("--out", required=True, help="run directory for outputs")
    for key, (typ, _default) in spec.items():
        sub.add_argument("--" + key.replace("_", "-"), type=typ, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="perclang", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    s = subs.add_parser("gen-graph", help="build and save a type graph")
    _add_common(s, GRAPH_SPEC)
    s.set_defaults(func=cmd_gen_graph)

    s = subs.add_parser("gen-corpus", help="graph + vocabulary + task corpus")
    _add_common(s, GEN_CORPUS_SPEC)
    s.set_defaults(func=cmd_gen_corpus)

    s = subs.add_parser("probes", help="emit probe request files")
    _add_common(s, PROBES_SPEC)
    s.set_defaults(func=cmd_probes)

    s = subs.add_parser("eval", help="score generation records and probe responses")
    _add_common(s, EVAL_SPEC)
    s.set_defaults(func=cmd_eval)

    s = subs.add_parser("percolate", help="simulate a percolation curve; " + GRID_HELP)
    _add_common(s, PERCOLATE_SPEC)
    s.add_argument("--complete", nargs=2, type=int, metavar=("N_LEFT", "N_RIGHT"))
    s.set_defaults(func=cmd_percolate)

    s = subs.add_parser("bridge", help="predicted transition iterations per property count")
    _add_common(s, BRIDGE_SPEC)
    s.add_argument("--metrics", nargs="*", help="metrics.csv files for observed breakpoints")
    s.set_defaults(func=cmd_bridge)

    s = subs.add_parser("analyze", help="fit | powerlaw | collapse over metrics files")
    s.add_argument("mode", choices=("fit", "powerlaw", "collapse"))
    s.add_argument("inputs", nargs="+", help="metrics.csv files (or x,y csv for powerlaw)")
    _add_common(s, {"metric": (str, "")})
    s.add_argument("--alpha", help="alpha grid start:stop:step")
    s.add_argument("--beta", help="beta grid start:stop:step")
    s.add_argument("--labels", help="comma-separated curve labels overriding manifests")
    s.set_defaults(func=cmd_analyze)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as ex:
        print(f"error: {ex}", file=sys.stderr)
        return 2
    except Exception as ex:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(ex).__name__}: {ex}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
