"""Command-line pipelines.  Every run writes its artifacts plus ``manifest.json`` to ``--out``.

Exit codes: 0 ok, 1 usage error, 2 data or parse error, 3 finished but some fits
did not converge (their results are still written, flagged).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import features as feat
from . import forest as rf
from . import neighborhoods as nb
from . import retention as ret
from . import sirs
from . import sociality as soc
from . import tasks
from . import timeseries as ts
from .core import (ActivityLog, DataError, attributes_to_csv, first_last_matrix, graph_to_csv, load_attributes,
                   load_graph, load_log, log_to_csv, user_spans)
from .simulator import (EcosystemSpec, GraphGenConfig, assign_attributes, generate_graph, simulate_ecosystem,
                        substream)

log = logging.getLogger("applife")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NONCONVERGED = 0, 1, 2, 3
GRAPH_FILE, ATTR_FILE, LOG_FILE, META_FILE, TRUTH_FILE = (
    "graph.csv", "attributes.csv", "activity.csv", "meta.json", "ground_truth.csv")

COMMANDS = {
    "gen-graph": None,
    "gen-ecosystem": None,
    "metrics": ("sociality",),
    "analyze": ("neighborhoods", "age-offsets"),
    "fit": ("retention", "sirs"),
    "cluster": ("dau",),
    "matrix": ("mau-transition", "first-last"),
    "features": ("extract",),
    "task": ("binary", "pairwise"),
}

DEFAULTS = {
    "gen-graph": {"model": "erdos_renyi", "node_count": 1000, "edge_prob": 0.01, "ring_degree": 10,
                  "rewire_prob": 0.1, "attach_degree": 5, "degree_cap": 5000, "homophily_weight": 0.0,
                  "distributions": None},
    "gen-ecosystem": {"app_count": 10, "regimes": [{"regime": {}, "weight": 1.0}], "launch_window": 0},
    "metrics sociality": {"as_of": None, "bins": soc.HIST_BINS, "apps": None},
    "analyze neighborhoods": {"snapshot": None, "horizon": nb.DEFAULT_HORIZON, "user_def": "ever",
                              "min_count": nb.MIN_CELL_COUNT, "attributes": ["country", "gender", "age"],
                              "apps": None},
    "analyze age-offsets": {"snapshot": None, "horizon": nb.DEFAULT_HORIZON, "n_boot": 1000, "n_bins": 20,
                            "apps": None},
    "fit retention": {"max_offset": 30, "apps": None},
    "fit sirs": {"series": "dau", "window_len": None, "budget": 20000, "predict_days": 90, "apps": None},
    "cluster dau": {"ks": [1, 2, 3, 4, 5, 6], "restarts": 100, "split": 0.75, "length": 100},
    "matrix mau-transition": {"t1": None, "t2": None, "bins_per_decade": 4},
    "matrix first-last": {"bin_days": 30, "apps": None},
    "features extract": {"window_end": None, "months": 12, "include_sirs": False, "sirs_budget": 5000,
                         "apps": None},
    "task binary": {"t1": None, "t2": None, "split": 0.7, "months": 12, "include_sirs": False,
                    "sirs_budget": 5000, "feature_sets": None, "forest": {}},
    "task pairwise": {"t0": None, "t1": None, "t2": None, "ks": list(range(1, 10)), "max_pairs": 5000,
                      "months": 12, "train_divergence": 1, "feature_sets": None, "forest": {}},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="applife", description="App adoption and engagement analytics on simulated ecosystems.")
    p.add_argument("command", help="one of: " + ", ".join(
        c if sub is None else f"{c} {{{','.join(sub)}}}" for c, sub in COMMANDS.items()))
    p.add_argument("subcommand", nargs="?")
    p.add_argument("--config", help="JSON file with the command's parameter block")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--data", help="input dataset directory")
    p.add_argument("--workers", type=int, default=1, help="worker processes (does not change results)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


# ---------------------------------------------------------------------------
# io helpers


def digest(path: Path) -> str:
    return "sha256:" + hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Run:
    def __init__(self, name, config, seed, out: Path, workers):
        self.name, self.config, self.seed, self.out, self.workers = name, config, seed, out, workers
        self.inputs = {}
        self.nonconverged = 0

    def read(self, path: Path) -> Path:
        path = Path(path)
        if not path.exists():
            raise DataError(f"missing input {path}")
        self.inputs[str(path)] = digest(path)
        return path

    def write(self, name: str, text: str):
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / name).write_text(text)

    def manifest(self):
        m = {"command": self.name, "config": self.config, "seed": self.seed, "inputs": self.inputs,
             "version": __version__, "schema": feat.SCHEMA_VERSION}
        self.write("manifest.json", json.dumps(m, indent=2, sort_keys=True) + "\n")


def load_dataset(run: Run, data: str | None, need_log: bool = True):
    if data is None:
        raise UsageError("--data is required for this command")
    d = Path(data)
    meta = json.loads(run.read(d / META_FILE).read_text()) if (d / META_FILE).exists() else {}
    graph = load_graph(run.read(d / GRAPH_FILE), meta.get("degree_cap", 5000), meta.get("node_count"))
    attrs = load_attributes(run.read(d / ATTR_FILE)) if (d / ATTR_FILE).exists() else None
    log_ = load_log(run.read(d / LOG_FILE), meta.get("horizon")) if need_log else None
    return graph, attrs, log_


def _apps(cfg, log_: ActivityLog):
    return log_.app_ids if cfg.get("apps") is None else [int(a) for a in cfg["apps"]]


def _forest_cfg(block: dict, seed: int) -> rf.ForestConfig:
    return rf.ForestConfig(**{**block, "seed": int(substream(seed, 7).integers(2**31))})


# ---------------------------------------------------------------------------
# commands


def cmd_gen_graph(run: Run, args):
    c = run.config
    gcfg = GraphGenConfig.from_dict({k: c[k] for k in ("model", "node_count", "edge_prob", "ring_degree",
                                                       "rewire_prob", "attach_degree", "degree_cap")}
                                    | {"seed": run.seed})
    graph = generate_graph(gcfg)
    attrs = assign_attributes(graph, c["distributions"], c["homophily_weight"],
                              seed=int(substream(run.seed, 1).integers(2**31)))
    run.write(GRAPH_FILE, graph_to_csv(graph))
    run.write(ATTR_FILE, attributes_to_csv(attrs))
    run.write(META_FILE, json.dumps({"node_count": graph.node_count, "degree_cap": gcfg.degree_cap}) + "\n")


def cmd_gen_ecosystem(run: Run, args):
    graph, attrs, _ = load_dataset(run, args.data, need_log=False)
    spec = EcosystemSpec.from_dict({**run.config, "seed": run.seed})
    eco = simulate_ecosystem(spec, graph, attrs, workers=run.workers)
    src = Path(args.data)
    meta = json.loads((src / META_FILE).read_text()) if (src / META_FILE).exists() else {}
    meta.update({"node_count": graph.node_count, "horizon": eco.log.horizon})
    run.write(GRAPH_FILE, graph_to_csv(graph))
    if attrs is not None:
        run.write(ATTR_FILE, attributes_to_csv(attrs))
    run.write(LOG_FILE, log_to_csv(eco.log))
    run.write(META_FILE, json.dumps(meta, sort_keys=True) + "\n")
    run.write(TRUTH_FILE, "app_id,regime,launch_day\n" + "".join(
        f"{a},{eco.ground_truth[a]},{eco.launch_days[a]}\n" for a in sorted(eco.ground_truth)))


def cmd_sociality(run: Run, args):
    graph, _, log_ = load_dataset(run, args.data)
    c = run.config
    as_of = log_.horizon - 1 if c["as_of"] is None else int(c["as_of"])
    points, hist = soc.sociality_map(log_, graph, _apps(c, log_), as_of, bins=c["bins"])
    run.write("sociality_points.csv", soc.points_to_csv(points))
    run.write("sociality_hist.csv", soc.histogram_to_csv(hist))


def cmd_neighborhoods(run: Run, args):
    graph, attrs, log_ = load_dataset(run, args.data)
    c = run.config
    profiles, attr_rows = [], []
    for a in _apps(c, log_):
        if not len(log_.events(a)):
            continue
        profiles.append(nb.adoption_by_class(graph, log_, a, c["snapshot"], c["horizon"], c["user_def"],
                                             c["min_count"]))
        if attrs is not None:
            for name in c["attributes"]:
                t = nb.attribute_adoption(graph, log_, a, attrs, name, c["snapshot"], c["horizon"], c["min_count"])
                attr_rows.append({"app_id": a, "attribute": name, "values": [str(v) for v in t.values],
                                  "ratios": _jsonable(t.ratios)})
    run.write("neighborhood_profiles.csv", nb.profiles_to_csv(profiles))
    run.write("neighborhood_ratios.csv", nb.ratios_to_csv(profiles))
    if attrs is not None:
        run.write("attribute_ratios.json", json.dumps(attr_rows, indent=1, sort_keys=True) + "\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (float, np.floating)):
        return None if math.isnan(x) else float(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def cmd_age_offsets(run: Run, args):
    graph, attrs, log_ = load_dataset(run, args.data)
    if attrs is None:
        raise DataError("age offsets need attributes.csv")
    c = run.config
    parts = []
    for a in _apps(c, log_):
        if not len(log_.events(a)):
            continue
        friend, user = nb.age_offset_curves(graph, log_, a, attrs, c["snapshot"], c["horizon"], c["n_boot"],
                                            c["n_bins"], seed=int(substream(run.seed, 2, a).integers(2**31)))
        text = nb.curves_to_csv(a, {"friend": friend, "user": user})
        parts.append(text if not parts else text.split("\n", 1)[1])
    run.write("age_offsets.csv", "".join(parts))


def cmd_fit_retention(run: Run, args):
    _, _, log_ = load_dataset(run, args.data)
    c = run.config
    curves = ["app_id,t,N,eligible,P\n"]
    fits = []
    for a in _apps(c, log_):
        curve = ret.compute_retention(log_, a, c["max_offset"])
        curves += [f"{a},{t},{curve.N[t]},{curve.eligible[t]},{'' if math.isnan(curve.P[t]) else repr(float(curve.P[t]))}\n"
                   for t in range(curve.max_offset + 1)]
        try:
            pair = [ret.fit_exponential(curve), ret.fit_timedep(curve)]
        except ValueError as exc:
            log.warning("app %s: %s", a, exc)
            pair = [ret.RetentionFit("exponential", converged=False), ret.RetentionFit("timedep", converged=False)]
        run.nonconverged += sum(not f.converged for f in pair)
        fits += [(a, f) for f in pair]
    run.write("retention_curves.csv", "".join(curves))
    run.write("retention_fits.csv", ret.fits_to_csv(fits))


def cmd_fit_sirs(run: Run, args):
    _, _, log_ = load_dataset(run, args.data)
    c = run.config
    fits, preds = [], []
    for a in _apps(c, log_):
        y = ts.app_series(log_, a, c["series"]).astype(float)
        wl = c["window_len"]
        window = None if wl is None else (0, int(wl) - 1)
        try:
            f = sirs.fit_sirs(y, window, c["budget"], seed=int(substream(run.seed, 3, a).integers(2**31)))
        except ValueError as exc:
            log.warning("app %s: %s", a, exc)
            run.nonconverged += 1
            continue
        run.nonconverged += not f.converged
        fits.append((a, f))
        preds.append((a, sirs.predict_sirs(f, c["predict_days"], force=True)))
    run.write("sirs_fits.csv", sirs.fits_to_csv(fits))
    run.write("sirs_predictions.csv", sirs.predictions_to_csv(preds))


def cmd_cluster(run: Run, args):
    _, _, log_ = load_dataset(run, args.data)
    c = run.config
    series, apps = [], []
    for a in log_.app_ids:
        w = ts.launch_window(log_, a, c["length"])
        if w is not None and w.values.max() > 0:
            series.append(ts.peak_normalize(w))
            apps.append(a)
    if not series:
        raise DataError("no app has a complete launch window")
    results = [ts.kmeans_cluster(series, k, c["restarts"], c["split"], seed=int(substream(run.seed, 4).integers(2**31)))
               for k in c["ks"]]
    run.write("kmeans_centroids.csv", ts.centroids_to_csv(results))
    run.write("kmeans_scores.csv", ts.scores_to_csv(results))
    lines = ["k,app_id,split,cluster\n"]
    for r in results:
        lines += [f"{r.k},{apps[i]},train,{lab}\n" for i, lab in zip(r.train_index, r.assignment)]
        lines += [f"{r.k},{apps[i]},test,{lab}\n" for i, lab in zip(r.test_index, r.test_assignment)]
    run.write("kmeans_assignments.csv", "".join(lines))


def cmd_mau_transition(run: Run, args):
    _, _, log_ = load_dataset(run, args.data)
    c = run.config
    if c["t1"] is None or c["t2"] is None:
        raise UsageError("config needs t1 and t2")
    m = ts.mau_transition(log_, log_.app_ids, int(c["t1"]), int(c["t2"]), c["bins_per_decade"])
    run.write("mau_transition_joint.csv", ts.grid_to_csv(m.joint, "t2_bin"))
    run.write("mau_transition_conditional.csv", ts.grid_to_csv(m.conditional, "t2_bin"))
    run.write("mau_bin_edges.csv", "bin,lower\n" + "".join(f"{i},{e!r}\n" for i, e in enumerate(m.edges[:-1])))


def cmd_first_last(run: Run, args):
    _, _, log_ = load_dataset(run, args.data)
    c = run.config
    lines = ["app_id,first_bin,last_bin,count\n"]
    for a in _apps(c, log_):
        mat = first_last_matrix(user_spans(log_, a), c["bin_days"], log_.horizon)
        for i, j in zip(*np.nonzero(mat)):
            lines.append(f"{a},{i},{j},{mat[i, j]}\n")
    run.write("first_last.csv", "".join(lines))


def _feature_options(c, seed):
    return feat.FeatureOptions(months=c["months"], include_sirs=c.get("include_sirs", False),
                               sirs_budget=c.get("sirs_budget", 5000), seed=int(substream(seed, 5).integers(2**31)))


def cmd_features(run: Run, args):
    graph, attrs, log_ = load_dataset(run, args.data)
    c = run.config
    end = log_.horizon - 1 if c["window_end"] is None else int(c["window_end"])
    fm = feat.feature_matrix(log_, graph, attrs, _apps(c, log_), end, _feature_options(c, run.seed), run.workers)
    run.write("features.csv", feat.matrix_to_csv(fm))


def _sets(c):
    return None if c["feature_sets"] is None else {k: tuple(v) for k, v in c["feature_sets"].items()}


def cmd_task_binary(run: Run, args):
    graph, attrs, log_ = load_dataset(run, args.data)
    c = run.config
    if c["t1"] is None or c["t2"] is None:
        raise UsageError("config needs t1 and t2")
    reports, labeling, fm = tasks.run_binary_task(
        log_, graph, attrs, int(c["t1"]), int(c["t2"]), _sets(c), c["split"], _forest_cfg(c["forest"], run.seed),
        _feature_options(c, run.seed), seed=int(substream(run.seed, 6).integers(2**31)), workers=run.workers)
    extra = {"positive_fraction": labeling.positive_fraction, "n_apps": len(labeling.apps),
             "excluded_apps": [int(a) for a in labeling.excluded]}
    run.write("report.json", json.dumps(_jsonable({"reports": [r.to_dict() for r in reports], **extra}),
                                        indent=2, sort_keys=True) + "\n")
    run.write("features.csv", feat.matrix_to_csv(fm))
    run.write("labels.csv", "app_id,ratio,label\n" + "".join(
        f"{a},{r!r},{lab}\n" for a, r, lab in zip(labeling.apps.tolist(), labeling.ratio.tolist(),
                                                  labeling.labels.tolist())))


def cmd_task_pairwise(run: Run, args):
    graph, attrs, log_ = load_dataset(run, args.data)
    c = run.config
    if None in (c["t0"], c["t1"], c["t2"]):
        raise UsageError("config needs t0, t1 and t2")
    rep = tasks.run_pairwise_task(
        log_, graph, attrs, int(c["t0"]), int(c["t1"]), int(c["t2"]), c["ks"], _sets(c),
        _forest_cfg(c["forest"], run.seed), _feature_options(c, run.seed),
        seed=int(substream(run.seed, 6).integers(2**31)), max_pairs=c["max_pairs"],
        train_divergence=c["train_divergence"], workers=run.workers)
    run.write("pairwise.json", json.dumps(_jsonable(rep.to_dict()), indent=2, sort_keys=True) + "\n")
    run.write("pairwise_curve.csv", tasks.curve_to_csv(rep))


HANDLERS = {
    "gen-graph": cmd_gen_graph,
    "gen-ecosystem": cmd_gen_ecosystem,
    "metrics sociality": cmd_sociality,
    "analyze neighborhoods": cmd_neighborhoods,
    "analyze age-offsets": cmd_age_offsets,
    "fit retention": cmd_fit_retention,
    "fit sirs": cmd_fit_sirs,
    "cluster dau": cmd_cluster,
    "matrix mau-transition": cmd_mau_transition,
    "matrix first-last": cmd_first_last,
    "features extract": cmd_features,
    "task binary": cmd_task_binary,
    "task pairwise": cmd_task_pairwise,
}


def resolve_config(name: str, path: str | None) -> dict:
    user = {}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise DataError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"config file {path}: {exc}") from None
        if not isinstance(user, dict):
            raise DataError("config must be a JSON object")
    user.pop("seed", None)  # the --seed flag is the only seed
    defaults = DEFAULTS[name]
    unknown = set(user) - set(defaults)
    if unknown:
        raise UsageError(f"unknown config keys for {name}: {sorted(unknown)}")
    return {**defaults, **user}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        sub = COMMANDS.get(args.command, ())
        if sub == ():
            raise UsageError(f"unknown command {args.command!r}")
        if sub is None:
            if args.subcommand is not None:
                raise UsageError(f"{args.command} takes no subcommand")
            name = args.command
        else:
            if args.subcommand not in sub:
                raise UsageError(f"{args.command} needs one of {', '.join(sub)}")
            name = f"{args.command} {args.subcommand}"
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        config = resolve_config(name, args.config)
        run = Run(name, config, args.seed, Path(args.out), max(1, args.workers))
        if args.config is not None:
            run.read(Path(args.config))
        HANDLERS[name](run, args)
        run.manifest()
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"applife: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except (DataError, ValueError, KeyError, OSError) as exc:
        print(f"applife: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    if run.nonconverged:
        print(f"applife: {run.nonconverged} fit(s) did not converge; results are flagged", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
