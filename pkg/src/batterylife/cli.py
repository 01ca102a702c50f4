"""Command-line driver: one subcommand per pipeline stage.

Usage::

    batterylife <stage> [--config FILE] [--<key> VALUE ...]

Stages run in order ``synth ingest sessionize stats simulate featurize
train predict evaluate bootstrap stability``; each reads the artifacts of
earlier stages from the work directory and writes its own plus a run
manifest under ``manifests/``.  The config file is INI-style (``key =
value`` lines grouped in per-stage sections); any key can be overridden by
a flag of the same name.

Exit status: 0 success, 1 usage or configuration error, 2 data error.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
from dataclasses import asdict, fields

import numpy as np

from . import __version__
from .evaluation import (PredictionSet, bootstrap_shift_test, evaluate, session_stability_variance,
                         stability_experiment, InsufficientConsumption)
from .features import (QUERY_TIME_GROUPS, SESSION_GROUPS, FeatureConfig, FeatureSchema, Preprocessor,
                       BadGroupId, apply_preprocessor, build_history, build_schema, feature_matrix,
                       feature_set_parse, fit_preprocessor, read_feature_matrix, read_labels,
                       write_feature_matrix, write_labels)
from .ingest import ParseError, load_directory
from .models import ModelConfig, fit, load_model, predict, save_model
from .queries import (QueryInstance, read_split_manifest, make_query_instance, simulate_queries,
                      stratified_session_split, write_split_manifest)
from .sessions import (SegmentationConfig, empirical_cdfs, filter_sessions, label_session,
                       segment_sessions, write_sessions_csv)
from .synth import ConfigInvalid as SynthConfigInvalid
from .synth import SynthConfig, commuter, generate_world, single_regime, two_regime

STAGES = ("synth", "ingest", "sessionize", "stats", "simulate", "featurize", "train", "predict",
          "evaluate", "bootstrap", "stability")


class UsageError(Exception):
    pass


class ConfigInvalid(UsageError):
    pass


class MissingArtifact(Exception):
    pass


# key -> (section, default); every key name is unique across sections
DEFAULTS = {
    "workdir": ("run", "work"),
    "seed": ("run", "0"),
    "threads": ("run", "1"),
    "input": ("ingest", ""),
    "max_error_rate": ("ingest", "0.01"),
    "world": ("synth", "commuter"),
    "world_rate": ("synth", "0.25"),
    "gap_threshold": ("sessionize", "600"),
    "min_duration": ("sessionize", "3600"),
    "min_start_battery": ("sessionize", "30"),
    "threshold_L": ("sessionize", "20"),
    "test_fraction": ("simulate", str(1 / 6)),
    "queries_per_session": ("simulate", "1"),
    "top_k_apps": ("featurize", "50"),
    "n_broadcast_types": ("featurize", "86"),
    "t1_width": ("featurize", "9"),
    "t2_width": ("featurize", "150"),
    "n_users": ("featurize", "51"),
    "utc_offset_hours": ("featurize", "0"),
    "models": ("train", "linear,forest,boost,boost2"),
    "feature_sets": ("train", "F1"),
    "n_estimators": ("train", "100"),
    "learning_rate": ("train", "0.1"),
    "max_depth": ("train", ""),
    "min_samples_leaf": ("train", "5"),
    "subsample": ("train", "1.0"),
    "feature_fraction": ("train", "1.0"),
    "l2_reg": ("train", "1.0"),
    "ridge": ("train", "1e-8"),
    "c_index_variant": ("evaluate", "paper"),
    "iterations": ("bootstrap", "10000"),
    "metrics": ("bootstrap", "rmse,tau,c_index"),
    "stability_model": ("stability", "boost"),
}
# synth keys mirror SynthConfig fields
for _f in fields(SynthConfig):
    if _f.name not in ("seed", "t1_width", "t2_width", "n_broadcast_types", "utc_offset_hours", "n_users"):
        DEFAULTS.setdefault(_f.name, ("synth", ""))
DEFAULTS["synth_users"] = ("synth", "")


class Config:
    def __init__(self, values: dict):
        self.values = values

    @classmethod
    def load(cls, path: str | None, overrides: dict) -> "Config":
        values = {k: v for k, (_, v) in DEFAULTS.items()}
        if path:
            parser = configparser.ConfigParser(interpolation=None)
            parser.optionxform = str
            if not parser.read(path, encoding="utf-8"):
                raise ConfigInvalid(f"cannot read config file {path}")
            for section in parser.sections():
                for key, value in parser.items(section):
                    if key not in DEFAULTS:
                        raise ConfigInvalid(f"unknown config key {key!r} in [{section}]")
                    values[key] = value
        for key, value in overrides.items():
            if key not in DEFAULTS:
                raise ConfigInvalid(f"unknown option --{key}")
            values[key] = value
        return cls(values)

    def str(self, key: str) -> str:
        return self.values[key].strip()

    def int(self, key: str) -> int:
        try:
            return int(self.str(key))
        except ValueError:
            raise ConfigInvalid(f"{key} must be an integer, got {self.values[key]!r}") from None

    def float(self, key: str) -> float:
        try:
            return float(self.str(key))
        except ValueError:
            raise ConfigInvalid(f"{key} must be a number, got {self.values[key]!r}") from None

    def list(self, key: str, sep: str = ",") -> list[str]:
        return [p.strip() for p in self.values[key].split(sep) if p.strip()]

    def snapshot(self) -> dict:
        out: dict = {}
        for key, (section, _) in DEFAULTS.items():
            out.setdefault(section, {})[key] = self.values[key]
        return out

    def segmentation(self) -> SegmentationConfig:
        try:
            return SegmentationConfig(self.int("gap_threshold"), self.int("min_duration"),
                                      self.int("min_start_battery"), self.int("threshold_L"))
        except ValueError as err:
            raise ConfigInvalid(str(err)) from None

    def features(self) -> FeatureConfig:
        return FeatureConfig(self.int("top_k_apps"), self.int("n_broadcast_types"), self.int("t1_width"),
                             self.int("t2_width"), self.int("n_users"), self.float("utc_offset_hours"))

    def model(self, kind: str) -> ModelConfig:
        depth = self.str("max_depth")
        try:
            return ModelConfig(kind=kind, n_estimators=self.int("n_estimators"),
                               learning_rate=self.float("learning_rate"),
                               max_depth=int(depth) if depth else None,
                               min_samples_leaf=self.int("min_samples_leaf"),
                               subsample=self.float("subsample"),
                               feature_fraction=self.float("feature_fraction"),
                               l2_reg=self.float("l2_reg"), ridge=self.float("ridge"),
                               seed=self.int("seed"))
        except ValueError as err:
            raise ConfigInvalid(str(err)) from None

    def synth(self) -> SynthConfig:
        kwargs = {}
        for f in fields(SynthConfig):
            key = "synth_users" if f.name == "n_users" else f.name
            if key not in self.values or not self.str(key):
                continue
            raw = self.str(key)
            default = f.default
            if isinstance(default, bool):
                kwargs[f.name] = raw.lower() in ("1", "true", "yes")
            elif isinstance(default, tuple):
                kwargs[f.name] = tuple(float(v) for v in raw.split(","))
            elif isinstance(default, int):
                kwargs[f.name] = int(raw)
            else:
                kwargs[f.name] = float(raw)
        kwargs["seed"] = self.int("seed")
        for name in ("t1_width", "t2_width", "n_broadcast_types"):
            kwargs[name] = self.int(name)
        kwargs["utc_offset_hours"] = self.float("utc_offset_hours")
        try:
            return SynthConfig(**kwargs)
        except (SynthConfigInvalid, TypeError) as err:
            raise ConfigInvalid(str(err)) from None

    def feature_sets(self) -> list[tuple[str, list[str]]]:
        out = []
        for expr in self.list("feature_sets", ";"):
            try:
                out.append((expr.replace(" ", ""), feature_set_parse(expr)))
            except BadGroupId as err:
                raise ConfigInvalid(str(err)) from None
        if not out:
            raise ConfigInvalid("feature_sets is empty")
        return out


# -- helpers ---------------------------------------------------------------

def _path(cfg: Config, *parts) -> str:
    return os.path.join(cfg.str("workdir"), *parts)


def _require(path: str) -> str:
    if not os.path.exists(path):
        raise MissingArtifact(f"missing artifact {path}; run the earlier stage first")
    return path


def _digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _input_dir(cfg: Config) -> str:
    return cfg.str("input") or _path(cfg, "raw")


def _set_tag(expr: str) -> str:
    return expr.replace(",", "_")


def _load(cfg: Config):
    fc = cfg.features()
    try:
        traces, reports = load_directory(_input_dir(cfg), fc.t1_width, fc.t2_width, fc.n_broadcast_types,
                                         cfg.float("max_error_rate"))
    except FileNotFoundError as err:
        raise MissingArtifact(str(err)) from None
    return traces, reports


def _sessions(cfg: Config, traces):
    seg = cfg.segmentation()
    raw = [s for uid in sorted(traces) for s in segment_sessions(traces[uid], seg)]
    long_ = filter_sessions(raw, seg, by_duration=True, by_start_battery=False)
    kept = filter_sessions(long_, seg, by_duration=False, by_start_battery=True)
    return raw, long_, kept


class Stage:
    def __init__(self, cfg: Config, name: str):
        self.cfg = cfg
        self.name = name
        self.inputs: list[str] = []
        self.counts: dict = {}

    def read(self, path: str) -> str:
        self.inputs.append(_require(path))
        return path

    def finish(self) -> None:
        os.makedirs(_path(self.cfg, "manifests"), exist_ok=True)
        wd = self.cfg.str("workdir")
        digests = {}
        for p in sorted(set(self.inputs)):
            rel = os.path.relpath(p, wd) if os.path.abspath(p).startswith(os.path.abspath(wd)) else p
            digests[rel] = _digest(p)
        _write_json(_path(self.cfg, "manifests", f"{self.name}.json"), {
            "stage": self.name,
            "tool_version": __version__,
            "seed": self.cfg.int("seed"),
            "config": self.cfg.snapshot(),
            "inputs": digests,
            "counts": self.counts,
        })


def _raw_inputs(stage: Stage) -> None:
    d = _input_dir(stage.cfg)
    for name in sorted(os.listdir(d)) if os.path.isdir(d) else []:
        if name.endswith((".csv", ".csv.gz")) and name != "manifest.csv":
            stage.read(os.path.join(d, name))


# -- stages ----------------------------------------------------------------

def stage_synth(cfg: Config, stage: Stage) -> None:
    world = cfg.str("world")
    models = {"commuter": commuter, "two_regime": two_regime,
              "single": lambda: single_regime(cfg.float("world_rate"))}
    if world not in models:
        raise ConfigInvalid(f"unknown world {world!r}; choose from {sorted(models)}")
    sc = cfg.synth()
    paths = generate_world(sc, models[world](), _input_dir(cfg))
    stage.counts = {"users": sc.n_users, "days": sc.days, "files": sorted(os.path.basename(p) for p in paths.values())}


def stage_ingest(cfg: Config, stage: Stage) -> None:
    _raw_inputs(stage)
    traces, reports = _load(cfg)
    report = {k: r.as_dict() for k, r in reports.items()}
    report["users"] = sorted(traces)
    _write_json(_path(cfg, "ingest_report.json"), report)
    stage.counts = {k: r.n_records for k, r in reports.items()}
    stage.counts["users"] = len(traces)


def stage_sessionize(cfg: Config, stage: Stage) -> None:
    stage.read(_path(cfg, "ingest_report.json"))
    _raw_inputs(stage)
    traces, _ = _load(cfg)
    raw, long_, kept = _sessions(cfg, traces)
    seg = cfg.segmentation()
    with open(_path(cfg, "sessions.csv"), "w", encoding="utf-8", newline="") as fh:
        write_sessions_csv(long_, [label_session(s, seg) for s in long_], fh)
    labels = [label_session(s, seg) for s in kept]
    stage.counts = {"segmented": len(raw), "after_duration_filter": len(long_),
                    "after_start_battery_filter": len(kept),
                    "observed": sum(lab.observed for lab in labels),
                    "censored": sum(not lab.observed for lab in labels)}


def stage_stats(cfg: Config, stage: Stage) -> None:
    stage.read(_path(cfg, "sessions.csv"))
    _raw_inputs(stage)
    traces, _ = _load(cfg)
    _, long_, _ = _sessions(cfg, traces)
    os.makedirs(_path(cfg, "stats"), exist_ok=True)
    for name, table in empirical_cdfs(long_).items():
        with open(_path(cfg, "stats", f"cdf_{name}.csv"), "w", encoding="utf-8", newline="") as fh:
            table.write_csv(fh, "hours" if name == "duration" else "percent")
    stage.counts = {"sessions": len(long_)}


def stage_simulate(cfg: Config, stage: Stage) -> None:
    stage.read(_path(cfg, "sessions.csv"))
    _raw_inputs(stage)
    traces, _ = _load(cfg)
    _, _, kept = _sessions(cfg, traces)
    seg = cfg.segmentation()
    queries = simulate_queries(kept, [label_session(s, seg) for s in kept], cfg.int("seed"),
                               cfg.int("queries_per_session"))
    split = stratified_session_split(queries, cfg.float("test_fraction"), cfg.int("seed"))
    with open(_path(cfg, "split.csv"), "w", encoding="utf-8", newline="") as fh:
        write_split_manifest(split, fh)
    stage.counts = {
        "train_observed": sum(q.observed for q in split.train),
        "train_censored": sum(not q.observed for q in split.train),
        "test_observed": sum(q.observed for q in split.test),
        "test_censored": sum(not q.observed for q in split.test),
    }


def _queries_from_split(cfg: Config, traces) -> tuple[list, list, list]:
    rows = read_split_manifest(open(_path(cfg, "split.csv"), encoding="utf-8", newline=""))
    _, long_, kept = _sessions(cfg, traces)
    by_id = {s.session_id: s for s in kept}
    seg = cfg.segmentation()
    train, test = [], []
    for r in rows:
        s = by_id.get(r["session_id"])
        if s is None:
            raise MissingArtifact(f"session {r['session_id']} of split.csv not found in the inputs")
        q = make_query_instance(s, label_session(s, seg), r["t_query"])
        (train if r["assignment"] == "train" else test).append(q)
    return train, test, long_


def stage_featurize(cfg: Config, stage: Stage) -> None:
    stage.read(_path(cfg, "split.csv"))
    _raw_inputs(stage)
    traces, _ = _load(cfg)
    train, test, long_ = _queries_from_split(cfg, traces)
    fc = cfg.features()
    windows = sorted({(q.session.user_id, q.session.t_start, q.session.t_end) for q in train})
    schema = build_schema(fc, traces, windows)
    history = build_history(long_, traces, fc.utc_offset_hours)
    os.makedirs(_path(cfg, "features"), exist_ok=True)
    with open(_path(cfg, "features", "schema.json"), "w", encoding="utf-8", newline="") as fh:
        fh.write(schema.to_json() + "\n")
    for name, qs in (("train", train), ("test", test)):
        X = feature_matrix(qs, traces, history, schema)
        with open(_path(cfg, "features", f"{name}.csv"), "w", encoding="utf-8", newline="") as fh:
            write_feature_matrix(fh, schema, X, [q.query_id for q in qs])
        with open(_path(cfg, "features", f"labels_{name}.csv"), "w", encoding="utf-8", newline="") as fh:
            write_labels(fh, qs)
    stage.counts = {"train_rows": len(train), "test_rows": len(test), "width": schema.width}


def _read_split_features(cfg: Config, stage: Stage, name: str):
    schema = FeatureSchema.from_json(open(stage.read(_path(cfg, "features", "schema.json")),
                                          encoding="utf-8").read())
    with open(stage.read(_path(cfg, "features", f"{name}.csv")), encoding="utf-8", newline="") as fh:
        ids, X = read_feature_matrix(fh, schema)
    with open(stage.read(_path(cfg, "features", f"labels_{name}.csv")), encoding="utf-8", newline="") as fh:
        lids, observed, minutes = read_labels(fh)
    if lids != ids:
        raise MissingArtifact(f"labels_{name}.csv does not match {name}.csv")
    return schema, ids, X, observed, minutes


def stage_train(cfg: Config, stage: Stage) -> None:
    schema, _, X, observed, minutes = _read_split_features(cfg, stage, "train")
    pre = fit_preprocessor(X, schema.fingerprint)
    os.makedirs(_path(cfg, "models"), exist_ok=True)
    with open(_path(cfg, "models", "preprocessor.json"), "w", encoding="utf-8", newline="") as fh:
        fh.write(pre.to_json())
    Z = apply_preprocessor(pre, X, schema.fingerprint)[observed]
    y = minutes[observed]
    trained = []
    for expr, groups in cfg.feature_sets():
        cols = schema.columns_for(groups)
        for kind in cfg.list("models"):
            model = fit(Z[:, cols], y, cfg.model(kind), schema.fingerprint)
            save_model(model, _path(cfg, "models", f"{_set_tag(expr)}__{kind}.json"))
            trained.append(f"{expr}/{kind}")
    stage.counts = {"train_observed_rows": int(observed.sum()), "models": trained}


def stage_predict(cfg: Config, stage: Stage) -> None:
    schema, ids, X, observed, minutes = _read_split_features(cfg, stage, "test")
    pre = Preprocessor.from_json(open(stage.read(_path(cfg, "models", "preprocessor.json")),
                                      encoding="utf-8").read())
    Z = apply_preprocessor(pre, X, schema.fingerprint)
    os.makedirs(_path(cfg, "predictions"), exist_ok=True)
    n = 0
    for expr, groups in cfg.feature_sets():
        cols = schema.columns_for(groups)
        for kind in cfg.list("models"):
            tag = f"{_set_tag(expr)}__{kind}"
            model = load_model(stage.read(_path(cfg, "models", f"{tag}.json")))
            p = predict(model, Z[:, cols], schema.fingerprint)
            with open(_path(cfg, "predictions", f"{tag}.csv"), "w", encoding="utf-8", newline="") as fh:
                PredictionSet(ids, p, minutes, observed).write_csv(fh)
            n += 1
    stage.counts = {"test_rows": len(ids), "prediction_files": n}


def _prediction_sets(cfg: Config, stage: Stage):
    for expr, _ in cfg.feature_sets():
        for kind in cfg.list("models"):
            tag = f"{_set_tag(expr)}__{kind}"
            with open(stage.read(_path(cfg, "predictions", f"{tag}.csv")), encoding="utf-8") as fh:
                yield expr, kind, PredictionSet.read_csv(fh)


def stage_evaluate(cfg: Config, stage: Stage) -> None:
    variant = cfg.str("c_index_variant")
    rows = []
    for expr, kind, preds in _prediction_sets(cfg, stage):
        rows.append({"feature_set": expr, "model": kind, **evaluate(preds, variant).as_dict()})
    _write_json(_path(cfg, "metrics.json"), rows)
    header = ["feature_set", "model", "rmse", "tau", "c_index", "n_observed", "n_censored"]
    with open(_path(cfg, "metrics.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(repr(r[h]) if isinstance(r[h], float) else str(r[h]) for h in header) + "\n")
    width = max([len(r["feature_set"]) for r in rows] + [11])
    print(f"{'feature_set':<{width}}  {'model':<7} {'RMSE':>9} {'tau':>8} {'C-idx':>8} {'obs':>6} {'cens':>6}")
    for r in rows:
        print(f"{r['feature_set']:<{width}}  {r['model']:<7} {r['rmse']:9.2f} {r['tau']:8.4f} "
              f"{r['c_index']:8.4f} {r['n_observed']:6d} {r['n_censored']:6d}")
    stage.counts = {"rows": len(rows)}


def stage_bootstrap(cfg: Config, stage: Stage) -> None:
    sets = list(_prediction_sets(cfg, stage))
    baseline_expr = sets[0][0]
    base = {kind: p for expr, kind, p in sets if expr == baseline_expr}
    variant = cfg.str("c_index_variant")
    out = []
    for expr, kind, preds in sets:
        if expr == baseline_expr:
            continue
        for metric in cfg.list("metrics"):
            res = bootstrap_shift_test(preds, base[kind], metric, cfg.int("iterations"),
                                       cfg.int("seed"), variant)
            out.append({"feature_set": expr, "baseline": baseline_expr, "model": kind, **res.as_dict()})
    _write_json(_path(cfg, "bootstrap.json"), out)
    header = ["feature_set", "baseline", "model", "metric", "observed_delta", "p_value", "iterations"]
    with open(_path(cfg, "bootstrap.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in out:
            fh.write(",".join(repr(r[h]) if isinstance(r[h], float) else str(r[h]) for h in header) + "\n")
    stage.counts = {"tests": len(out)}


def stage_stability(cfg: Config, stage: Stage) -> None:
    schema, ids, X, observed, minutes = _read_split_features(cfg, stage, "train")
    pre = Preprocessor.from_json(open(stage.read(_path(cfg, "models", "preprocessor.json")),
                                      encoding="utf-8").read())
    _raw_inputs(stage)
    traces, _ = _load(cfg)
    train, _, _ = _queries_from_split(cfg, traces)
    by_qid = {q.query_id: q for q in train}
    Z = apply_preprocessor(pre, X, schema.fingerprint)
    rows, sessions = [], []
    for i, qid in enumerate(ids):
        if not observed[i]:
            continue
        try:
            session_stability_variance(by_qid[qid].session)
        except InsufficientConsumption:
            continue
        rows.append(i)
        sessions.append(by_qid[qid].session)
    rows = np.asarray(rows, dtype=np.int64)
    sets = {
        "query_time": schema.columns_for(QUERY_TIME_GROUPS),
        "session": schema.columns_for(QUERY_TIME_GROUPS + SESSION_GROUPS),
        "all": schema.columns_for(schema.group_widths()),
    }
    mcfg = cfg.model(cfg.str("stability_model"))

    def fit_predict(Xt, yt, Xv):
        return predict(fit(Xt, yt, mcfg), Xv)

    report = stability_experiment(sessions, Z[rows], minutes[rows], sets, fit_predict)
    with open(_path(cfg, "stability.csv"), "w", encoding="utf-8", newline="") as fh:
        report.write_csv(fh)
    stage.counts = {"sessions": len(sessions), "group_sizes": report.group_sizes}


RUNNERS = {
    "synth": stage_synth,
    "ingest": stage_ingest,
    "sessionize": stage_sessionize,
    "stats": stage_stats,
    "simulate": stage_simulate,
    "featurize": stage_featurize,
    "train": stage_train,
    "predict": stage_predict,
    "evaluate": stage_evaluate,
    "bootstrap": stage_bootstrap,
    "stability": stage_stability,
}


def run_stage(stage: str, cfg: Config) -> None:
    if stage not in RUNNERS:
        raise UsageError(f"unknown stage {stage!r}")
    os.makedirs(cfg.str("workdir"), exist_ok=True)
    st = Stage(cfg, stage)
    RUNNERS[stage](cfg, st)
    st.finish()


def _parse_overrides(tokens: list[str]) -> dict:
    out = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise UsageError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise UsageError(f"option {tok} needs a value")
            value = tokens[i + 1]
            i += 2
        out[key.replace("-", "_") if key.replace("-", "_") in DEFAULTS else key] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    keys = ", ".join(sorted(DEFAULTS))
    parser = argparse.ArgumentParser(
        prog="batterylife",
        description="Battery-life prediction pipeline.",
        epilog=f"Any config key may be given as --<key> VALUE. Keys: {keys}")
    parser.add_argument("--version", action="version", version=f"batterylife {__version__}")
    sub = parser.add_subparsers(dest="stage", metavar="stage", required=True)
    for name in STAGES:
        p = sub.add_parser(name, help=f"run the {name} stage",
                           description=f"Run the {name} stage. Extra --<key> VALUE flags override config keys.")
        p.add_argument("--config", help="INI config file")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        cfg = Config.load(args.config, _parse_overrides(extra))
        run_stage(args.stage, cfg)
    except UsageError as err:
        print(f"batterylife: error: {err}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except (MissingArtifact, ParseError, OSError, ValueError) as err:
        print(f"batterylife {args.stage}: data error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
