"""Batch command-line front end.

Every option can also come from a JSON config file (``--config``); keys
are the option names with underscores, either at top level or under a
section named after the command. Command-line values win over the file,
and the file wins over the ``WFBOUNDS_SEED`` environment variable.

Outputs carry no timestamps, so re-running a config reproduces every CSV
and JSON file byte for byte (the run log is append-only).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

from . import __version__
from .bayes_bounds import estimate_bound
from .defenses import DefenseConfigError, DefenseKind, DefenseSpec, resolve_histograms
from .distances import MetricKind, MetricSpec
from .features import SchemaName, extract_matrix
from .lookup_bound import RESTRICTED_OBSERVABLE, Observable, lookup_table_error
from .privacy import median_overheads
from .scenarios import (
    ScenarioKind,
    ScenarioReport,
    ScenarioSpec,
    append_run_log,
    defend_dataset,
    evaluate,
    learning_curve_matrix,
)
from .trace_model import DEFAULT_NAMING_RULE, TOR_CELL_SIZE, LabeledDataset, load_dataset, summarize, write_dataset

log = logging.getLogger("wfbounds")

SEED_ENV = "WFBOUNDS_SEED"
LEARNING_CURVE_SLACK = 0.02
RUN_LOG = "runs.jsonl"

DEFAULTS = {
    "out": "wfbounds-out",
    "cell_size": TOR_CELL_SIZE,
    "naming_rule": DEFAULT_NAMING_RULE,
    "defense": ["none"],
    "schema": ["KNN"],
    "metric": ["euclidean"],
    "pair": [],
    "scenario": "closed_world",
    "per_class_instances": None,
    "folds": 5,
    "fractions": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8],
    "test_fraction": 0.2,
    "k": 3,
    "observable": "restricted",
}

# options that never influence results and stay out of the config hash
_UNHASHED = {"out", "config", "command", "log_level"}

_SCHEMA_ALIASES = {"VNG++": SchemaName.VNGPP, "K-NN": SchemaName.KNN, "KFP": SchemaName.KFP20, "K-FP": SchemaName.KFP20}


class ConfigError(ValueError):
    pass


def parse_schema(text: str) -> SchemaName:
    key = str(text).strip().upper()
    if key in _SCHEMA_ALIASES:
        return _SCHEMA_ALIASES[key]
    try:
        return SchemaName(key)
    except ValueError:
        raise ConfigError(f"unknown feature schema {text!r}") from None


def parse_metric(text: str) -> MetricSpec:
    key = str(text).strip().lower().replace("-", "_")
    key = {"seuclidean": "std_euclidean", "city_block": "cityblock", "manhattan": "cityblock"}.get(key, key)
    try:
        return MetricSpec(MetricKind(key))
    except ValueError:
        raise ConfigError(f"unknown metric {text!r}") from None


def parse_defense(value, seed: int) -> DefenseSpec:
    try:
        if isinstance(value, dict):
            return DefenseSpec(value.get("kind", "none"), value.get("params", {}), int(value.get("seed", seed)))
        return DefenseSpec.parse(str(value), seed)
    except (DefenseConfigError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _as_list(value) -> list:
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return list(value)
    return [value]


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, the environment seed, the config file and CLI flags."""
    cfg = dict(DEFAULTS)
    env_seed = os.environ.get(SEED_ENV)
    cfg["seed"] = int(env_seed) if env_seed not in (None, "") else 0
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        section = data.pop(args.command, {}) if isinstance(data.get(args.command), dict) else {}
        for src in (data, section):
            for key, value in src.items():
                if isinstance(value, dict) and key in _COMMANDS:
                    continue
                cfg[key.replace("-", "_")] = value
    for key, value in vars(args).items():
        if value is not None and key != "config":
            cfg[key] = value
    cfg["command"] = args.command
    cfg["seed"] = int(cfg["seed"])
    for key in ("defense", "schema", "metric", "pair", "fractions"):
        cfg[key] = _as_list(cfg.get(key))
    return cfg


def config_hash(cfg: dict) -> str:
    relevant = {k: v for k, v in cfg.items() if k not in _UNHASHED}
    blob = json.dumps(relevant, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _load(cfg: dict) -> LabeledDataset:
    path = cfg.get("dataset")
    if not path:
        raise ConfigError("no dataset path given (--dataset)")
    if not Path(path).is_dir():
        raise ConfigError(f"dataset directory not found: {path}")
    return load_dataset(path, cfg["naming_rule"], int(cfg["cell_size"]))


def _out(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _provenance(cfg: dict, **extra) -> dict:
    return {"config_hash": config_hash(cfg), "seed": cfg["seed"], "version": __version__, **extra}


def _write_json(path: Path, record) -> None:
    path.write_text(json.dumps(record, sort_keys=True, indent=2, default=_json_safe) + "\n")


def _json_safe(obj):
    if hasattr(obj, "value"):
        return obj.value
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    if hasattr(obj, "item"):
        return obj.item()
    return str(obj)


def _fmt(x, digits: int = 4) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return f"{x:.{digits}f}"


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _defenses(cfg: dict) -> list[DefenseSpec]:
    specs = [parse_defense(d, cfg["seed"]) for d in cfg["defense"]]
    if not specs:
        raise ConfigError("no defense given")
    return specs


def _schemas(cfg: dict) -> list[SchemaName]:
    names = [parse_schema(s) for s in cfg["schema"]]
    if not names:
        raise ConfigError("no feature schema given")
    if SchemaName.SYNTHETIC in names:
        raise ConfigError("the SYNTHETIC schema has no trace extractor")
    return names


def _metric_for(cfg: dict, schema: SchemaName) -> MetricSpec:
    metrics = [parse_metric(m) for m in cfg["metric"]]
    if len(metrics) != 1:
        raise ConfigError("this command takes exactly one metric")
    metric = metrics[0]
    if metric.is_string_metric != (schema is SchemaName.DIRECTION):
        raise ConfigError(f"metric {metric.name} cannot be used with the {schema.value} schema")
    return metric


def cmd_ingest(cfg: dict) -> int:
    ds = _load(cfg)
    out = _out(cfg)
    rows = []
    for p, y, name in zip(ds.traces, ds.labels, ds.names):
        s = summarize(p)
        rows.append([name, str(y), s.n_in, s.n_out, s.bytes_in, s.bytes_out, _fmt(s.duration, 6)])
    _write_csv(out / "ingest.csv", ["name", "label", "n_in", "n_out", "bytes_in", "bytes_out", "duration"], rows)
    record = _provenance(
        cfg,
        command="ingest",
        traces=len(ds),
        pages=ds.page_count,
        instances_per_page={str(k): v for k, v in ds.instances_per_page().items()},
    )
    _write_json(out / "ingest.json", record)
    print(f"{len(ds)} traces, {ds.page_count} pages")
    return 0


def _defense_dirname(spec: DefenseSpec, index: int, many: bool) -> str:
    return f"{spec.kind.value}-{index}" if many else spec.kind.value


def cmd_defend(cfg: dict) -> int:
    ds = _load(cfg)
    out = _out(cfg)
    specs = _defenses(cfg)
    many = len(specs) > 1
    for i, spec in enumerate(specs):
        spec = resolve_histograms(spec, ds)
        defended = defend_dataset(ds, spec)
        name = _defense_dirname(spec, i, many)
        write_dataset(defended, out / "defended" / name)
        oh = median_overheads(ds.traces, defended.traces)
        record = _provenance(cfg, command="defend", defense=spec.to_dict(), overheads=oh.to_dict(per_trace=True))
        _write_json(out / f"overheads_{name}.json", record)
        print(f"{name}: packet overhead {oh.packet_overhead_pct:.1f}%, time overhead {oh.time_overhead_pct:.1f}%")
    return 0


def cmd_extract(cfg: dict) -> int:
    ds = _load(cfg)
    out = _out(cfg)
    for name in _schemas(cfg):
        m = extract_matrix(ds, name)
        if m.schema.is_sequence:
            _write_csv(out / f"features_{name.value}.csv", ["DIRECTION", "label"], [[r, str(y)] for r, y in zip(m.rows, m.labels)])
        else:
            m.to_csv(out / f"features_{name.value}.csv")
        print(f"{name.value}: {m.n} rows x {m.schema.dimension or 'variable'}")
    return 0


BOUND_HEADER = [
    "defense", "scenario", "r_star_pct", "r_star_std_pct", "r_star_min_pct",
    "epsilon", "schema", "metric", "folds", "seed", "packet_overhead_pct", "time_overhead_pct", "config_hash",
]


def _scenario_spec(cfg: dict, schema: SchemaName, metric: MetricSpec, defense: DefenseSpec) -> ScenarioSpec:
    try:
        return ScenarioSpec(
            kind=ScenarioKind(cfg["scenario"]),
            feature_schema=schema,
            metric=metric,
            folds=int(cfg["folds"]),
            seed=cfg["seed"],
            defense=defense,
            per_class_instances=cfg.get("per_class_instances"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def bound_row(report: ScenarioReport, config_hash_: str) -> list:
    """One CSV row of the bound report; the std and min columns are One VS All only."""
    spec, oh = report.spec, report.overheads
    ova = report.scenario is ScenarioKind.ONE_VS_ALL
    return [
        spec.defense.kind.value,
        report.scenario.value,
        _fmt(100 * report.r_star_mean),
        _fmt(100 * report.r_star_std) if ova else "",
        _fmt(100 * report.r_star_min) if ova else "",
        f"{report.privacy.epsilon:.2f}",
        spec.feature_schema.value,
        spec.metric.name,
        spec.folds,
        spec.seed,
        _fmt(oh.packet_overhead_pct, 1),
        _fmt(oh.time_overhead_pct, 1),
        config_hash_,
    ]


def cmd_bound(cfg: dict) -> int:
    """One row per (defense, schema) pair."""
    schemas = _schemas(cfg)
    metrics = {s: _metric_for(cfg, s) for s in schemas}
    defenses = _defenses(cfg)
    ds = _load(cfg)
    out = _out(cfg)
    h = config_hash(cfg)
    rows, records = [], []
    for defense in defenses:
        defense = resolve_histograms(defense, ds)
        for schema in schemas:
            spec = _scenario_spec(cfg, schema, metrics[schema], defense)
            report = evaluate(ds, spec)
            record = _provenance(cfg, command="bound", report=report.to_dict())
            records.append(record)
            append_run_log(out / RUN_LOG, record)
            rows.append(bound_row(report, h))
            print(f"{defense.kind.value} {schema.value}: R*>= {100 * report.r_star_mean:.2f}% {report.privacy.epsilon_display}")
    _write_csv(out / "bound.csv", BOUND_HEADER, rows)
    _write_json(out / "bound.json", records)
    return 0


def _pairs(cfg: dict) -> list[tuple[MetricSpec, SchemaName]]:
    raw = cfg["pair"]
    if not raw:
        raise ConfigError("compare-metrics needs --pair METRIC:SCHEMA at least once")
    pairs, seen = [], set()
    for item in raw:
        metric_txt, sep, schema_txt = str(item).partition(":")
        if not sep:
            raise ConfigError(f"pair {item!r} is not of the form METRIC:SCHEMA")
        metric, schema = parse_metric(metric_txt), parse_schema(schema_txt)
        if metric.is_string_metric and schema is not SchemaName.DIRECTION:
            raise ConfigError(f"levenshtein needs the DIRECTION schema, got {schema.value}")
        if not metric.is_string_metric and schema is SchemaName.DIRECTION:
            raise ConfigError(f"{metric.name} cannot compare DIRECTION strings")
        key = (metric.kind, schema)
        if key in seen:
            raise ConfigError(f"duplicate pair {metric.name}:{schema.value}")
        seen.add(key)
        pairs.append((metric, schema))
    return pairs


def cmd_compare_metrics(cfg: dict) -> int:
    pairs = _pairs(cfg)
    ds = _load(cfg)
    out = _out(cfg)
    defense = resolve_histograms(_defenses(cfg)[0], ds)
    defended = defend_dataset(ds, defense)
    matrices = {}
    results = []
    for metric, schema in pairs:
        if schema not in matrices:
            matrices[schema] = extract_matrix(defended, schema)
        est = estimate_bound(matrices[schema], metric, int(cfg["folds"]), cfg["seed"])
        results.append((est.r_star_lower, metric.name, schema.value, est))
    results.sort(key=lambda r: (r[0], r[1], r[2]))
    h = config_hash(cfg)
    rows = [[m, s, _fmt(100 * r), _fmt(e.r_nn, 6), e.folds, e.seed, h] for r, m, s, e in results]
    _write_csv(out / "compare_metrics.csv", ["metric", "schema", "r_star_pct", "r_nn", "folds", "seed", "config_hash"], rows)
    record = _provenance(cfg, command="compare-metrics", defense=defense.to_dict(), estimates=[e.to_dict() for *_, e in results])
    _write_json(out / "compare_metrics.json", record)
    append_run_log(out / RUN_LOG, record)
    for r, m, s, _ in results:
        print(f"{m:>14} {s:<10} {100 * r:.2f}%")
    return 0


def cmd_learning_curve(cfg: dict) -> int:
    fractions = [float(f) for f in cfg["fractions"]]
    if not fractions:
        raise ConfigError("empty fractions list")
    schemas = _schemas(cfg)
    metrics = {s: _metric_for(cfg, s) for s in schemas}
    ds = _load(cfg)
    out = _out(cfg)
    defense = resolve_histograms(_defenses(cfg)[0], ds)
    defended = defend_dataset(ds, defense)
    k = int(cfg["k"]) if cfg.get("k") else None
    rows, violations, points_out = [], 0, []
    for schema in schemas:
        m = extract_matrix(defended, schema)
        try:
            points = learning_curve_matrix(
                m, metrics[schema], fractions, float(cfg["test_fraction"]), int(cfg["folds"]), cfg["seed"], k
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for pt in points:
            ok = pt.bound <= pt.attack_error + LEARNING_CURVE_SLACK
            if k:
                ok = ok and pt.bound <= pt.knn_attack_error + LEARNING_CURVE_SLACK
            violations += not ok
            rows.append([
                schema.value, _fmt(pt.fraction, 3), pt.n, _fmt(pt.bound, 6),
                _fmt(pt.attack_error, 6), _fmt(pt.knn_attack_error, 6), "ok" if ok else "VIOLATION",
            ])
            points_out.append({"schema": schema.value, **pt.to_dict(), "ok": ok})
    _write_csv(
        out / "learning_curve.csv",
        ["schema", "fraction", "n", "bound", "attack_error_1nn", "attack_error_knn", "check"],
        rows,
    )
    record = _provenance(cfg, command="learning-curve", defense=defense.to_dict(), metric=cfg["metric"], folds=int(cfg["folds"]), points=points_out)
    _write_json(out / "learning_curve.json", record)
    append_run_log(out / RUN_LOG, record)
    if violations:
        print(f"{violations} point(s) with bound above attack error + {LEARNING_CURVE_SLACK}", file=sys.stderr)
        return 1
    print(f"{len(rows)} points, bound below attack error everywhere")
    return 0


def cmd_lookup(cfg: dict) -> int:
    """Bound next to the lookup-table adversary's error, one row per defense."""
    restricted = str(cfg["observable"]).lower()
    if restricted not in ("restricted", "exact"):
        raise ConfigError("observable must be 'restricted' or 'exact'")
    defenses = _defenses(cfg)
    if restricted == "restricted":
        for d in defenses:
            if d.kind not in RESTRICTED_OBSERVABLE:
                raise ConfigError(f"no restricted observable is defined for {d.kind.value}; use --observable exact")
    schemas = _schemas(cfg)
    if len(schemas) != 1:
        raise ConfigError("lookup takes exactly one feature schema")
    schema = schemas[0]
    metric = _metric_for(cfg, schema)
    ds = _load(cfg)
    out = _out(cfg)
    h = config_hash(cfg)
    rows, records = [], []
    for defense in defenses:
        defense = resolve_histograms(defense, ds)
        defended = defend_dataset(ds, defense)
        est = estimate_bound(extract_matrix(defended, schema), metric, int(cfg["folds"]), cfg["seed"])
        obs = RESTRICTED_OBSERVABLE.get(defense.kind) if restricted == "restricted" else None
        lookup_restricted = lookup_table_error(defended, obs) if obs else None
        lookup_full = lookup_table_error(defended, Observable.EXACT_SEQUENCE)
        rows.append([
            defense.kind.value, _fmt(100 * est.r_star_lower), obs.value if obs else "",
            _fmt(None if lookup_restricted is None else 100 * lookup_restricted), _fmt(100 * lookup_full),
            schema.value, metric.name, h,
        ])
        records.append(_provenance(
            cfg, command="lookup", defense=defense.to_dict(), bound=est.to_dict(),
            observable=obs.value if obs else None, lookup_restricted=lookup_restricted, lookup_full=lookup_full,
        ))
    _write_csv(
        out / "lookup.csv",
        ["defense", "r_star_pct", "observable", "lookup_restricted_pct", "lookup_full_pct", "schema", "metric", "config_hash"],
        rows,
    )
    _write_json(out / "lookup.json", records)
    for r in records:
        append_run_log(out / RUN_LOG, r)
    return 0


_COMMANDS = {
    "ingest": cmd_ingest,
    "defend": cmd_defend,
    "extract": cmd_extract,
    "bound": cmd_bound,
    "compare-metrics": cmd_compare_metrics,
    "learning-curve": cmd_learning_curve,
    "lookup": cmd_lookup,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wfbounds", description="Bayes-error lower bounds for website-fingerprinting defenses.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--dataset", help="directory of trace files")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help=f"random seed (default ${SEED_ENV} or 0)")
    common.add_argument("--cell-size", type=int, dest="cell_size", help="bytes of a size-1 packet")
    common.add_argument("--naming-rule", dest="naming_rule", help="regex with a 'page' group for file names")
    common.add_argument("--log-level", dest="log_level", help="logging level")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text)

    def defense_opt(p):
        p.add_argument("--defense", action="append", help="name[:key=value,...]; repeatable")

    def schema_opt(p):
        p.add_argument("--schema", action="append", help="feature schema; repeatable")

    def fold_opt(p):
        p.add_argument("--folds", type=int, help="cross-validation folds")

    add("ingest", "load a dataset and summarize it")
    p = add("defend", "apply defenses and write defended traces")
    defense_opt(p)
    p = add("extract", "write feature matrices as CSV")
    schema_opt(p)
    p = add("bound", "Bayes lower bound, privacy and overheads")
    defense_opt(p)
    schema_opt(p)
    p.add_argument("--metric", action="append", help="distance metric")
    p.add_argument("--scenario", choices=[k.value for k in ScenarioKind])
    p.add_argument("--per-class-instances", type=int, dest="per_class_instances")
    fold_opt(p)
    p = add("compare-metrics", "bound for several metric/schema pairs")
    p.add_argument("--pair", action="append", help="METRIC:SCHEMA; repeatable")
    defense_opt(p)
    fold_opt(p)
    p = add("learning-curve", "bound against held-out attack error as training grows")
    defense_opt(p)
    schema_opt(p)
    p.add_argument("--metric", action="append", help="distance metric")
    p.add_argument("--fractions", type=float, nargs="*", help="training fractions")
    p.add_argument("--test-fraction", type=float, dest="test_fraction")
    p.add_argument("--k", type=int, help="k of the k-NN attack (0 disables)")
    fold_opt(p)
    p = add("lookup", "bound next to the lookup-table adversary")
    defense_opt(p)
    schema_opt(p)
    p.add_argument("--metric", action="append", help="distance metric")
    p.add_argument("--observable", choices=["restricted", "exact"])
    fold_opt(p)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=(args.log_level or "WARNING").upper(), format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
