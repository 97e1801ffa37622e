"""Command-line entry point: ``thd run|trace|export|classify``.

Exit codes: 0 success, 1 data or configuration error, 2 usage error.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import __version__
from .classifier import evaluate, fit_predict, predictions_csv
from .data import DataError, Dataset, Schema, concat, ingest_csv, schema_of
from .engine import ThdParams, run_thd
from .report import Explainer, export_network, export_tree, import_tree, split_report, write_text

OUTPUT_ENV = "THD_OUTPUT_DIR"
EXIT_DATA = 1
EXIT_USAGE = 2

DEFAULTS = {
    "dataset": None,
    "schema": {"label": None, "excluded": [], "sentinels": [], "kinds": {}},
    "metric": "vne",
    "lenses": ["mds", "nhl"],
    "lens_params": {"k_neighbors": 15},
    "thd": {
        "initial_resolution": 1,
        "resolution_increment": 1,
        "gain": 2.7,
        "split_threshold": 20,
        "max_resolution": 100,
        "histogram_bins": 10,
    },
    "stats": {"alpha": 0.01, "top_k": 5},
    "risky_level": None,
    "k_votes": 5,
    "output_dir": "thd-out",
    "seed": 0,
}


class ConfigError(ValueError):
    pass


class UsageError(ValueError):
    pass


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key!r}")
        if isinstance(base[key], dict) and key not in ("kinds",):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where}{key!r} must be an object")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


@dataclass
class RunConfig:
    """One run's settings, read from a single JSON document."""

    doc: dict
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_json(cls, text: str, base_dir: Path | None = None) -> "RunConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        cfg = cls(_merge(DEFAULTS, doc), base_dir or Path.cwd())
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        return cls.from_json(text, path.resolve().parent)

    def to_json(self) -> str:
        return json.dumps(self.doc, indent=1, sort_keys=True) + "\n"

    def with_overrides(self, assignments: list[str]) -> "RunConfig":
        doc = copy.deepcopy(self.doc)
        for item in assignments:
            if "=" not in item:
                raise UsageError(f"--set expects key=value, got {item!r}")
            key, raw = item.split("=", 1)
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            parts = key.split(".")
            override = value
            for part in reversed(parts):
                override = {part: override}
            doc = _merge(doc, override)
        cfg = RunConfig(doc, self.base_dir)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            for lens in self.doc["lenses"]:
                self.thd_params(lens)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        if not self.doc["lenses"]:
            raise ConfigError("at least one lens is required")
        Schema.from_dict(self.doc["schema"])

    def thd_params(self, lens: str) -> ThdParams:
        return ThdParams(
            metric=self.doc["metric"],
            lens=lens,
            k_neighbors=self.doc["lens_params"]["k_neighbors"],
            **self.doc["thd"],
        )

    @property
    def schema(self) -> Schema:
        return Schema.from_dict(self.doc["schema"])

    def dataset_path(self) -> Path:
        if not self.doc["dataset"]:
            raise ConfigError("config names no dataset")
        return (self.base_dir / self.doc["dataset"]).resolve()

    def output_dir(self, override: str | None = None) -> Path:
        raw = override or os.environ.get(OUTPUT_ENV) or self.doc["output_dir"]
        return (self.base_dir / raw).resolve()


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def cmd_run(args) -> int:
    cfg = RunConfig.load(args.config).with_overrides(args.set or [])
    out = cfg.output_dir(args.out)
    dataset = ingest_csv(cfg.dataset_path(), cfg.schema)
    stats = cfg.doc["stats"]
    files: dict[str, str] = {}
    for lens in cfg.doc["lenses"]:
        tree = run_thd(dataset, cfg.thd_params(lens), threads=args.threads)
        files[f"{lens}/tree.json"] = export_tree(tree, "json")
        files[f"{lens}/tree.dot"] = export_tree(tree, "dot")
        files[f"{lens}/splits.json"] = json.dumps(split_report(tree, stats["alpha"], stats["top_k"]), indent=1) + "\n"
        for node in tree.nodes():
            if node.children:
                files[f"{lens}/networks/{node.id}.graphml"] = export_network(
                    node.network, "graphml", dataset, dataset.label.name if dataset.label else None,
                    cfg.doc["risky_level"],
                )
    files["config.json"] = cfg.to_json()
    manifest = {
        "version": __version__,
        "files": [{"path": p, "sha256": _sha256(text.encode("utf-8"))} for p, text in sorted(files.items())],
    }
    for path, text in files.items():
        write_text(out / path, text)
    write_text(out / "manifest.json", json.dumps(manifest, indent=1) + "\n")
    print(out / "manifest.json")
    return 0


def _load_tree(path: str):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read tree: {exc}") from None
    return import_tree(text)


def cmd_trace(args) -> int:
    tree = _load_tree(args.tree)
    if args.row not in tree.root.group:
        raise UsageError(f"row id {args.row} is not in the tree")
    trace = Explainer(tree, args.alpha).explain(args.row, args.risky_level)
    print(trace.text())
    print(json.dumps(trace.to_dict(), indent=1))
    return 0


def cmd_export(args) -> int:
    tree = _load_tree(args.tree)
    try:
        node = tree.node(args.node)
    except KeyError:
        raise UsageError(f"unknown node {args.node!r}") from None
    if args.color is not None:
        try:
            tree.dataset.feature(args.color)
        except KeyError:
            raise UsageError(f"unknown feature {args.color!r}") from None
    text = export_network(node.network, args.format, tree.dataset, args.color, args.level)
    if args.output:
        write_text(Path(args.output), text)
    else:
        sys.stdout.write(text)
    return 0


def _ingest_like(path: Path, train: Dataset) -> Dataset:
    """Read ``path`` with the column kinds inferred for ``train``; the label
    column may be absent."""
    schema = schema_of(train)
    header = path.read_text(encoding="utf-8").split("\n", 1)[0]
    names = [h.strip() for h in header.split(",")]
    if schema.label is not None and schema.label not in names:
        schema = replace(schema, label=None)
    return ingest_csv(path, schema)


def cmd_classify(args) -> int:
    cfg = RunConfig.load(args.config).with_overrides(args.set or [])
    schema = cfg.schema
    if schema.label is None:
        raise ConfigError("classification needs a label column in the schema")
    train = ingest_csv(args.train, schema)
    test = _ingest_like(Path(args.test), train)
    union = concat(train, test)
    n_train = train.n_rows
    train_rows = range(n_train)
    test_rows = range(n_train, union.n_rows)
    lens = cfg.doc["lenses"][0]
    model, predictions = fit_predict(
        union, train_rows, test_rows, cfg.thd_params(lens), cfg.doc["k_votes"], args.threads
    )
    # report rows relative to the test file
    shifted = [replace(p, row=p.row - n_train) for p in predictions]
    text = predictions_csv(shifted)
    if args.output:
        write_text(Path(args.output), text)
    else:
        sys.stdout.write(text)
    if test.label is not None:
        truth = {p.row: lab for p, lab in zip(predictions, union.label_values(list(test_rows)))}
        if all(lab is not None for lab in truth.values()):
            metrics = evaluate(predictions, truth)
            print(json.dumps({k: metrics[k] for k in ("accuracy", "abstain_rate", "per_class")}), file=sys.stderr)
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="thd", description="Topological hierarchical decomposition")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="build THD trees and write all artifacts")
    run.add_argument("config")
    run.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value (dotted key)")
    run.add_argument("--threads", type=int, default=1)
    run.add_argument("--out", help=f"output directory (else ${OUTPUT_ENV}, else config)")
    run.set_defaults(func=cmd_run)

    trace = sub.add_parser("trace", help="explain one row's path through a tree")
    trace.add_argument("tree")
    trace.add_argument("row", type=int)
    trace.add_argument("--risky-level")
    trace.add_argument("--alpha", type=float, default=0.01)
    trace.set_defaults(func=cmd_trace)

    export = sub.add_parser("export", help="export the network of one tree node")
    export.add_argument("tree")
    export.add_argument("node")
    export.add_argument("format", choices=["graphml", "dot", "json"])
    export.add_argument("--color", help="feature to color nodes by")
    export.add_argument("--level", help="category level for categorical colorings")
    export.add_argument("-o", "--output")
    export.set_defaults(func=cmd_export)

    classify = sub.add_parser("classify", help="predict labels of a test file")
    classify.add_argument("config")
    classify.add_argument("train")
    classify.add_argument("test")
    classify.add_argument("--set", action="append", metavar="KEY=VALUE")
    classify.add_argument("--threads", type=int, default=1)
    classify.add_argument("-o", "--output")
    classify.set_defaults(func=cmd_classify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"thd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, DataError, ValueError, KeyError, OSError) as exc:
        print(f"thd: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
