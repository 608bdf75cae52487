"""Command-line entry point: ingest, split, train, evaluate, sweep, audit-bias, synth.

Exit codes: 0 ok, 1 usage/config error, 2 data error, 3 numerical divergence.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Sequence

from . import __version__
from .audit import audit
from .backbone import load_checkpoint, save_checkpoint, scoring_embeddings
from .errors import ConfigError, DataError, DebiasRecError, DivergedError
from .evaluator import evaluate, metrics_csv
from .ingestion import ingest, parse_file, positives, read_interactions, write_interactions
from .splitter import SplitConfig, split, write_split, read_split
from .synthgen import SynthConfig, generate, to_split_dataset, write_synth
from .trainer import train
from .types import Backbone, HyperParams, Method

log = logging.getLogger("debias_rec")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3
METHODS = [m.value for m in Method]
BACKBONES = [b.value for b in Backbone]

_SPLIT_KEYS = {"val_fraction": float, "test_fraction": float, "uniform_train_fraction": float,
               "split_seed": int, "split_sampling": str}
_SYNTH_KEYS = {f"synth_{f.name}": f.type for f in fields(SynthConfig) if f.name != "seed"}
_OTHER_KEYS = {"method": str, "k": str, "stages": int, "audit_items": int}


class UsageError(Exception):
    pass


def _types(annotation) -> type:
    return {"int": int, "float": float, "str": str, "Backbone": str}.get(str(annotation), annotation)


def config_schema() -> dict[str, type]:
    schema = {name: _types(t) for name, t in HyperParams.field_types().items()}
    schema.update(_SPLIT_KEYS)
    schema.update({k: _types(t) for k, t in _SYNTH_KEYS.items()})
    schema.update(_OTHER_KEYS)
    return schema


def parse_config(text: str, source: str = "<config>") -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment. Values are typed by key."""
    schema = config_schema()
    out = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_no}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in schema:
            raise ConfigError(f"{source}:{line_no}: unknown key {key!r}")
        try:
            out[key] = schema[key](value)
        except ValueError:
            raise ConfigError(f"{source}:{line_no}: {key} expects {schema[key].__name__}, got {value!r}") from None
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"--config: cannot read {path}: {exc.strerror}") from None
    return parse_config(text, path)


def parse_k(text: str) -> list[int]:
    try:
        ks = sorted({int(x) for x in text.split(",") if x.strip()})
    except ValueError:
        raise UsageError(f"--k: expected comma-separated integers, got {text!r}") from None
    if not ks or ks[0] < 1:
        raise UsageError(f"--k: values must be >= 1, got {text!r}")
    return ks


def parse_fractions(text: str) -> list[float]:
    try:
        fracs = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--intervention: expected comma-separated fractions, got {text!r}") from None
    if not fracs or any(not 0.0 <= f < 1.0 for f in fracs):
        raise UsageError(f"--intervention: fractions must lie in [0, 1), got {text!r}")
    return fracs


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def toy_data_dir() -> Path:
    return Path(str(resources.files("debias_rec") / "data" / "toy"))


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config: dict
    seed: int
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    wall_time: float = 0.0
    version: str = __version__

    def write(self, out_dir: Path) -> None:
        (out_dir / "manifest.json").write_text(json.dumps(asdict(self), indent=1, sort_keys=True) + "\n",
                                               encoding="utf-8")


def run_id(command: str, config: dict) -> str:
    blob = json.dumps({"command": command, "config": config}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


# ---------------------------------------------------------------------------- settings


def resolve(args: argparse.Namespace) -> dict:
    """Config file values, then CLI flags on top."""
    cfg = load_config(args.config)
    for key in ("seed", "method", "backbone", "k"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if "method" in cfg and cfg["method"] not in METHODS:
        raise UsageError(f"--method: invalid choice {cfg['method']!r} (choose from {', '.join(METHODS)})")
    if "backbone" in cfg and cfg["backbone"] not in BACKBONES:
        raise UsageError(f"--backbone: invalid choice {cfg['backbone']!r} (choose from {', '.join(BACKBONES)})")
    return cfg


def hyperparams(cfg: dict) -> HyperParams:
    known = {f.name for f in fields(HyperParams)}
    return HyperParams(**{k: v for k, v in cfg.items() if k in known})


def split_config(cfg: dict, fraction: float | None = None) -> SplitConfig:
    base = SplitConfig(seed=cfg.get("split_seed", cfg.get("seed", 0)),
                       sampling=cfg.get("split_sampling", "uniform"))
    val = cfg.get("val_fraction", base.val_fraction)
    test = cfg.get("test_fraction", base.test_fraction)
    ut = cfg.get("uniform_train_fraction", base.uniform_train_fraction) if fraction is None else fraction
    return SplitConfig(val + test + ut, val, test, ut, base.seed, base.sampling)


def synth_config(cfg: dict) -> SynthConfig:
    kw = {k[len("synth_"):]: v for k, v in cfg.items() if k.startswith("synth_")}
    return SynthConfig(seed=cfg.get("seed", 0), **kw)


def _prepare_out(path: str | None, default: str) -> Path:
    out = Path(path if path is not None else default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _data_inputs(data_dir: Path) -> dict[str, str]:
    return {str(data_dir / n): sha256_file(data_dir / n) for n in ("train.tsv", "valid.tsv", "test.tsv", "split.json")}


def _check_k(ds, ks: list[int]) -> None:
    most_seen = max((len(p) for p in ds.user_positives("train")), default=0)
    if max(ks) > ds.num_items - most_seen:
        raise UsageError(f"--k: {max(ks)} exceeds the {ds.num_items - most_seen} unseen items "
                         f"available to some user")


def _train_and_evaluate(ds, hp: HyperParams, method: str, ks: list[int], out: Path, rid: str) -> list[dict]:
    emb, report = train(ds, hp, method)
    save_checkpoint(emb, out / "checkpoint.bin")
    metrics = evaluate(scoring_embeddings(emb, ds, hp), ds, ks=ks)
    payload = {"train": report.to_json(include_time=False), "test": metrics.to_json(),
               "hyperparams": hp.to_dict()}
    (out / "report.json").write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    rows = metrics.csv_rows(rid, method, hp.backbone.value)
    (out / "metrics.csv").write_text(metrics_csv(rows), encoding="utf-8")
    return rows


# ---------------------------------------------------------------------------- commands


def cmd_ingest(args, cfg) -> tuple[Path, RunManifest]:
    src = Path(args.input)
    if not src.is_file():
        raise DataError(f"input file not found: {src}")
    rows, id_map = ingest(src, args.delimiter)
    pos = positives(rows)
    out = _prepare_out(args.out, f"runs/ingest-{run_id('ingest', {'input': sha256_file(src)})}")
    write_interactions(out / "interactions.tsv", rows)
    write_interactions(out / "positives.tsv", pos)
    id_map.save(out / "id_map.json")
    summary = {"rows": len(rows), "positives": len(pos), "num_users": id_map.num_users,
               "num_items": id_map.num_items}
    (out / "report.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return out, RunManifest("ingest", [], {"delimiter": args.delimiter}, cfg.get("seed", 0),
                            {str(src): sha256_file(src)},
                            ["interactions.tsv", "positives.tsv", "id_map.json", "report.json"])


def cmd_split(args, cfg) -> tuple[Path, RunManifest]:
    src = Path(args.input) if args.input else toy_data_dir() / "positives.tsv"
    fractions = parse_fractions(args.intervention) if args.intervention else None
    if fractions is not None and len(fractions) != 1:
        raise UsageError("--intervention: split takes a single fraction (use sweep for several)")
    scfg = split_config(cfg, fractions[0] if fractions else None)
    if not src.is_file():
        raise DataError(f"input file not found: {src}")
    interactions = [r for r in read_interactions(src) if r.rating == 1]
    ds = split(interactions, scfg)
    out = _prepare_out(args.out, f"runs/split-{run_id('split', asdict(scfg))}")
    write_split(ds, out, scfg)
    return out, RunManifest("split", [], asdict(scfg), scfg.seed, {str(src): sha256_file(src)},
                       ["train.tsv", "valid.tsv", "test.tsv", "split.json"])


def cmd_train(args, cfg) -> tuple[Path, RunManifest]:
    data_dir = Path(args.data) if args.data else toy_data_dir()
    cfg.setdefault("method", Method.DCLMDB.value)
    hp = hyperparams(cfg)
    ks = parse_k(cfg.get("k", "20,50"))
    ds = read_split(data_dir)
    _check_k(ds, ks)
    snapshot = {**hp.to_dict(), "method": cfg["method"], "k": ",".join(map(str, ks))}
    rid = run_id("train", snapshot)
    out = _prepare_out(args.out, f"runs/train-{rid}")
    _train_and_evaluate(ds, hp, cfg["method"], ks, out, rid)
    return out, RunManifest("train", [], snapshot, hp.seed, _data_inputs(data_dir),
                       ["checkpoint.bin", "report.json", "metrics.csv"])


def cmd_evaluate(args, cfg) -> tuple[Path, RunManifest]:
    data_dir = Path(args.data) if args.data else toy_data_dir()
    hp = hyperparams(cfg)
    ks = parse_k(cfg.get("k", "20,50"))
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise DataError(f"checkpoint not found: {ckpt}")
    ds = read_split(data_dir)
    _check_k(ds, ks)
    emb = load_checkpoint(ckpt)
    if (emb.num_users, emb.num_items) != (ds.num_users, ds.num_items):
        raise DataError(f"checkpoint shape {emb.num_users}x{emb.num_items} does not match data "
                        f"{ds.num_users}x{ds.num_items}")
    hp = hp.replace(d=emb.d)
    method = cfg.get("method", "")
    snapshot = {**hp.to_dict(), "method": method, "k": ",".join(map(str, ks))}
    rid = run_id("evaluate", {**snapshot, "checkpoint": sha256_file(ckpt)})
    out = _prepare_out(args.out, f"runs/evaluate-{rid}")
    metrics = evaluate(scoring_embeddings(emb, ds, hp), ds, ks=ks)
    (out / "report.json").write_text(metrics.dumps() + "\n", encoding="utf-8")
    (out / "metrics.csv").write_text(metrics_csv(metrics.csv_rows(rid, method, hp.backbone.value)), encoding="utf-8")
    inputs = {**_data_inputs(data_dir), str(ckpt): sha256_file(ckpt)}
    return out, RunManifest("evaluate", [], snapshot, hp.seed, inputs, ["report.json", "metrics.csv"])


def _sweep_variant(job) -> list[dict]:
    ds, hp, method, ks, out, rid = job
    return _train_and_evaluate(ds, hp, method, ks, out, rid)


def cmd_sweep(args, cfg) -> tuple[Path, RunManifest]:
    src = Path(args.input) if args.input else toy_data_dir() / "positives.tsv"
    fractions = parse_fractions(args.intervention or "0,0.1,0.2")
    if args.jobs < 1:
        raise UsageError("--jobs: must be >= 1")
    cfg.setdefault("method", Method.DCLMDB.value)
    hp = hyperparams(cfg)
    ks = parse_k(cfg.get("k", "20,50"))
    scfgs = [split_config(cfg, f) for f in fractions]
    if not src.is_file():
        raise DataError(f"input file not found: {src}")
    interactions = [r for r in read_interactions(src) if r.rating == 1]
    datasets = [split(interactions, scfg) for scfg in scfgs]
    for ds in datasets:
        _check_k(ds, ks)
    snapshot = {**hp.to_dict(), "method": cfg["method"], "k": ",".join(map(str, ks)),
                "intervention": fractions, "split": asdict(scfgs[0])}
    rid = run_id("sweep", snapshot)
    out = _prepare_out(args.out, f"runs/sweep-{rid}")
    jobs, outputs = [], []
    for f, scfg, ds in zip(fractions, scfgs, datasets):
        sub = out / f"intervention-{f:g}"
        write_split(ds, sub, scfg)
        jobs.append((ds, hp, cfg["method"], ks, sub, f"{rid}-{f:g}"))
        outputs += [f"{sub.name}/{n}" for n in ("train.tsv", "valid.tsv", "test.tsv", "split.json",
                                                 "checkpoint.bin", "report.json", "metrics.csv")]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(args.jobs, len(jobs))) as pool:
            results = list(pool.map(_sweep_variant, jobs))
    else:
        results = [_sweep_variant(j) for j in jobs]
    (out / "metrics.csv").write_text(metrics_csv(row for rows in results for row in rows), encoding="utf-8")
    return out, RunManifest("sweep", [], snapshot, hp.seed, {str(src): sha256_file(src)}, ["metrics.csv"] + outputs)


def cmd_audit(args, cfg) -> tuple[Path, RunManifest]:
    src = Path(args.input)
    stages = cfg.get("stages", 20)
    n_items = cfg.get("audit_items", 10)
    if stages < 1 or n_items < 1:
        raise UsageError("stages and audit_items must be >= 1")
    if not src.is_file():
        raise DataError(f"input file not found: {src}")
    result = audit(parse_file(src, args.delimiter), stages, n_items)
    out = _prepare_out(args.out, f"runs/audit-{run_id('audit', {'input': sha256_file(src), 'stages': stages})}")
    (out / "audit.csv").write_text(result.to_csv(), encoding="utf-8")
    (out / "report.json").write_text(json.dumps({"pearson": result.pearson, "stages": stages},
                                                indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return out, RunManifest("audit-bias", [], {"stages": stages, "audit_items": n_items, "delimiter": args.delimiter},
                       cfg.get("seed", 0), {str(src): sha256_file(src)}, ["audit.csv", "report.json"])


def cmd_synth(args, cfg) -> tuple[Path, RunManifest]:
    scfg = synth_config(cfg)
    out = _prepare_out(args.out, f"runs/synth-{run_id('synth', asdict(scfg))}")
    data = generate(scfg)
    write_synth(data, out)
    ds = to_split_dataset(data, seed=scfg.seed)
    write_split(ds, out / "split")
    write_interactions(out / "positives.tsv", data.train + data.test)
    return out, RunManifest("synth", [], asdict(scfg), scfg.seed, {},
                       ["train.tsv", "test.tsv", "truth.json", "positives.tsv", "split/train.tsv",
                        "split/valid.tsv", "split/test.tsv", "split/split.json"])


COMMANDS = {"ingest": cmd_ingest, "split": cmd_split, "train": cmd_train, "evaluate": cmd_evaluate,
            "sweep": cmd_sweep, "audit-bias": cmd_audit, "synth": cmd_synth}


# ---------------------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="debias-rec", description="Debiased recommendation training pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, data=False):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="run directory (created if missing)")
        if data:
            p.add_argument("--data", help="split directory (default: bundled toy dataset)")
        return p

    def model_flags(p):
        p.add_argument("--method", help=f"one of {', '.join(METHODS)}")
        p.add_argument("--backbone", help=f"one of {', '.join(BACKBONES)}")
        p.add_argument("--k", help="cutoffs, e.g. 20,50")

    p = common(sub.add_parser("ingest", help="parse a ratings file into canonical interactions"))
    p.add_argument("--input", required=True)
    p.add_argument("--delimiter", default="::")

    p = common(sub.add_parser("split", help="intervened train/valid/test split"))
    p.add_argument("--input", help="canonical interactions TSV (default: bundled toy positives)")
    p.add_argument("--intervention", help="intervened share of train, e.g. 0.1")

    model_flags(common(sub.add_parser("train", help="train one model and evaluate on test"), data=True))

    p = common(sub.add_parser("evaluate", help="evaluate a checkpoint"), data=True)
    model_flags(p)
    p.add_argument("--checkpoint", required=True)

    p = common(sub.add_parser("sweep", help="train/evaluate across intervention fractions"))
    model_flags(p)
    p.add_argument("--input", help="canonical interactions TSV (default: bundled toy positives)")
    p.add_argument("--intervention", help="fractions, e.g. 0,0.1,0.2")
    p.add_argument("--jobs", type=int, default=1)

    p = common(sub.add_parser("audit-bias", help="praise/popularity co-movement audit"))
    p.add_argument("--input", required=True, help="raw ratings file")
    p.add_argument("--delimiter", default="::")

    common(sub.add_parser("synth", help="generate a confounded synthetic dataset"))
    return parser


def _setup_logging() -> None:
    name = os.environ.get("DEBIAS_REC_LOG", "WARNING").upper()
    level = int(name) if name.isdigit() else getattr(logging, name, logging.WARNING)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve(args)
        started = time.perf_counter()
        out_dir, manifest = COMMANDS[args.command](args, cfg)
        manifest.argv = argv
        manifest.wall_time = time.perf_counter() - started
        manifest.write(out_dir)
        print(out_dir)
        return EXIT_OK
    except UsageError as exc:
        print(f"debias-rec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"debias-rec: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergedError as exc:
        print(f"debias-rec: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, OSError, DebiasRecError) as exc:
        print(f"debias-rec: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
