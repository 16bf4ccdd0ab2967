"""Command-line entry point: train-zoo, sparsify, analyze, hyperrep.

Exit codes: 0 ok, 2 config error, 3 data error, 4 compute failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import analytics
from .hyperrep import (
    PROBE_COLUMNS,
    AEConfig,
    TrainConfig,
    build_population,
    probe_all,
    reconstruction_r2,
    save_ae,
    save_embeddings,
    shuffled_control,
    train_ae,
)
from .hyperrep.probe import TARGETS
from .hyperrep.train import AEDivergence
from .report import METRICS_COLUMNS, emit_report
from .schemas import SCHEMAS
from .sparsify.twin import DEFAULT_RATIOS, MPParams, VDParams, load_twin, sparsify_zoo, twin_tags
from .zoo.arch import PRESETS, ArchConfig, ConfigError, GeneratingFactors
from .zoo.checkpoint import FormatError
from .zoo.data import DataError, load_idx_dataset
from .zoo.zoo import load_zoo, product_grid, read_index, train_zoo

log = logging.getLogger("zootwin")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_COMPUTE = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


# -- config plumbing ---------------------------------------------------------
def load_config(path, command: str, overrides: dict) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError(EXIT_CONFIG, f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"config {path} is not valid JSON: {exc}")
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    try:
        jsonschema.validate(cfg, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise CliError(EXIT_CONFIG, f"invalid {command} config at {where}: {exc.message}")
    return cfg


def prepare_out(out, force: bool) -> Path:
    if out is None:
        raise CliError(EXIT_CONFIG, "no output directory (use --out or the config's 'out')")
    out = Path(out)
    if out.exists() and not out.is_dir():
        raise CliError(EXIT_CONFIG, f"output path {out} is not a directory")
    if out.exists() and any(out.iterdir()):
        if not force:
            raise CliError(EXIT_CONFIG, f"output directory {out} is not empty (use --force to overwrite)")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_dataset(ds: dict):
    keys = ("train_images", "train_labels", "test_images", "test_labels")
    for k in keys:
        if not Path(ds[k]).exists():
            raise CliError(EXIT_DATA, f"dataset file not found: {ds[k]}")
    try:
        return load_idx_dataset(*(ds[k] for k in keys), num_classes=ds.get("num_classes", 10), name=ds.get("name"))
    except DataError as exc:
        raise CliError(EXIT_DATA, f"dataset error: {exc}")


def _absolute_dataset(ds: dict) -> dict:
    out = dict(ds)
    for k in ("train_images", "train_labels", "test_images", "test_labels"):
        out[k] = str(Path(ds[k]).resolve())
    return out


def _zoo_dataset(cfg: dict, zoo_dir) -> dict:
    if "dataset" in cfg:
        return cfg["dataset"]
    ds = read_index(zoo_dir).get("dataset_config")
    if ds is None:
        raise CliError(EXIT_CONFIG, f"zoo {zoo_dir} records no dataset; give one in the config")
    return ds


def _load_source_zoo(path, load_states: bool = True):
    if not (Path(path) / "index.json").exists():
        raise CliError(EXIT_DATA, f"zoo not found (no index.json): {path}")
    try:
        return load_zoo(path, load_states)
    except (FormatError, OSError) as exc:
        raise CliError(EXIT_DATA, f"cannot read zoo {path}: {exc}")


# -- subcommands ---------------------------------------------------------------
def cmd_train_zoo(cfg: dict, out: Path) -> int:
    arch_cfg = cfg.get("arch", "small")
    try:
        arch = PRESETS[arch_cfg]() if isinstance(arch_cfg, str) else ArchConfig.from_dict(arch_cfg)
        arch.param_shapes()
        base = GeneratingFactors(**cfg.get("base", {}))
        grid_cfg = dict(cfg["grid"])
        seeds = grid_cfg.pop("seeds", None)
        n_models = grid_cfg.pop("n_models", None)
        first = grid_cfg.pop("first_seed", 0)
        if seeds is None:
            if n_models is None:
                raise ConfigError("grid needs 'seeds' or 'n_models'")
            seeds = list(range(first, first + n_models))
        grid = product_grid(seeds, base, **grid_cfg)
    except (ConfigError, TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"config error: {exc}")
    data = load_dataset(cfg["dataset"])
    if data.input_dims != tuple(arch.input_dims):
        raise CliError(EXIT_CONFIG, f"architecture expects {tuple(arch.input_dims)}, dataset has {data.input_dims}")
    try:
        zoo = train_zoo(grid, arch, data, cfg["epochs"], batch=cfg.get("batch", 32), zoo_seed=cfg.get("seed", 0),
                        out_dir=out, workers=cfg.get("workers", 1), name=cfg.get("name", "zoo"),
                        index_extra={"dataset_config": _absolute_dataset(cfg["dataset"])})
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"config error: {exc}")
    failed = [e.model_id for e in zoo.entries if e.status != "ok"]
    if failed:
        log.error("training failed for models %s (partial zoo kept)", failed)
        return EXIT_COMPUTE
    return EXIT_OK


def cmd_sparsify(cfg: dict, out: Path) -> int:
    zoo = _load_source_zoo(cfg["zoo"])
    data = load_dataset(_zoo_dataset(cfg, cfg["zoo"]))
    if cfg["method"] == "mp":
        d = MPParams()
        params = MPParams(tuple(cfg.get("ratios", DEFAULT_RATIOS)), cfg.get("epochs", d.epochs), cfg.get("lr", d.lr),
                          cfg.get("batch", d.batch))
    else:
        d = VDParams()
        params = VDParams(cfg.get("epochs", d.epochs), cfg.get("lr") or d.lr, cfg.get("sigma_lr"), cfg.get("kl_coef"),
                          cfg.get("threshold", d.threshold), cfg.get("batch", d.batch))
    by_tag = sparsify_zoo(zoo, data, cfg["method"], params, workers=cfg.get("workers", 1), out_dir=out)
    failed = sorted({(tag, t.model_id) for tag, ts in by_tag.items() for t in ts if t.status != "ok"})
    if failed:
        log.error("sparsification failed for %s (trajectories kept up to failure)", failed)
        return EXIT_COMPUTE
    return EXIT_OK


def _resolve_twin(twin) -> list[tuple[str, Path]]:
    """``(tag, sub-zoo dir)`` pairs; a plain zoo directory counts as one tag."""
    twin = Path(twin)
    if (twin / "index.json").exists():
        return [(read_index(twin).get("method", "original"), twin)]
    if not twin.is_dir():
        raise CliError(EXIT_DATA, f"twin zoo not found: {twin}")
    tags = twin_tags(twin)
    if not tags:
        raise CliError(EXIT_DATA, f"no sub-zoos with index.json under {twin}")
    return [(t, twin / t) for t in tags]


def cmd_analyze(cfg: dict, out: Path) -> int:
    orig = _load_source_zoo(cfg["original"])
    data = load_dataset(_zoo_dataset(cfg, cfg["original"]))
    subs = _resolve_twin(cfg["twin"])
    if cfg.get("tags"):
        subs = [(t, p) for t, p in subs if t in cfg["tags"]]
        if not subs:
            raise CliError(EXIT_CONFIG, f"none of the requested tags {cfg['tags']} exist")
    orig_ids = {e.model_id for e in orig.entries}
    agree_rows, corr_rows, layer_rows, scatter_rows = [], [], [], []
    traj_rows = list(orig.metric_rows())
    layer_cols = None
    for tag, sub in subs:
        trajs = load_twin(sub.parent, sub.name)
        twin_ids = {t.model_id for t in trajs}
        orphans = sorted(orig_ids ^ twin_ids)
        if orphans:
            raise CliError(EXIT_CONFIG, f"unpaired model ids between original and {tag}: {orphans}")
        by_id = {e.model_id: e for e in orig.entries}
        ok = [t for t in trajs if t.status == "ok" and by_id[t.model_id].status == "ok" and t.steps]
        for t in trajs:
            traj_rows.extend({"zoo": orig.name, "model_id": t.model_id, "method": tag, "epoch": s.record.epoch,
                              "sparsity": s.record.sparsity, "train_acc": s.record.train_acc,
                              "test_acc": s.record.test_acc, "ggap": s.record.ggap} for s in t.steps)
        rep = analytics.agreement_report([by_id[t.model_id].state for t in ok], [t.steps[-1].state for t in ok],
                                         data, ids=[t.model_id for t in ok])
        agree_rows.extend({"tag": tag, **r} for r in rep.rows())
        x = [by_id[t.model_id].final.test_acc for t in ok]
        y = [t.steps[-1].record.test_acc for t in ok]
        try:
            c = analytics.correlation_report(x, y, tag).row()
        except (analytics.UndefinedCorrelation, ValueError) as exc:
            log.warning("correlation undefined for %s: %s", tag, exc)
            c = {"sparsity_level": tag, "n": len(x), "pearson_r": float("nan"), "kendall_tau": float("nan")}
        corr_rows.append(c)
        n_states = min(len(t.steps) for t in ok) if ok else 0
        epochs = [e for e in cfg.get("layer_epochs", [0, 5, 10, 15, 20, 25]) if e < n_states]
        if ok and epochs:
            st = analytics.layer_sparsity_stats(ok, epochs, orig.arch)
            for r in st.table:
                r["method"] = tag
            for r in st.scatter:
                r["method"] = tag
            layer_rows.extend(st.table)
            scatter_rows.extend(st.scatter)
            layer_cols = analytics.layer_table_columns(orig.arch)
    emit_report(agree_rows, out / "agreement.csv", ("tag",) + analytics.AGREEMENT_COLUMNS)
    emit_report(corr_rows, out / "correlation.csv", analytics.CORRELATION_COLUMNS)
    emit_report(layer_rows, out / "layer_sparsity.csv", layer_cols or analytics.layer_table_columns(orig.arch))
    emit_report(scatter_rows, out / "layer_scatter.tsv", ("method",) + analytics.SCATTER_COLUMNS, delimiter="\t")
    emit_report(traj_rows, out / "trajectories.csv", METRICS_COLUMNS)
    return EXIT_OK


def cmd_hyperrep(cfg: dict, out: Path) -> int:
    twin = Path(cfg["twin"])
    tag = cfg.get("tag", "vd")
    if (twin / "index.json").exists():
        tag, twin = twin.name, twin.parent
    if not (twin / tag / "index.json").exists():
        others = twin_tags(twin) if twin.is_dir() else []
        if others:
            raise CliError(EXIT_CONFIG, f"{twin} holds only {others}, which carry no alpha maps; "
                                        "hyper-representations need a VD twin zoo")
        raise CliError(EXIT_DATA, f"no '{tag}' sub-zoo under {twin}")
    trajs = [t for t in load_twin(twin, tag) if t.steps]
    if not trajs or any(s.log_alpha is None for t in trajs for s in t.steps):
        raise CliError(EXIT_CONFIG, f"zoo {twin / tag} has no alpha maps; hyper-representations need a VD twin zoo")
    seed = cfg.get("seed", 0)
    tcfg = TrainConfig.from_dict({**cfg.get("train", {}), "seed": seed})
    items = [(t.model_id, s.state, s.log_alpha, {"test_acc": s.record.test_acc, "sparsity": s.record.sparsity,
                                                 "epoch": s.record.epoch, "ggap": s.record.ggap})
             for t in trajs for s in t.steps]
    pop = build_population(items, cfg.get("d_tok", 64))
    from .engine import stream

    hold = stream(seed, "hyperrep/holdout").permutation(len(pop))
    n_hold = int(round(cfg.get("holdout_frac", 0.15) * len(pop)))
    train_idx, test_idx = np.sort(hold[n_hold:]), np.sort(hold[:n_hold])
    ae_cfg = AEConfig(n_tokens=pop.w.shape[1], d_tok=pop.w.shape[2], **cfg.get("ae", {}))
    try:
        res = train_ae(pop.subset(train_idx), tcfg, ae_cfg)
    except AEDivergence as exc:
        raise CliError(EXIT_COMPUTE, f"autoencoder training diverged: {exc}")
    save_ae(out / "ae.ztc", res, tcfg)
    cols = list(res.loss_log[0])
    emit_report(res.loss_log, out / "loss_log.csv", cols)
    recon = reconstruction_r2(res.ae, pop.subset(train_idx), pop.subset(test_idx), tcfg.loss) if n_hold else {}
    emit_report([{"target": k, "r2": v, "n_train": len(train_idx), "n_test": len(test_idx)} for k, v in recon.items()],
                out / "reconstruction.csv", PROBE_COLUMNS)
    z = res.ae.embed(pop.w)
    save_embeddings(out / "embeddings.ztc", z, pop, {"tag": tag, "seed": seed})
    pcfg = cfg.get("probe", {})
    lam, frac = pcfg.get("lambda", 1e-3), pcfg.get("test_frac", 0.2)
    try:
        results = probe_all(z, pop.props, pop.model_id, lam, frac, seed)
        controls = [shuffled_control(z, pop.props[col], pop.model_id, name, lam, frac, seed) for name, col in TARGETS.items()]
    except ValueError as exc:
        raise CliError(EXIT_COMPUTE, f"probing failed: {exc}")
    emit_report([r.row() for r in results], out / "probe.csv", PROBE_COLUMNS)
    emit_report([r.row() for r in controls], out / "probe_control.csv", PROBE_COLUMNS)
    return EXIT_OK


COMMANDS = {"train-zoo": cmd_train_zoo, "sparsify": cmd_sparsify, "analyze": cmd_analyze, "hyperrep": cmd_hyperrep}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run config")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="u64 seed (overrides the config)")
    common.add_argument("--workers", type=int, help="parallel model jobs; never changes outputs")
    common.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    p = argparse.ArgumentParser(prog="zootwin", description="Sparsified model zoo twins")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    sp = sub.add_parser("schema", help="print the JSON schema of a subcommand config")
    sp.add_argument("name", choices=sorted(SCHEMAS))
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("ZOOTWIN_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.command == "schema":
        print(json.dumps(SCHEMAS[args.name], indent=2))
        return EXIT_OK
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise CliError(EXIT_CONFIG, "--seed must be an unsigned 64-bit integer")
        cfg = load_config(args.config, args.command, {"out": args.out, "seed": args.seed, "workers": args.workers})
        out = prepare_out(cfg.get("out"), args.force)
        return COMMANDS[args.command](cfg, out)
    except CliError as exc:
        print(f"zootwin: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
