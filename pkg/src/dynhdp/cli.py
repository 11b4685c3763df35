"""Command-line pipelines: synth, train, score, eval, extract.

Settings resolve in this order, later winning: built-in defaults, the INI
config file (``[DEFAULT]`` plus a section named after the subcommand), the
environment (``DYNHDP_OUT_DIR`` and ``DYNHDP_THREADS`` only), then flags.
Every run writes ``run-manifest.json`` next to its outputs with the resolved
settings, a command line that repeats the run, and SHA-256 checksums of all
inputs and outputs.

Exit codes: 0 ok, 2 bad input, 3 model/vocabulary mismatch, 4 evaluation
impossible (single-class labels).
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import os
import shlex
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .anomaly import read_scores_csv, roc_auc, roc_svg, score_documents, write_roc_csv, write_scores_csv
from .corpus import Corpus, HyperParams, InvalidHyperparameterError, MalformedCorpusError, load_corpus, save_corpus
from .features import FeatureConfig, FrameError, clip_bounds, extract_corpus, list_frames, load_frames
from .inference import (
    GibbsConfig,
    SnapshotFormatError,
    VocabularyMismatchError,
    batch_train,
    load_snapshot,
    save_snapshot,
)
from .synthetic import BARS_HYPER, BarsSpec, GenerationError, generate_bars, save_truth, split, true_model_score

log = logging.getLogger("dynhdp")

EXIT_INPUT, EXIT_MISMATCH, EXIT_EVAL = 2, 3, 4
ENV_OUT, ENV_THREADS = "DYNHDP_OUT_DIR", "DYNHDP_THREADS"
MANIFEST = "run-manifest.json"


class CliError(Exception):
    def __init__(self, message, code=EXIT_INPUT):
        super().__init__(message)
        self.code = code


# option name -> (type, default, help); shared by the parser and the config file
HYPER_OPTS = {
    "alpha": (float, BARS_HYPER.alpha, "table concentration"),
    "gamma": (float, BARS_HYPER.gamma, "topic concentration"),
    "delta": (float, BARS_HYPER.delta, "weight of corpus-wide table counts in the topic draw"),
    "eta": (float, BARS_HYPER.eta, "symmetric Dirichlet parameter of the topic prior"),
}

OPTIONS = {
    "synth": {
        "seed": (int, 0, "random seed"),
        "n_train": (int, 200, "training documents"),
        "n_test": (int, 200, "test documents"),
        "doc_length": (int, 100, "tokens per document"),
        "abnormal_fraction": (float, 0.1, "fraction of test documents made abnormal"),
        **HYPER_OPTS,
    },
    "train": {
        "corpus": (str, None, "training corpus file"),
        "format": (str, "token-list", "corpus format: token-list or count-vector"),
        "mode": (str, "dynamic", "topic draw: dynamic or hdp"),
        "conditional": (str, "exact", "dynamic table-topic conditional: exact or local"),
        "sweeps": (int, 500, "Gibbs sweeps"),
        "chains": (int, 1, "independent chains; the best by joint probability is kept"),
        "seed": (int, 0, "random seed"),
        **HYPER_OPTS,
    },
    "score": {
        "snapshot": (str, None, "trained model snapshot"),
        "corpus": (str, None, "test corpus file, temporally ordered"),
        "format": (str, "token-list", "corpus format: token-list or count-vector"),
        "sweeps": (int, 50, "online sweeps per document"),
        "burn_in": (int, 10, "online sweeps discarded before sampling"),
        "sample_lag": (int, 2, "sweeps between retained samples"),
        "seed": (int, 0, "random seed"),
        "update": (bool, True, "absorb each scored document into the model"),
    },
    "eval": {
        "scores": (str, None, "scores CSV, or several as name=path separated by commas"),
        "labels": (str, None, "optional CSV of doc_index,label overriding the scores' labels"),
    },
    "extract": {
        "frames": (str, None, "directory of numbered 8-bit PGM frames"),
        "cell_size": (int, FeatureConfig.cell_size, "grid cell edge in pixels"),
        "tau": (float, FeatureConfig.tau, "minimum mean cell motion in pixels/frame"),
        "clip_length": (int, FeatureConfig.clip_length, "frame pairs per document"),
        "smoothness": (float, FeatureConfig.smoothness, "flow smoothness weight"),
        "iterations": (int, FeatureConfig.iterations, "flow fixed-point iterations"),
    },
}

REQUIRED = {"train": ["corpus"], "score": ["snapshot", "corpus"], "eval": ["scores"], "extract": ["frames"]}


def _parse_bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynhdp", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help="INI config file; flags override its values")
    p.add_argument("--out", help=f"output directory (env {ENV_OUT}, default .)")
    p.add_argument("--threads", type=int, help=f"worker threads (env {ENV_THREADS}, default 1)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "synth": "generate a bars corpus with injected abnormal documents",
        "train": "batch Gibbs training on a corpus; writes snapshot.txt",
        "score": "online scoring of a test corpus; writes scores.csv",
        "eval": "ROC curve and AUC from scores; writes roc CSVs and roc.svg",
        "extract": "motion-word corpus from a PGM frame directory; writes corpus.txt",
    }
    for name, opts in OPTIONS.items():
        sp = sub.add_parser(name, help=helps[name], description=helps[name])
        for key, (typ, default, text) in opts.items():
            flag = "--" + key.replace("_", "-")
            if typ is bool:
                sp.add_argument(flag, dest=key, action="store_true", default=None,
                                help=f"{text} (default {default})")
                sp.add_argument("--no-" + key.replace("_", "-"), dest=key, action="store_false",
                                help=f"do not {text}")
            else:
                shown = "" if default is None else f" (default {default})"
                sp.add_argument(flag, dest=key, type=typ, default=None, help=text + shown)
    return p


def resolve(args, environ=os.environ) -> dict:
    """Merge defaults, config file, environment and flags into one dict."""
    cmd = args.command
    cfg = {k: d for k, (_, d, _) in OPTIONS[cmd].items()}
    cfg["out"], cfg["threads"] = ".", 1
    types = {k: t for k, (t, _, _) in OPTIONS[cmd].items()}
    types.update(out=str, threads=int)
    if args.config:
        cp = configparser.ConfigParser()
        try:
            with open(args.config, encoding="utf-8") as fh:
                cp.read_file(fh)
        except OSError as e:
            raise CliError(f"{args.config}: cannot read config ({e.strerror})")
        except configparser.Error as e:
            raise CliError(f"{args.config}: {e}")
        section = cp[cmd] if cp.has_section(cmd) else cp.defaults()
        base = Path(args.config).parent
        for key, raw in section.items():
            key = key.replace("-", "_")
            if key not in types:
                if cp.has_section(cmd) and key in cp[cmd] and key not in cp.defaults():
                    raise CliError(f"{args.config}: unknown option {key!r} for {cmd}")
                continue
            try:
                val = _parse_bool(raw) if types[key] is bool else types[key](raw)
            except ValueError as e:
                raise CliError(f"{args.config}: option {key}: {e}")
            if key in ("corpus", "snapshot", "frames", "labels", "out") and not os.path.isabs(val):
                val = str(base / val)
            cfg[key] = val
    if environ.get(ENV_OUT):
        cfg["out"] = environ[ENV_OUT]
    if environ.get(ENV_THREADS):
        try:
            cfg["threads"] = int(environ[ENV_THREADS])
        except ValueError:
            raise CliError(f"{ENV_THREADS} must be an integer, got {environ[ENV_THREADS]!r}")
    for key in list(OPTIONS[cmd]) + ["out", "threads"]:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if cfg["threads"] < 1:
        raise CliError("threads must be >= 1")
    for key in REQUIRED.get(cmd, []):
        if cfg.get(key) is None:
            raise CliError(f"{cmd}: --{key.replace('_', '-')} is required")
    return cfg


# ---------------------------------------------------------------------------
# helpers


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def replay_command(cmd: str, cfg: dict) -> str:
    parts = ["dynhdp", "--out", cfg["out"], "--threads", str(cfg["threads"]), cmd]
    for key, (typ, _, _) in OPTIONS[cmd].items():
        val = cfg.get(key)
        if val is None:
            continue
        flag = "--" + key.replace("_", "-")
        if typ is bool:
            parts.append(flag if val else "--no-" + key.replace("_", "-"))
        else:
            parts += [flag, repr(val) if typ is float else str(val)]
    return shlex.join(parts)


def write_manifest(out: Path, cmd: str, cfg: dict, inputs, outputs, extra=None) -> Path:
    doc = {
        "tool": "dynhdp",
        "version": __version__,
        "command": cmd,
        "config": {k: cfg[k] for k in sorted(cfg)},
        "replay": replay_command(cmd, cfg),
        "inputs": {str(p): sha256(p) for p in inputs},
        "outputs": {Path(p).name: sha256(p) for p in outputs},
    }
    if extra:
        doc.update(extra)
    path = out / MANIFEST
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _hyper(cfg) -> HyperParams:
    return HyperParams(cfg["alpha"], cfg["gamma"], cfg["delta"], cfg["eta"])


def _load_corpus(path, fmt) -> Corpus:
    if fmt not in ("token-list", "count-vector"):
        raise CliError(f"unknown corpus format {fmt!r}")
    if not os.path.isfile(path):
        raise CliError(f"{path}: no such corpus file")
    return load_corpus(path, format=fmt)


def _write_text(path: Path, text: str) -> Path:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg: dict, out: Path) -> dict:
    spec = BarsSpec(cfg["n_train"], cfg["n_test"], cfg["doc_length"], cfg["abnormal_fraction"])
    corpus, truth = generate_bars(spec, _hyper(cfg), rng=cfg["seed"])
    train, test = split(corpus, spec.n_train)
    files = [out / "corpus.txt", out / "train.txt", out / "test.txt", out / "truth.txt", out / "labels.csv"]
    save_corpus(corpus, files[0])
    save_corpus(train, files[1])
    save_corpus(test, files[2])
    save_truth(truth, files[3])
    _write_text(files[4], "doc_index,label\n" + "".join(f"{d.index},{d.label}\n" for d in test))
    if spec.n_test:
        res = true_model_score(truth, corpus, start=spec.n_train)
        for r in res:
            r.doc_index -= spec.n_train
        files.append(out / "true_scores.csv")
        with open(files[-1], "w", encoding="utf-8", newline="\n") as fh:
            write_scores_csv(fh, res, [d.label for d in test])
    n_abn = sum(d.label == "abnormal" for d in test)
    print(f"synth: {len(corpus)} documents (V={corpus.V}), {n_abn} abnormal test documents")
    return {"inputs": [], "outputs": files}


def cmd_train(cfg: dict, out: Path) -> dict:
    corpus = _load_corpus(cfg["corpus"], cfg["format"])
    gcfg = GibbsConfig(sweeps=cfg["sweeps"], burn_in=0, chains=cfg["chains"], seed=cfg["seed"],
                       mode=cfg["mode"], dynamic_conditional=cfg["conditional"], threads=cfg["threads"])
    snap, _ = batch_train(corpus, _hyper(cfg), gcfg)
    path = out / "snapshot.txt"
    save_snapshot(snap, path)
    print(f"train: {cfg['mode']} model with K={snap.K} topics on {len(corpus)} documents")
    return {"inputs": [cfg["corpus"]], "outputs": [path]}


def cmd_score(cfg: dict, out: Path) -> dict:
    if not os.path.isfile(cfg["snapshot"]):
        raise CliError(f"{cfg['snapshot']}: no such snapshot file")
    snap = load_snapshot(cfg["snapshot"])
    corpus = _load_corpus(cfg["corpus"], cfg["format"])
    if corpus.V != snap.V:
        raise CliError(f"{cfg['corpus']}: vocabulary size {corpus.V} does not match "
                       f"the model's {snap.V}", EXIT_MISMATCH)
    gcfg = GibbsConfig.online(sweeps=cfg["sweeps"], burn_in=cfg["burn_in"], sample_lag=cfg["sample_lag"],
                              seed=cfg["seed"], mode=snap.mode)
    results = []
    for r, s in score_documents(snap, corpus, snap.hyper, gcfg, update=cfg["update"]):
        results.append(r)
        snap = s
    path = out / "scores.csv"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        write_scores_csv(fh, results, corpus.labels())
    outputs = [path]
    if cfg["update"]:
        outputs.append(out / "snapshot_updated.txt")
        save_snapshot(snap, outputs[-1])
    n_def = sum(r.defined for r in results)
    print(f"score: {len(results)} documents scored ({n_def} non-empty)")
    return {"inputs": [cfg["snapshot"], cfg["corpus"]], "outputs": outputs}


def _read_labels(path) -> dict:
    if not os.path.isfile(path):
        raise CliError(f"{path}: no such labels file")
    labels = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or (n == 1 and line.startswith("doc_index")):
                continue
            try:
                idx, lab = line.split(",")
                labels[int(idx)] = lab.strip()
            except ValueError:
                raise CliError(f"{path}:{n}: expected doc_index,label")
    return labels


def cmd_eval(cfg: dict, out: Path) -> dict:
    specs = []
    for n, item in enumerate(cfg["scores"].split(",")):
        name, _, path = item.rpartition("=")
        specs.append((name or ("scores" if n == 0 else f"scores{n}"), path))
    names = [s[0] for s in specs]
    if len(set(names)) != len(names):
        raise CliError("eval: curve names must be unique")
    override = _read_labels(cfg["labels"]) if cfg.get("labels") else None
    curves, inputs, outputs = {}, [], []
    for name, path in specs:
        if not os.path.isfile(path):
            raise CliError(f"{path}: no such scores file")
        with open(path, encoding="utf-8") as fh:
            try:
                rows = read_scores_csv(fh)
            except (KeyError, ValueError) as e:
                raise CliError(f"{path}: malformed scores CSV ({e})")
        if override is not None:
            have = {r[0] for r in rows}
            unknown = sorted(set(override) - have)
            if unknown:
                raise CliError(f"{cfg['labels']}: unknown doc_index {unknown[0]}")
            missing = sorted(have - set(override))
            if missing:
                raise CliError(f"{cfg['labels']}: no label for doc_index {missing[0]}")
            rows = [(i, s, d, override[i]) for i, s, d, _ in rows]
        kept = [r for r in rows if r[2] and r[3] in ("normal", "abnormal")]
        try:
            roc = roc_auc([r[1] for r in kept], [r[3] for r in kept])
        except ValueError as e:
            raise CliError(f"{path}: {e}", EXIT_EVAL)
        curves[name] = roc
        inputs.append(path)
        fname = out / ("roc.csv" if len(specs) == 1 else f"roc_{name}.csv")
        with open(fname, "w", encoding="utf-8", newline="\n") as fh:
            write_roc_csv(fh, roc)
        outputs.append(fname)
        print(f"AUC {name} {roc.auc:.4f}")
    outputs.append(_write_text(out / "roc.svg", roc_svg(curves)))
    if cfg.get("labels"):
        inputs.append(cfg["labels"])
    return {"inputs": inputs, "outputs": outputs,
            "extra": {"auc": {k: v.auc for k, v in curves.items()}}}


def cmd_extract(cfg: dict, out: Path) -> dict:
    try:
        fc = FeatureConfig(cfg["cell_size"], cfg["tau"], cfg["clip_length"], cfg["smoothness"], cfg["iterations"])
    except ValueError as e:
        raise CliError(f"extract: {e}")
    files = list_frames(cfg["frames"])
    if len(files) < 2:
        raise CliError(f"{cfg['frames']}: need at least two frames, found {len(files)}")
    frames = load_frames(cfg["frames"])
    if fc.vocab_size(frames[0].shape) == 0:
        raise CliError(f"{files[0]}: frame smaller than one {fc.cell_size}-pixel cell")
    with ThreadPoolExecutor(max_workers=cfg["threads"]) as pool:
        corpus = extract_corpus(frames, fc, pool.map)
    bounds = clip_bounds(len(frames), fc.clip_length)
    path = out / "corpus.txt"
    save_corpus(corpus, path)
    partial = [n for n, (_, _, p) in enumerate(bounds) if p]
    print(f"extract: {len(files)} frames -> {len(corpus)} documents, V={corpus.V}, "
          f"{int(corpus.lengths().sum())} words")
    return {"inputs": files, "outputs": [path],
            "extra": {"partial_documents": partial, "vocabulary_size": corpus.V}}


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "score": cmd_score, "eval": cmd_eval, "extract": cmd_extract}


def main(argv=None, environ=None) -> int:
    environ = os.environ if environ is None else environ
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args, environ)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        res = COMMANDS[args.command](cfg, out)
        write_manifest(out, args.command, cfg, res["inputs"], res["outputs"], res.get("extra"))
    except CliError as e:
        print(f"dynhdp: error: {e}", file=sys.stderr)
        return e.code
    except VocabularyMismatchError as e:
        print(f"dynhdp: error: {e}", file=sys.stderr)
        return EXIT_MISMATCH
    except (MalformedCorpusError, SnapshotFormatError, FrameError, GenerationError,
            InvalidHyperparameterError, ValueError, OSError) as e:
        print(f"dynhdp: error: {e}", file=sys.stderr)
        return EXIT_INPUT
    return 0


if __name__ == "__main__":
    sys.exit(main())
