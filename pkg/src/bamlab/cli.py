"""Command line entry point: ``bamlab {verify,train,eval,dump}``.

Every run writes into ``--out``, which must be empty or missing. A
``manifest.json`` records the resolved configuration and library versions;
an ``INCOMPLETE`` marker sits in the directory until the run finishes, so a
crashed run is recognizable and never mistaken for a finished one.
"""

import argparse
import contextlib
import json
import logging
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np
import torch
import yaml

from . import tasks, theory
from .model import Checkpoint, ConfigError, ModelConfig, OptimizerSettings, dump_attention, train

log = logging.getLogger("bamlab")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_VERIFY = 3

SWEEP_KINDS = ("nope", "alibi", "bam")
TRAIN_KEYS = {"steps", "lr", "batch_size", "weight_decay", "warmup_steps", "min_lr_ratio", "grad_clip"}
DATA_KEYS = {"corpus", "passkey_weight", "copy_weight", "min_len", "filler", "motif_len", "min_gap",
             "score_copy_only", "doc_length"}
DEFAULT_DATA = {"corpus": "curriculum", "passkey_weight": 3, "copy_weight": 1, "min_len": 16,
                "filler": "uniform", "motif_len": 6, "min_gap": 16, "score_copy_only": True,
                "doc_length": None}


class CliError(Exception):
    """Raised for problems with the configuration or arguments (exit status 2)."""


def _versions():
    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"bamlab": own, "numpy": np.__version__, "torch": torch.__version__,
            "python": platform.python_version()}


@contextlib.contextmanager
def run_dir(out, command, resolved):
    out = Path(out)
    if out.exists() and any(out.iterdir()):
        raise CliError(f"output directory {out} is not empty")
    out.mkdir(parents=True, exist_ok=True)
    marker = out / "INCOMPLETE"
    marker.write_text("run did not finish\n")
    manifest = {"command": command, "config": resolved, "versions": _versions(), "status": "running"}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    yield out
    manifest["status"] = "complete"
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    marker.unlink()


def _dtype(precision):
    return torch.float64 if precision == "f64" else torch.float32


def load_config(path):
    """Read a YAML run config into ``{"model": ..., "training": ..., "data": ...}``."""
    if path is None:
        raw = {}
    else:
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise CliError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise CliError("config file must hold a mapping")
    unknown = set(raw) - {"model", "training", "data"}
    if unknown:
        raise CliError(f"unknown config section(s): {sorted(unknown)}")
    for section, keys in (("training", TRAIN_KEYS), ("data", DATA_KEYS)):
        bad = set(raw.get(section) or {}) - keys
        if bad:
            raise CliError(f"unknown {section} field: {sorted(bad)[0]}")
    return {
        "model": dict(raw.get("model") or {}),
        "training": dict(raw.get("training") or {}),
        "data": {**DEFAULT_DATA, **(raw.get("data") or {})},
    }


def build_corpus(data, cfg: ModelConfig, seed):
    vocab = tasks.VocabLayout(cfg.vocab_size)
    length = data["doc_length"] or cfg.train_context
    kind = data["corpus"]
    if kind == "markov":
        return tasks.gen_synthetic_corpus("markov", cfg.vocab_size, length, seed)
    if kind == "copy":
        return tasks.gen_synthetic_corpus("copy", cfg.vocab_size, length, seed,
                                          motif_len=data["motif_len"], min_gap=data["min_gap"],
                                          score_copy_only=data["score_copy_only"])
    if kind == "curriculum":
        return tasks.curriculum_stream(cfg.vocab_size, cfg.train_context, seed,
                                       passkey_weight=data["passkey_weight"],
                                       copy_weight=data["copy_weight"], min_len=data["min_len"],
                                       filler=data["filler"], motif_len=data["motif_len"],
                                       min_gap=data["min_gap"],
                                       score_copy_only=data["score_copy_only"])
    raise CliError(f"unknown data field value corpus={kind!r}")


def cmd_verify(args):
    claims = "all" if not args.claims or args.claims == ["all"] else args.claims
    unknown = [] if claims == "all" else [c for c in claims if c not in theory.CLAIMS]
    if unknown:
        raise CliError(f"unknown claim id(s) {unknown}; valid ids: {', '.join(theory.CLAIMS)}")
    resolved = {"claims": claims if claims != "all" else list(theory.CLAIMS), "seed": args.seed,
                "precision": "f64"}
    with run_dir(args.out, "verify", resolved) as out:
        reports = theory.run_claims(claims)
        theory.write_reports(reports, out / "reports.tsv")
    for r in reports:
        print(f"{r.claim_id:12s} {'PASS' if r.passed else 'FAIL'}  residual={r.max_residual:.3e}  "
              f"threshold={r.threshold:.0e}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_VERIFY


def _model_config(section, args, **override):
    fields = dict(section)
    if args.seed is not None:
        fields["seed"] = args.seed
    fields.update(override)
    return ModelConfig.from_dict(fields)


def cmd_train(args):
    conf = load_config(args.config)
    if args.steps is not None:
        conf["training"]["steps"] = args.steps
    training = {"steps": 6000, **conf["training"]}
    steps = training.pop("steps")
    settings = OptimizerSettings(**training)
    init = Checkpoint.load(args.resume) if args.resume else None
    if args.sweep:
        variants = {f"{k}_{'ssmax' if s else 'plain'}": {"pe_kind": k, "use_ssmax": s}
                    for k in SWEEP_KINDS for s in (False, True)}
    else:
        variants = {"": {}}
    cfgs = {name: _model_config(conf["model"], args, **ov) for name, ov in variants.items()}
    resolved = {"model": {n: c.to_dict() for n, c in cfgs.items()}, "training": {"steps": steps, **training},
                "data": conf["data"], "precision": args.precision, "resume": args.resume}
    with run_dir(args.out, "train", resolved) as out:
        for name, cfg in cfgs.items():
            target = out / name if name else out
            target.mkdir(exist_ok=True)
            corpus = build_corpus(conf["data"], cfg, cfg.seed)
            with open(target / "train_log.tsv", "a") as logf:
                logf.write("step\tloss\n")

                def record(step, value, logf=logf):
                    logf.write(f"{step}\t{value!r}\n")
                    logf.flush()

                ckpt = train(cfg, corpus, steps, settings, init=init, dtype=_dtype(args.precision),
                             callback=record, log_every=args.log_every)
            ckpt.save(target / "model.ckpt")
            print(f"{name or cfg.pe_kind}: trained to step {ckpt.step}, wrote {target / 'model.ckpt'}")
    return EXIT_OK


def _parse_lengths(text, train_context):
    if text is None:
        return tasks.lengths_schedule(train_context)
    try:
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise CliError(f"bad --lengths {text!r}") from None


def cmd_eval(args):
    ckpt = Checkpoint.load(args.checkpoint)
    model = ckpt.to_model(_dtype(args.precision))
    cfg = ckpt.config
    seed = cfg.seed if args.seed is None else args.seed
    lengths = _parse_lengths(args.lengths, cfg.train_context)
    vocab_size = args.vocab_size or cfg.vocab_size
    resolved = {"checkpoint": str(args.checkpoint), "task": args.task, "lengths": lengths,
                "seed": seed, "precision": args.precision, "n_seeds": args.n_seeds,
                "filler": args.filler, "n_sequences": args.n_sequences, "vocab_size": vocab_size}
    if vocab_size != cfg.vocab_size:
        raise CliError(f"task vocabulary {vocab_size} does not match checkpoint vocabulary {cfg.vocab_size}")
    with run_dir(args.out, "eval", resolved) as out:
        if args.task == "passkey":
            grid = tasks.eval_passkey(model, lengths, n_seeds=args.n_seeds, filler=args.filler, seed=seed)
            grid.write(out / "passkey_grid.tsv")
            grid.write_summary(out / "passkey_summary.tsv")
            for L, acc in zip(lengths, grid.per_length_mean):
                print(f"length {L:6d}  accuracy {acc:.3f}")
        else:
            # held-out documents from the chain the checkpoint was trained on
            corpus = tasks.gen_synthetic_corpus("markov", cfg.vocab_size, max(lengths), seed + 10_000,
                                                n_docs=args.n_sequences, chain_seed=cfg.seed)
            curve = tasks.eval_perplexity(model, corpus, lengths)
            tasks.write_perplexity(curve, out / "perplexity.tsv", cfg.train_context)
            for L, ppl in curve.items():
                print(f"length {L:6d}  perplexity {ppl:.4f}")
    return EXIT_OK


def _prompt_tokens(args, cfg):
    if args.prompt == "probe":
        vocab = tasks.VocabLayout(cfg.vocab_size)
        s = tasks.probe_sample(vocab, seed=args.seed or 0)
        return s.tokens, {"key_span": list(s.key_span)}
    try:
        toks = np.loadtxt(args.prompt, dtype=np.int64, ndmin=1)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read prompt file {args.prompt}: {exc}") from exc
    return toks, {}


def cmd_dump(args):
    ckpt = Checkpoint.load(args.checkpoint)
    cfg = ckpt.config
    if args.what == "thetas" and cfg.pe_kind != "bam":
        raise CliError("thetas exist only for pe_kind=bam checkpoints")
    if args.what == "ssmax-scales" and not cfg.use_ssmax:
        raise CliError("ssmax-scales exist only for use_ssmax checkpoints")
    resolved = {"checkpoint": str(args.checkpoint), "what": args.what, "layer": args.layer,
                "head": args.head, "prompt": args.prompt, "precision": args.precision}
    with run_dir(args.out, "dump", resolved) as out:
        if args.what == "thetas":
            with open(out / "thetas.tsv", "w") as fh:
                fh.write("layer\thead\ttheta_beta\ttheta_alpha\ttheta_mu\n")
                for l, heads in enumerate(ckpt.bam_thetas()):
                    for h, t in enumerate(heads):
                        fh.write(f"{l}\t{h}\t{t.theta_beta!r}\t{t.theta_alpha!r}\t{t.theta_mu!r}\n")
        elif args.what == "ssmax-scales":
            with open(out / "ssmax_scales.tsv", "w") as fh:
                fh.write("layer\thead\ts\n")
                for l, row in enumerate(ckpt.ssmax_scales()):
                    for h, s in enumerate(row):
                        fh.write(f"{l}\t{h}\t{float(s)!r}\n")
        else:
            tokens, extra = _prompt_tokens(args, cfg)
            model = ckpt.to_model(_dtype(args.precision))
            try:
                weights = dump_attention(model, tokens, args.layer, args.head)
            except IndexError as exc:
                raise CliError(str(exc)) from exc
            np.savetxt(out / "attention.tsv", weights, delimiter="\t", fmt="%.10g",
                       header=f"layer={args.layer} head={args.head} length={len(tokens)}")
            np.savetxt(out / "prompt.txt", tokens, fmt="%d")
            if extra:
                (out / "probe.json").write_text(json.dumps(extra) + "\n")
    print(f"wrote {args.what} to {args.out}")
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="overrides the seed in the config")
    common.add_argument("--out", required=True, help="output directory (must be empty)")
    common.add_argument("--precision", choices=("f32", "f64"), default="f32")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="bamlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", parents=[common], help="run numerical theorem verifiers")
    v.add_argument("claims", nargs="*", help=f"claim ids or 'all' ({', '.join(theory.CLAIMS)})")
    v.set_defaults(func=cmd_verify)

    t = sub.add_parser("train", parents=[common], help="train a model from a config file")
    t.add_argument("--steps", type=int)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--sweep", action="store_true", help="train {nope,alibi,bam} x {ssmax off,on}")
    t.add_argument("--log-every", type=int, default=50)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="passkey grid or perplexity curve")
    e.add_argument("checkpoint")
    e.add_argument("--task", choices=("passkey", "perplexity"), required=True)
    e.add_argument("--lengths", help="comma separated; default powers of two up to 16x train_context")
    e.add_argument("--n-seeds", type=int, default=5)
    e.add_argument("--n-sequences", type=int, default=32)
    e.add_argument("--filler", choices=("uniform", "markov"), default="uniform")
    e.add_argument("--vocab-size", type=int, help="task vocabulary; must match the checkpoint")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("dump", parents=[common], help="export attention maps, thetas or SSMax scales")
    d.add_argument("checkpoint")
    d.add_argument("--what", choices=("attention", "thetas", "ssmax-scales"), required=True)
    d.add_argument("--layer", type=int, default=0)
    d.add_argument("--head", type=int, default=0)
    d.add_argument("--prompt", default="probe", help="'probe' or a file of whitespace separated token ids")
    d.set_defaults(func=cmd_dump)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
