"""Command-line entry point: train, ablate, eval, decode, gradcheck, schedule."""
from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from dataclasses import replace
from pathlib import Path

from .checkpoint import CheckpointError, config_hash
from .config import ConfigError, RunConfig, load_config, with_vocab
from .data import DataError, load_data, split_history, tokenize
from .decoding import beam_search, greedy_decode
from .encoder import level_lengths
from .metrics import bleu, perplexity
from .models import ABLATION_VARIANTS, VARIANT_LABELS, build_model, describe_structure, normalize_variant, structure_diff
from .tensor import make_rng
from .train import NumericalError, evaluate, load_model, train_loop

RUNS_ENV = "UNET_TRANSFORMER_RUNS"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
RUN_ARTIFACTS = ("metrics.csv", "metrics.jsonl", "config.toml", "run.json", "best.ckpt", "last.ckpt")


def runs_root() -> Path:
    return Path(os.environ.get(RUNS_ENV, "runs"))


def resolve_config(args) -> RunConfig:
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "variant", None):
        overrides.append(f"model.variant={json.dumps(normalize_variant(args.variant))}")
    if getattr(args, "data", None):
        overrides.append(f"data.spec={json.dumps(args.data)}")
    if getattr(args, "seed", None) is not None:
        overrides.append(f"train.seed={args.seed}")
    return load_config(args.config, overrides)


def prepare(cfg: RunConfig):
    data = load_data(cfg.data.spec, cfg.model.mode, cfg.train.seed, cfg.data.vocab_cap)
    model_cfg = with_vocab(cfg.model, len(data.src_vocab), len(data.tgt_vocab))
    model = build_model(model_cfg, make_rng([cfg.train.seed, 0]))
    return data, model


def run_training(cfg: RunConfig, out: Path, log=print, resume: Path | None = None):
    data, model = prepare(cfg)
    if resume is None and out.exists():
        for name in RUN_ARTIFACTS:
            target = out / name
            if target.is_dir():
                shutil.rmtree(target)
            elif target.exists():
                target.unlink()
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(cfg.to_toml(), encoding="utf-8")

    def report(row):
        if row["split"] == "valid":
            log(f"step {row['step']:>6}  valid ce {row['ce']:.4f}  ppl {row['ppl']:.3f}")

    result = train_loop(model, data, cfg.train, out, resume_from=resume, on_eval=report)
    best, _, _ = load_model(out / "best.ckpt")
    test_ce = evaluate(best, data.test, cfg.train.eval_batch_size)
    summary = {
        "variant": cfg.model.variant,
        "seed": cfg.train.seed,
        "data_spec": cfg.data.spec,
        "config_hash": config_hash(cfg.to_dict()),
        "steps": result.steps,
        "best_valid_ce": result.best_valid,
        "best_step": result.best_step,
        "stopped_early": result.stopped_early,
        "test_ce": test_ce,
        "test_ppl": perplexity(test_ce),
        "batch_digest": result.batch_digest,
        "parameters": model.num_parameters(),
    }
    (out / "run.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return summary, model


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out) if args.out else runs_root() / f"{cfg.model.variant}-seed{cfg.train.seed}"
    summary, _ = run_training(cfg, out, resume=Path(args.resume) if args.resume else None)
    print(f"best valid ce {summary['best_valid_ce']:.4f} at step {summary['best_step']}; "
          f"test ppl {summary['test_ppl']:.3f}; run directory {out}")
    return EXIT_OK


def format_table(rows: list[dict]) -> str:
    head = f"{'variant':<22} {'best val CE':>11} {'test PPL':>9}  batches"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r['label']:<22} {r['best_valid_ce']:>11.4f} {r['test_ppl']:>9.3f}  {r['batch_digest'][:12]}")
    return "\n".join(lines)


def run_ablation(cfg: RunConfig, out: Path, log=print) -> list[dict]:
    rows, structures = [], []
    for variant in ABLATION_VARIANTS:
        log(f"== {VARIANT_LABELS[variant]}")
        run_cfg = replace(cfg, model=replace(cfg.model, variant=variant))
        summary, model = run_training(run_cfg, out / variant, log)
        rows.append(dict(summary, label=VARIANT_LABELS[variant]))
        structures.append(describe_structure(model))
    for (a, sa), (b, sb) in zip(zip(rows, structures), zip(rows[1:], structures[1:])):
        rows_diff = ", ".join(sorted(structure_diff(sa, sb)))
        log(f"{a['label']} -> {b['label']}: {rows_diff}")
    return rows


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out) if args.out else runs_root() / f"ablation-seed{cfg.train.seed}"
    rows = run_ablation(cfg, out)
    table = format_table(rows)
    print(table)
    (out / "ablation.txt").write_text(table + "\n", encoding="utf-8")
    if len({r["batch_digest"] for r in rows}) != 1:
        print("warning: variants consumed different batch sequences", file=sys.stderr)
    unet, transformer = rows[0]["best_valid_ce"], rows[-1]["best_valid_ce"]
    print(f"UNET best CE <= TRANSFORMER best CE: {'yes' if unet <= transformer else 'no'} "
          f"({unet:.4f} vs {transformer:.4f})")
    return EXIT_OK


def _load(path: str):
    try:
        return load_model(path)
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"cannot load checkpoint {path}: {exc}") from exc


def cmd_eval(args) -> int:
    model, manifest, _ = _load(args.checkpoint)
    spec = args.data or manifest.get("data_spec")
    if not spec:
        raise DataError("checkpoint records no data spec; pass --data")
    data = load_data(spec, model.config.mode, manifest["train_config"]["seed"], args.vocab_cap)
    examples = getattr(data, args.split)
    ce = evaluate(model, examples, args.batch_size)
    print(f"{args.split} ce {ce:.4f} ppl {perplexity(ce):.4f}")
    if args.bleu is not None:
        hyps = [
            data.tgt_vocab.decode(_decode_one(model, e.src, e.segments, args.beam))
            for e in examples
        ]
        if args.bleu == "-":
            refs = [data.tgt_vocab.decode(e.tgt) for e in examples]
        else:
            refs = [tokenize(line) for line in Path(args.bleu).read_text(encoding="utf-8").splitlines()]
        if len(refs) != len(hyps):
            raise DataError(f"{len(refs)} references for {len(hyps)} {args.split} examples")
        print(f"{args.split} bleu {bleu(hyps, refs):.2f}")
    return EXIT_OK


def _decode_one(model, src, segments, beam: int) -> list[int]:
    if beam and beam > 1:
        return beam_search(model, src, beam, segments)
    return greedy_decode(model, src, segments)


def cmd_decode(args) -> int:
    from .data import make_dialogue_example

    model, _, vocabs = _load(args.checkpoint)
    if vocabs is None:
        raise CheckpointError("checkpoint has no vocabulary files")
    src_vocab, tgt_vocab = vocabs
    for line in sys.stdin:
        if not tokenize(line):
            print(flush=True)
            continue
        if model.config.mode == "dialogue":
            ex = make_dialogue_example(split_history(line), "", src_vocab)
            src, segments = ex.src, ex.segments
        else:
            src, segments = src_vocab.encode(tokenize(line)), None
        out = _decode_one(model, src, segments if model.config.use_segments else None, args.beam)
        print(" ".join(tgt_vocab.decode(out)), flush=True)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import SUITE, run_suite

    names = args.only or None
    unknown = set(names or []) - set(SUITE)
    if unknown:
        raise ConfigError(f"unknown gradcheck case(s): {', '.join(sorted(unknown))}")
    return EXIT_OK if run_suite(names, args.seed) else EXIT_NUMERIC


def cmd_schedule(args) -> int:
    cfg = RunConfig().model if args.config is None else load_config(args.config).model
    if args.variant:
        cfg = replace(cfg, variant=normalize_variant(args.variant))
    if args.d_base:
        cfg = replace(cfg, d_model=args.d_base)
    schedule = cfg.schedule()
    lengths = level_lengths(schedule, args.n)
    print(f"{'layer':<6}{'role':<6}{'length':>7}{'len_div':>8}{'d_in':>6}{'d':>6}{'d_inner':>8}{'d_key':>6}{'heads':>6}")
    print(f"{'emb':<6}{'':<6}{lengths[0]:>7}{1:>8}{'':>6}{cfg.d_model:>6}")
    for spec, n in zip(schedule, lengths[1:]):
        print(f"{spec.index:<6}{spec.role:<6}{n:>7}{spec.len_div:>8}{spec.d_in:>6}{spec.d_out:>6}"
              f"{spec.d_inner:>8}{spec.d_key:>6}{cfg.heads:>6}")
    print("lengths " + "/".join(str(n) for n in lengths))
    print("widths " + ",".join(str(s.d_out) for s in schedule))
    return EXIT_OK


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = Parser(prog="unet-transformer", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    def run_options(sp, variant=True):
        sp.add_argument("--config", help="TOML config with [model], [train], [data] sections")
        if variant:
            sp.add_argument("--variant", help="unet | unet_no_downup | unet_no_downup_no_conv | transformer | s2sa")
        sp.add_argument("--data", help="synth:<kind>[:len=..][:n=..][:vocab=..] or file:<src>[,<tgt>]")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help=f"run directory (default under ${RUNS_ENV} or ./runs)")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value")

    sp = sub.add_parser("train", help="train one model")
    run_options(sp)
    sp.add_argument("--resume", help="checkpoint directory to resume from (normally <out>/last.ckpt)")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("ablate", help="train the four ablation variants on identical batches")
    run_options(sp, variant=False)
    sp.set_defaults(fn=cmd_ablate)

    sp = sub.add_parser("eval", help="cross-entropy / perplexity (and BLEU) of a checkpoint")
    sp.add_argument("checkpoint")
    sp.add_argument("--data", help="data spec (default: the one recorded in the checkpoint)")
    sp.add_argument("--split", choices=("train", "valid", "test"), default="test")
    sp.add_argument("--batch-size", type=int, default=64)
    sp.add_argument("--vocab-cap", type=int)
    sp.add_argument("--bleu", nargs="?", const="-", metavar="REFS",
                    help="also decode and score BLEU against REFS (default: the split's own targets)")
    sp.add_argument("--beam", type=int, default=0, help="beam size for --bleu decoding (0 or 1: greedy)")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("decode", help="decode one source per stdin line")
    sp.add_argument("checkpoint")
    sp.add_argument("--beam", type=int, default=0, help="beam size (0 or 1: greedy)")
    sp.set_defaults(fn=cmd_decode)

    sp = sub.add_parser("gradcheck", help="64-bit central-difference gradient suite")
    sp.add_argument("--only", nargs="*", help="subset of case names")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_gradcheck)

    sp = sub.add_parser("schedule", help="per-layer lengths and widths for a sequence length")
    sp.add_argument("--n", type=int, default=150)
    sp.add_argument("--config")
    sp.add_argument("--variant")
    sp.add_argument("--d-base", type=int)
    sp.set_defaults(fn=cmd_schedule)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, CheckpointError) as exc:
        code = EXIT_DATA if isinstance(exc, CheckpointError) else EXIT_USAGE
        print(f"error: {exc}", file=sys.stderr)
        return code
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
