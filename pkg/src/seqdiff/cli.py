"""Command-line interface: train, eval, sample, bench, schedule-trace,
and make-data.

Errors exit with stable codes: 2 for configuration or contract problems,
3 for data and checkpoint problems, 4 for numeric breakdowns.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .bench import speed_bench
from .checkpoint import load_checkpoint
from .config import RunConfig, load_run_config, make_run_config
from .data import (
    EOS_ID,
    MASK_ID,
    PAD_ID,
    SPECIAL_NAMES,
    Pair,
    SynthSpec,
    Vocab,
    encode_source,
    load_jsonl,
    make_batch,
    synth_task_generate,
    write_jsonl,
)
from .diffusion import mask_prob
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    NumericError,
    SeqDiffError,
    ShapeError,
)
from .metrics import schedule_entropy, score_pairs
from .model import ModelConfig, Seq2SeqModel
from .sampler import sample_batch, sample_sequence
from .train import restore_into, run_training

EXIT_CODES = {
    ConfigError: 2,
    ContractError: 2,
    ShapeError: 2,
    DataError: 3,
    CheckpointError: 3,
    NumericError: 4,
}


def _overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _load_model(ckpt_path: str) -> tuple[Seq2SeqModel, Vocab, RunConfig]:
    tensors, meta = load_checkpoint(ckpt_path)
    try:
        cfg = make_run_config({}, base=RunConfig(**meta["run_config"]))
        vocab = Vocab(meta["vocab"])
    except (KeyError, TypeError) as err:
        raise CheckpointError(f"{ckpt_path}: incompatible metadata ({err})") from err
    model = Seq2SeqModel(cfg.model_config(len(vocab)), np.random.default_rng(cfg.seed))
    restore_into(model, None, tensors)
    return model, vocab, cfg


def cmd_train(args) -> int:
    over = _overrides(args.set)
    for f in fields(RunConfig):  # same-named flags win over --set and file
        value = getattr(args, f"cfg_{f.name}")
        if value is not None:
            over[f.name] = value
    if args.config:
        cfg = load_run_config(args.config, over)
    else:
        cfg = make_run_config(over)
    run_training(cfg)
    print(f"checkpoint written to {cfg.checkpoint_path}")
    return 0


def _pairs_for_eval(path) -> list[Pair]:
    # an empty dataset is a caller mistake (exit 2), unlike unreadable data
    try:
        return load_jsonl(path)
    except DataError as err:
        if "empty" in str(err):
            raise ContractError(str(err)) from err
        raise


def cmd_eval(args) -> int:
    model, vocab, cfg = _load_model(args.checkpoint)
    pairs = _pairs_for_eval(args.data)
    if args.samples:
        pairs = pairs[: args.samples]
    steps = args.steps or cfg.sample_steps
    batch = make_batch(vocab, pairs, cfg.max_source_len, cfg.max_target_len)
    lengths = None if args.free_length else batch.tgt_len
    out = sample_batch(model, batch.src, batch.src_pad, steps,
                       lengths=lengths, seed=cfg.seed)
    hyps = [vocab.decode(row) for row in out]
    report = score_pairs(hyps, [p.target for p in pairs],
                         keep_examples=not args.no_examples)
    if cfg.schedule == "semantic":
        rows = []
        for i in range(batch.tgt.shape[0]):
            sal, _ = model.target_semantics(batch.tgt[i:i + 1], batch.tgt_pad[i:i + 1])
            rows.append(sal[0][~batch.tgt_pad[i]])
        report.entropy = schedule_entropy(rows, cfg.diffusion_steps)
    report.config = {"backbone": cfg.backbone, "schedule": cfg.schedule,
                     "sample_steps": steps, "checkpoint": args.checkpoint}
    text = report.to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def _render_row(vocab: Vocab, ids, masked=None) -> str:
    """Canvas row as text: surface tokens, [M] for masks, no padding."""
    words = []
    for j, tid in enumerate(ids):
        tid = int(tid)
        if tid == PAD_ID:
            continue
        if (masked is not None and masked[j]) or tid == MASK_ID:
            words.append("[M]")
        elif tid in SPECIAL_NAMES:
            words.append(SPECIAL_NAMES[tid])
        else:
            words.append(vocab.decode([tid]))
    return " ".join(words)


def cmd_sample(args) -> int:
    model, vocab, cfg = _load_model(args.checkpoint)
    steps = args.steps or cfg.sample_steps
    if args.source is not None:
        sources = [args.source]
    elif args.input:
        if not Path(args.input).exists():
            raise DataError(f"input file not found: {args.input}")
        with open(args.input, encoding="utf-8") as fh:
            sources = [line.strip() for line in fh if line.strip()]
    else:
        sources = [line.strip() for line in sys.stdin if line.strip()]
    if not sources:
        raise ContractError("no input sources given (use --source, --input, or stdin)")
    for text in sources:
        src = encode_source(vocab, text, cfg.max_source_len)
        length = args.length + 1 if args.length else None  # end marker slot
        trace: list | None = [] if args.trace else None
        out = sample_sequence(model, src, steps, length=length, seed=args.seed,
                              temperature=args.temperature, trace=trace)
        if trace is not None:
            for snap in trace:
                row = _render_row(vocab, snap["canvas"][0])
                print(f"# t={snap['t']:>3} | {row}")
        print(vocab.decode(out))
    return 0


def cmd_schedule_trace(args) -> int:
    """Render the forward masking of dataset targets over a time grid.

    One shared uniform draw per position couples the rows, so each
    example reads as a single trajectory: positions stay masked once
    masked, and high-salience positions survive the longest.
    """
    model, vocab, cfg = _load_model(args.checkpoint)
    pairs = _pairs_for_eval(args.data)
    if args.samples:
        pairs = pairs[: args.samples]
    big_t = cfg.diffusion_steps
    if args.t_grid:
        t_grid = [int(x) for x in args.t_grid.split(",")]
    else:
        t_grid = sorted({0, big_t // 4, big_t // 2, (3 * big_t) // 4, big_t})
    bad = [t for t in t_grid if not 0 <= t <= big_t]
    if bad:
        raise ContractError(f"trace times outside [0, {big_t}]: {bad}")
    uniform = cfg.schedule != "semantic"
    if uniform:
        print("# uniform schedule: no salience scores, tracing uniform masking")
    batch = make_batch(vocab, pairs, cfg.max_source_len, cfg.max_target_len)
    salience = None
    if not uniform:
        salience, _ = model.target_semantics(batch.tgt, batch.tgt_pad)
    rng = np.random.default_rng(args.seed)
    for i, pair in enumerate(pairs):
        m = int(batch.tgt_len[i]) - 1  # drop the end-marker slot
        ids = batch.tgt[i, :m]
        print(f"# example {i}: {pair.source}")
        if salience is not None:
            row = " ".join(f"{v:.2f}" for v in salience[i, :m])
            print(f"salience: {row}")
        u = rng.random(m)
        for t in t_grid:
            p = mask_prob(t, big_t, salience[i, :m]) if salience is not None \
                else np.full(m, t / big_t)
            print(f"t={t:>3} | {_render_row(vocab, ids, masked=u < p)}")
    return 0


def cmd_bench(args) -> int:
    lengths = [int(x) for x in args.lengths.split(",")]
    steps_list = [int(x) for x in args.steps.split(",")]
    models = {}
    for backbone in ("transformer", "mamba"):
        cfg = ModelConfig(
            vocab_size=64, backbone=backbone, dim=args.dim, n_heads=4,
            enc_layers=args.layers, dec_layers=args.layers,
            state_size=16, max_source_len=32, max_target_len=max(lengths),
            big_t=max(steps_list, default=10),
        )
        models[backbone] = Seq2SeqModel(cfg, np.random.default_rng(0))
    report = speed_bench(models, lengths, steps_list, runs=args.runs)
    csv = report.to_csv()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(csv)
    print(csv, end="")
    return 0


def cmd_make_data(args) -> int:
    spec = SynthSpec(
        n_records=tuple(int(x) for x in args.records.split(",")),
        n_salient=tuple(int(x) for x in args.salient.split(",")),
        n_keys=args.keys,
        n_values=args.values,
        kind=args.task,
    )
    pairs = synth_task_generate(args.n, args.seed, spec)
    write_jsonl(args.out, pairs)
    print(f"wrote {len(pairs)} pairs to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqdiff",
        description="Absorbing-diffusion sequence-to-sequence toolkit",
    )
    parser.add_argument("--version", action="version", version=f"seqdiff {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a jsonl dataset")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a configuration field (repeatable)")
    for f in fields(RunConfig):
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}",
                       metavar="V", help=f"override config field {f.name}")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score generations against references")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="jsonl with source/target pairs")
    p.add_argument("--samples", type=int, default=0, help="limit examples (0 = all)")
    p.add_argument("--steps", type=int, default=0, help="denoising steps (0 = from config)")
    p.add_argument("--free-length", action="store_true",
                   help="use the length head instead of reference lengths")
    p.add_argument("--no-examples", action="store_true",
                   help="omit per-example rows from the report")
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sample", help="generate, one output line per source")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source", help="a single source string")
    p.add_argument("--input", help="file of source lines (default: stdin)")
    p.add_argument("--length", type=int, default=0, help="target token count (0 = predict)")
    p.add_argument("--steps", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temperature", type=float, default=0.0,
                   help="sample committed tokens instead of argmax (0 = greedy)")
    p.add_argument("--trace", action="store_true",
                   help="print the canvas after every denoising step")
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("schedule-trace",
                       help="show forward masking of dataset targets over time")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="jsonl with source/target pairs")
    p.add_argument("--samples", type=int, default=4, help="examples to trace (0 = all)")
    p.add_argument("--t-grid", help="comma-separated times (default: quartiles of T)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_schedule_trace)

    p = sub.add_parser("bench", help="time generation across lengths and backbones")
    p.add_argument("--lengths", default="256,512,1024,2048")
    p.add_argument("--steps", default="2,10")
    p.add_argument("--dim", type=int, default=48)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--out", help="write CSV here as well as stdout")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("make-data", help="write a synthetic jsonl dataset")
    p.add_argument("--task", choices=("extract", "copy"), default="extract")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--records", default="4,8")
    p.add_argument("--salient", default="1,4")
    p.add_argument("--keys", type=int, default=30)
    p.add_argument("--values", type=int, default=60)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_make_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except SeqDiffError as err:
        print(f"error: {err}", file=sys.stderr)
        for kind, code in EXIT_CODES.items():
            if isinstance(err, kind):
                return code
        return 1


if __name__ == "__main__":
    sys.exit(main())
