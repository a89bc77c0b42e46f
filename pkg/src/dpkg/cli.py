"""Command-line entry point: ``dpkg <command> [options]``.

Exit codes: 0 success, 1 domain error, 2 usage error (bad flags, missing
files).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

from . import metrics
from .annotate import keyword_stats
from .checkpoint import CheckpointError, save_checkpoint
from .config import AppConfig, load_config
from .corpus import (SynthSpec, gen_synthetic, load_hotpot, load_musique, read_jsonl, read_jsonl_dicts,
                     split_corpus, write_jsonl)
from .estimator import DPKGQuestionGenerator, KeywordAnnotator
from .llm import (ChatRequest, Endpoint, LLMError, PromptSpec, build_prompt, chat_complete, prompt_hash,
                  qa_messages, qa_verify, run_concurrent)
from .model import KeywordSet, MalformedKeywords
from .training import run_gradcheck

log = logging.getLogger("dpkg")


class UsageError(Exception):
    pass


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode("utf-8")).hexdigest()[:16]


def _need_file(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"missing {what}")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def _write_meta(out: Path, meta: dict) -> None:
    """Sidecar ``<out>.meta.json`` for artifacts whose schema has no room for provenance."""
    Path(str(out) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _config(args, overrides: dict) -> AppConfig:
    try:
        return load_config(args.config, overrides)
    except FileNotFoundError as e:
        raise UsageError(str(e)) from e


# ------------------------------------------------------------------ commands

def cmd_synth(args) -> int:
    spec = SynthSpec(seed=args.seed, n_samples=args.n, pool_size=args.pool_size,
                     n_distractors=args.distractors, setting=args.setting)
    samples = gen_synthetic(spec)
    out = Path(args.out)
    write_jsonl(out, samples)
    meta = {"command": "synth", "setting": spec.setting, "spec": dataclasses.asdict(spec)}
    meta["config_hash"] = _hash(meta["spec"])
    if args.split_dir:
        d = Path(args.split_dir)
        d.mkdir(parents=True, exist_ok=True)
        n_train, n_dev = args.split
        if n_train + n_dev > len(samples):
            raise ValueError(f"split {n_train}+{n_dev} exceeds {len(samples)} samples")
        parts = {"train": samples[:n_train], "dev": samples[n_train:n_train + n_dev],
                 "test": samples[n_train + n_dev:]}
        for name, part in parts.items():
            write_jsonl(d / f"{name}.jsonl", part)
        _write_meta(d / "splits", {**meta, "sizes": {k: len(v) for k, v in parts.items()}})
    _write_meta(out, meta)
    print(f"wrote {len(samples)} samples to {out}")
    return 0


def _load_any(path: Path, fmt: str, setting: str):
    if fmt == "hotpot":
        return load_hotpot(path, setting)
    if fmt == "musique":
        return load_musique(path, setting)
    samples = read_jsonl(path)
    return [dataclasses.replace(s, setting=setting) for s in samples] if setting else samples


def cmd_annotate(args) -> int:
    src = _need_file(args.input, "input file")
    cfg = _config(args, {"setting": args.setting, "annotation.version": args.version})
    samples = _load_any(src, args.format, cfg.setting)
    ann = KeywordAnnotator(cfg.annotation.version, cfg.annotation.interrogatives, cfg.annotation.max_keyword_tokens)
    out_samples = ann.fit_transform(samples)
    out = Path(args.out)
    write_jsonl(out, out_samples)
    if args.split:
        ratios = tuple(args.split)
        parts = dict(zip(("train", "dev", "test"), split_corpus(out_samples, ratios, seed=args.seed)))
        for name, part in parts.items():
            write_jsonl(out.with_name(f"{out.stem}.{name}.jsonl"), part)
    _write_meta(out, {"command": "annotate", "setting": cfg.setting, "config_hash": cfg.hash(),
                      "annotation": cfg.to_dict()["annotation"], "source": str(src)})
    _emit(keyword_stats(out_samples))
    return 0


def cmd_stats(args) -> int:
    splits = {}
    for item in args.inputs:
        name, _, path = item.rpartition("=")
        p = _need_file(path, "input file")
        splits[name or p.stem] = read_jsonl(p)
    stats = keyword_stats(splits)
    if args.out:
        Path(args.out).write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if args.format == "table":
        print(f"{'split':<12}{'n':>6}{'q min':>7}{'q max':>7}{'q avg':>8}{'d min':>7}{'d max':>7}{'d avg':>8}")
        for name, s in stats.items():
            q, d = s["question"], s["document"]
            print(f"{name:<12}{s['n']:>6}{q['min']:>7}{q['max']:>7}{q['avg']:>8.2f}"
                  f"{d['min']:>7}{d['max']:>7}{d['avg']:>8.2f}")
    else:
        _emit(stats)
    return 0


def cmd_train(args) -> int:
    overrides = {
        "mode": args.mode, "setting": args.setting, "keyword_variant": args.keywords,
        "paths.train": args.train, "paths.dev": args.dev, "paths.checkpoint_dir": args.out_dir,
        "train.epochs": args.epochs, "train.learning_rate": args.lr, "train.batch_size": args.batch_size,
        "train.seed": args.seed, "train.warmup_steps": args.warmup_steps,
        "train.early_stop_patience": args.patience, "model.d_model": args.d_model,
    }
    if args.no_l3:
        overrides["train.beta3"] = 0.0
    if args.no_aa:
        overrides["model.use_aa"] = False
    cfg = _config(args, overrides)
    train_path = _need_file(cfg.paths.train, "training file")
    dev_path = _need_file(cfg.paths.dev, "dev file") if cfg.paths.dev else None
    out_dir = Path(cfg.paths.checkpoint_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    train = read_jsonl(train_path)
    dev = read_jsonl(dev_path) if dev_path else None
    est = DPKGQuestionGenerator(**cfg.estimator_params())
    t0 = time.time()
    est.fit(train, X_dev=dev, log_path=out_dir / "train_log.jsonl",
            on_epoch=lambda r: log.info("epoch %d total %.4f", r["epoch"], r["total"]))
    ckpt = out_dir / "model.ckpt"
    state = est.model_.train_state
    save_checkpoint(est.model_, ckpt, step=state.step,
                    best_dev=state.best_dev if state.best_dev != float("inf") else None,
                    extra={"estimator_params": est.get_params(), "app_config": cfg.to_dict(),
                           "app_config_hash": cfg.hash(), "setting": cfg.setting})
    (out_dir / "config.json").write_text(
        json.dumps({"config_hash": cfg.hash(), **cfg.to_dict()}, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    last = est.history_[-1]
    _emit({"checkpoint": str(ckpt), "epochs": len(est.history_), "step": state.step,
           "final_loss": last["total"], "seconds": round(time.time() - t0, 1),
           "mode": cfg.mode, "setting": cfg.setting, "config_hash": cfg.hash()})
    return 0


def _gen_overrides(args) -> dict:
    return {k: v for k, v in (("strategy", args.strategy), ("beam_width", args.beam_width),
                              ("max_len", args.max_len), ("length_penalty", args.length_penalty))
            if v is not None}


def cmd_generate(args) -> int:
    ckpt = _need_file(args.checkpoint, "checkpoint")
    src = _need_file(args.input, "input file")
    est = DPKGQuestionGenerator.load(ckpt)
    gen = _gen_overrides(args)
    samples = read_jsonl(src)
    if args.limit:
        samples = samples[:args.limit]
    extra = est.model_.checkpoint_meta.get("extra", {})
    setting = extra.get("setting", samples[0].setting)
    run_hash = _hash({"checkpoint_config": est.model_.checkpoint_meta.get("config_hash"),
                      "generation": dataclasses.asdict(est.generation_config(**gen)), "keywords": args.keywords})
    records = est.generate(samples, keywords=args.keywords, **gen)
    for r in records:
        r["setting"] = setting
        r["config_hash"] = run_hash
    write_jsonl(args.out, records)
    n_bad = sum("malformed_keywords" in r["flags"] for r in records)
    print(f"wrote {len(records)} generations to {args.out} ({n_bad} with malformed keywords)")
    return 0


def _parsed(rec: dict) -> KeywordSet:
    kp = rec.get("keywords_parsed") or {}
    return KeywordSet(kp.get("question", []), kp.get("document", []))


def cmd_eval(args) -> int:
    preds = read_jsonl_dicts(_need_file(args.pred, "prediction file"))
    refs = {s.id: s for s in read_jsonl(_need_file(args.ref, "reference file"))}
    missing = [p["id"] for p in preds if p["id"] not in refs]
    if missing:
        raise ValueError(f"{len(missing)} prediction id(s) not in references, e.g. {missing[0]!r}")
    if not preds:
        raise ValueError("no predictions")
    hyps = [p["question"] for p in preds]
    gold = [refs[p["id"]].question for p in preds]
    have_kw = all(refs[p["id"]].keywords is not None for p in preds)
    pk = [_parsed(p) for p in preds] if have_kw else None
    gk = [refs[p["id"]].keywords for p in preds] if have_kw else None
    rep = metrics.report(hyps, gold, pk, gk)
    meta = {k: preds[0].get(k) for k in ("mode", "setting", "config_hash", "keywords_source")}
    out = {**rep.scaled(), **meta, "malformed_keywords": sum("malformed_keywords" in p.get("flags", []) for p in preds)}
    if args.out:
        Path(args.out).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if args.per_sample:
        rows = []
        for i, (p, h, g) in enumerate(zip(preds, hyps, gold)):
            rows.append({"id": p["id"], "hypothesis": h, "reference": g,
                         "bleu4": metrics.bleu4([h], [g]), "rouge_l": metrics.rouge_l(h, g),
                         "meteor": metrics.meteor_exact(h, g),
                         "token_f1": metrics.token_f1(pk[i], gk[i]) if have_kw else None,
                         "config_hash": meta["config_hash"]})
        write_jsonl(args.per_sample, rows)
    _emit(out)
    return 0


def cmd_llm_qa(args) -> int:
    src = _need_file(args.input, "input file")
    overrides = {k: v for k, v in (("url", args.endpoint), ("model", args.model)) if v}
    try:
        endpoint = Endpoint.from_env(max_retries=args.max_retries, **overrides)
    except ValueError as e:
        raise UsageError(str(e)) from e
    samples = read_jsonl(src)
    run_meta = {"task": args.task, "model": endpoint.model, "guidance": args.guidance, "shot": args.shot}
    cfg_hash = _hash(run_meta)

    if args.task == "generate":
        exemplar = None
        if args.shot == "one":
            ex = samples[0]
            exemplar = (ex.document_text(), ex.answer, ex.keywords, ex.question)
            samples = samples[1:]
        spec = PromptSpec(args.shot, args.guidance, exemplar)

        def work(s):
            msgs = build_prompt(s, spec)
            reply = chat_complete(ChatRequest(msgs, timeout=args.timeout), endpoint)
            return {"id": s.id, "prompt_hash": prompt_hash(msgs), "question": reply.text, "config_hash": cfg_hash}
        items = samples
    else:
        questions = {}
        if args.questions:
            for r in read_jsonl_dicts(_need_file(args.questions, "questions file")):
                questions[r["id"]] = r["question"]
        items = [s for s in samples if not questions or s.id in questions]

        def work(s):
            q = questions.get(s.id, s.question)
            doc = s.document_text()
            em, f1 = qa_verify(q, doc, s.answer, endpoint, timeout=args.timeout)
            return {"id": s.id, "prompt_hash": prompt_hash(qa_messages(q, doc)), "question": q,
                    "em": em, "f1": f1, "config_hash": cfg_hash}

    results = run_concurrent(items, work, args.max_in_flight)
    write_jsonl(args.out, results)
    summary = {"n": len(results), **run_meta, "config_hash": cfg_hash}
    if args.task == "verify" and results:
        summary["em"] = 100 * sum(r["em"] for r in results) / len(results)
        summary["f1"] = 100 * sum(r["f1"] for r in results) / len(results)
    _emit(summary)
    return 0


def cmd_gradcheck(args) -> int:
    t0 = time.time()
    err = run_gradcheck(args.dim, args.layers, args.vocab, args.seed, args.init_std, args.eps)
    ok = err < args.tol
    print(f"max relative error: {err:.3e} ({'ok' if ok else 'FAILED'}, tol {args.tol:g}, {time.time() - t0:.1f}s)")
    return 0 if ok else 1


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpkg", description="Keyword-guided multi-hop question generation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    s = sub.add_parser("synth", help="generate a synthetic annotated corpus")
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--n", type=int, default=80)
    s.add_argument("--pool-size", type=int, default=16)
    s.add_argument("--distractors", type=int, default=1)
    s.add_argument("--setting", choices=["SF", "Full"], default="SF")
    s.add_argument("--out", required=True)
    s.add_argument("--split-dir", help="also write train/dev/test.jsonl here")
    s.add_argument("--split", type=int, nargs=2, default=(64, 8), metavar=("N_TRAIN", "N_DEV"))
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("annotate", help="add question and document keywords to a corpus")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=["jsonl", "hotpot", "musique"], default="jsonl")
    s.add_argument("--setting", choices=["SF", "Full"])
    s.add_argument("--version", choices=["v1", "v2"])
    s.add_argument("--split", type=float, nargs=3, metavar=("TRAIN", "DEV", "TEST"),
                   help="also write seeded train/dev/test splits")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config")
    s.set_defaults(func=cmd_annotate)

    s = sub.add_parser("stats", help="keyword count statistics per split")
    s.add_argument("inputs", nargs="+", metavar="[NAME=]PATH")
    s.add_argument("--format", choices=["json", "table"], default="json")
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--config")
    s.add_argument("--train")
    s.add_argument("--dev")
    s.add_argument("--out-dir")
    s.add_argument("--mode", choices=["hard", "soft"])
    s.add_argument("--setting", choices=["SF", "Full"])
    s.add_argument("--keywords", choices=["both", "question_only", "document_only"])
    s.add_argument("--no-l3", action="store_true", help="drop the bridge loss")
    s.add_argument("--no-aa", action="store_true", help="drop answer-aware attention")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--warmup-steps", type=int)
    s.add_argument("--patience", type=int)
    s.add_argument("--d-model", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="generate keywords and questions")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--keywords", choices=["generated", "gold"], default="generated")
    s.add_argument("--strategy", choices=["greedy", "beam"])
    s.add_argument("--beam-width", type=int)
    s.add_argument("--max-len", type=int)
    s.add_argument("--length-penalty", type=float)
    s.add_argument("--limit", type=int)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("eval", help="score generations against references")
    s.add_argument("--pred", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--out")
    s.add_argument("--per-sample")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("llm-qa", help="prompt a chat endpoint to generate or answer questions")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--task", choices=["generate", "verify"], default="verify")
    s.add_argument("--questions", help="generation JSONL whose questions are verified")
    s.add_argument("--guidance", choices=["none", "dual_keywords"], default="none")
    s.add_argument("--shot", choices=["zero", "one"], default="zero")
    s.add_argument("--endpoint", help="overrides LLM_ENDPOINT")
    s.add_argument("--model", help="overrides LLM_MODEL")
    s.add_argument("--timeout", type=float, default=30.0)
    s.add_argument("--max-retries", type=int, default=3)
    s.add_argument("--max-in-flight", type=int, default=4)
    s.set_defaults(func=cmd_llm_qa)

    s = sub.add_parser("gradcheck", help="finite-difference gradient check on a tiny model")
    s.add_argument("--dim", type=int, default=8)
    s.add_argument("--layers", type=int, default=1)
    s.add_argument("--vocab", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--init-std", type=float, default=0.5)
    s.add_argument("--eps", type=float, default=1e-5)
    s.add_argument("--tol", type=float, default=1e-3)
    s.set_defaults(func=cmd_gradcheck)
    return p


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"dpkg {args.command}: {e}", file=sys.stderr)
        return 2
    except (ValueError, CheckpointError, LLMError, MalformedKeywords, KeyError, OSError) as e:
        print(f"dpkg {args.command}: error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
