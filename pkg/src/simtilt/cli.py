"""Operator surface: train, generate, optimize, bench, serve.

Exit codes are a stable scripting contract: 0 success, 2 usage or input
error, 3 runtime/protocol failure. Every run writes a manifest sufficient
to reproduce it. The default model path can be set through the
SIMTILT_MODEL environment variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import hashlib
import json
import os
import statistics
import sys
from dataclasses import dataclass

import numpy as np

from . import adapters, data, ga, oracles, policy
from .fingerprint import morgan_fingerprint, tanimoto
from .guidance import GuidanceConfig, GuidedSampler, GuideSet
from .smiles import SmilesError, parse, read_corpus, write_canonical

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3

MODEL_ENV = "SIMTILT_MODEL"


@dataclass
class RunManifest:
    command: str
    seed: int
    model_hash: str
    oracle: str
    config: dict
    config_hash: str
    started: str
    finished: str
    outputs: list
    target_seeded: bool = False

    def write(self, path) -> None:
        tmp = str(path) + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _config_hash(payload: dict) -> str:
    text = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def _guidance_from_args(args) -> GuidanceConfig:
    rff = None
    if args.rff_dim:
        rff = (args.rff_dim, args.rff_temp, args.rff_seed)
    return GuidanceConfig(alpha=args.alpha, tau=args.tau, rff=rff,
                          standardize=not args.no_standardize,
                          top_k=args.top_k, max_len=args.max_len)


def _add_guidance_args(sub) -> None:
    sub.add_argument("--alpha", type=float, default=0.4)
    sub.add_argument("--tau", type=float, default=0.25)
    sub.add_argument("--rff-dim", type=int, default=0,
                     help="random feature count; 0 disables the kernel map")
    sub.add_argument("--rff-temp", type=float, default=0.008)
    sub.add_argument("--rff-seed", type=int, default=0)
    sub.add_argument("--no-standardize", action="store_true")
    sub.add_argument("--top-k", type=int, default=None)
    sub.add_argument("--max-len", type=int, default=100)


def _model_path(args) -> str:
    path = getattr(args, "model", None) or os.environ.get(MODEL_ENV)
    if not path:
        raise ValueError(f"no model given (use --model or ${MODEL_ENV})")
    if not os.path.exists(path):
        raise FileNotFoundError(f"model file not found: {path}")
    return path


def cmd_train(args) -> int:
    if args.order < 1:
        raise ValueError("--order must be at least 1")
    corpus = read_corpus(args.corpus)
    model = policy.train_ngram(corpus, order=args.order,
                               smoothing=args.smoothing,
                               embed_dim=args.embed_dim,
                               embed_seed=args.embed_seed)
    policy.save_model(model, args.out)
    print(f"trained on {len(corpus)} sequences; vocab size {len(model.vocab)}")
    print(f"model written to {args.out}")
    return EXIT_OK


def _similarity_report(guide_fp, generations: list[str], ks: list[int]):
    sims = []
    for text in generations:
        try:
            sims.append(tanimoto(morgan_fingerprint(parse(text)), guide_fp))
        except SmilesError:
            continue
    sims.sort(reverse=True)
    report = []
    for k in ks:
        top = sims[:k]
        report.append((k, sum(top) / len(top) if top else 0.0))
    return report


def cmd_generate(args) -> int:
    model_path = _model_path(args)
    model = policy.load_model(model_path)
    guides = read_corpus(args.guides)
    if not guides:
        raise ValueError(f"guides file {args.guides} is empty")
    gcfg = _guidance_from_args(args)
    ks = []
    k = 1
    while k <= args.num:
        ks.append(k)
        k *= 10

    out_dir = args.out
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    gen_lines = []
    report_lines = ["guide_index,guide,topk,mean_tanimoto"]
    started = _now()
    rng = np.random.default_rng(args.seed)
    for gi, guide in enumerate(guides):
        canon = write_canonical(parse(guide))
        guide_fp = morgan_fingerprint(parse(canon))
        sampler = GuidedSampler(model, GuideSet.from_smiles([canon], model.vocab),
                                gcfg)
        outputs = []
        for _ in range(args.num):
            result = sampler.generate(rng)
            outputs.append(result.smiles)
            gen_lines.append(f"{gi}\t{result.smiles}")
        for k, mean_sim in _similarity_report(guide_fp, outputs, ks):
            report_lines.append(f"{gi},{canon},{k},{mean_sim!r}")

    gen_text = "\n".join(gen_lines) + "\n"
    report_text = "\n".join(report_lines) + "\n"
    if out_dir:
        gen_path = os.path.join(out_dir, "generations.tsv")
        report_path = os.path.join(out_dir, "report.csv")
        with open(gen_path, "w", encoding="utf-8") as fh:
            fh.write(gen_text)
        with open(report_path, "w", encoding="utf-8") as fh:
            fh.write(report_text)
        config = {"guidance": dataclasses.asdict(gcfg), "num": args.num}
        RunManifest(
            command="generate", seed=args.seed, model_hash=_sha256_file(model_path),
            oracle="", config=config, config_hash=_config_hash(config),
            started=started, finished=_now(),
            outputs=[gen_path, report_path],
        ).write(os.path.join(out_dir, "manifest.json"))
    else:
        sys.stdout.write(gen_text)
        sys.stdout.write(report_text)
    print(f"generated {args.num} molecules for {len(guides)} guide(s)",
          file=sys.stderr)
    return EXIT_OK


def cmd_optimize(args) -> int:
    model_path = _model_path(args)
    model = policy.load_model(model_path)
    corpus = read_corpus(args.corpus) if args.corpus else data.load_corpus()
    oracle, hints = oracles.load_oracle(args.oracle)
    cfg = ga.load_ga_config(args.config) if args.config else ga.GAConfig()
    if args.budget:
        cfg = dataclasses.replace(cfg, budget=args.budget)
    if args.guides:
        cfg = dataclasses.replace(cfg, num_guides=args.guides)
    if args.diversity is not None:
        cfg = dataclasses.replace(cfg, diversity_guides=args.diversity)
    if args.crossover:
        cfg = dataclasses.replace(cfg,
                                  crossover_enabled=args.crossover == "on")
    gcfg = _guidance_from_args(args)
    seeds = hints if args.target_seeded else None

    os.makedirs(args.out, exist_ok=True)
    records_path = os.path.join(args.out, "records.csv")
    topk_path = os.path.join(args.out, "topk.json")
    manifest_path = os.path.join(args.out, "manifest.json")
    config = {"ga": dataclasses.asdict(cfg), "guidance": dataclasses.asdict(gcfg)}
    started = _now()
    collected: list[ga.RunRecord] = []

    def manifest(outputs) -> RunManifest:
        return RunManifest(
            command="optimize", seed=args.seed,
            model_hash=_sha256_file(model_path), oracle=oracle.name,
            config=config, config_hash=_config_hash(config),
            started=started, finished=_now(), outputs=outputs,
            target_seeded=bool(args.target_seeded))

    try:
        result = ga.run(model, corpus, oracle, cfg, gcfg,
                        np.random.default_rng(args.seed),
                        seed_molecules=seeds,
                        record_sink=collected.append)
    except adapters.ProtocolError as exc:
        # Flush budget state gathered so far before reporting the failure.
        ga.write_records_csv(collected, records_path)
        manifest([records_path]).write(manifest_path)
        print(f"oracle protocol failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    ga.write_records_csv(result.records, records_path)
    ga.write_topk_json(result.population, cfg.report_k, topk_path)
    manifest([records_path, topk_path]).write(manifest_path)
    auc = ga.auc_topk(result.records, cfg.budget)
    print(f"oracle calls: {result.oracle_calls}  generations: "
          f"{result.generations}  top-1: {result.population[0].score!r}")
    print(f"AUC top-{cfg.report_k}: {auc!r}")
    return EXIT_OK


def cmd_bench(args) -> int:
    runs = []
    for run_dir in args.run_dirs:
        manifest_path = os.path.join(run_dir, "manifest.json")
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        records = ga.read_records_csv(os.path.join(run_dir, "records.csv"))
        budget = manifest["config"]["ga"]["budget"]
        runs.append({
            "dir": run_dir,
            "task": manifest["oracle"],
            "config_hash": manifest["config_hash"],
            "seed": manifest["seed"],
            "budget": budget,
            "records": records,
            "auc": ga.auc_topk(records, budget),
        })

    groups: dict[tuple[str, str], list[dict]] = {}
    for run in runs:
        groups.setdefault((run["task"], run["config_hash"]), []).append(run)
    for (task, chash), members in sorted(groups.items()):
        budgets = {m["budget"] for m in members}
        if len(budgets) > 1:
            raise ValueError(
                f"inconsistent budgets {sorted(budgets)} for task {task!r} "
                f"config {chash}")

    rows = []
    for (task, chash), members in sorted(groups.items()):
        aucs = [m["auc"] for m in members]
        mean = statistics.fmean(aucs)
        sd = statistics.pstdev(aucs) if len(aucs) > 1 else 0.0
        rows.append({"task": task, "config": chash, "n_runs": len(aucs),
                     "mean_auc": mean, "sd_auc": sd})

    # Rank configs within each task by mean AUC (1 = best), then average.
    tasks = sorted({r["task"] for r in rows})
    configs = sorted({r["config"] for r in rows})
    rank_sum = {c: 0.0 for c in configs}
    rank_n = {c: 0 for c in configs}
    score_sum = {c: 0.0 for c in configs}
    for task in tasks:
        here = sorted((r for r in rows if r["task"] == task),
                      key=lambda r: -r["mean_auc"])
        for rank, r in enumerate(here, start=1):
            rank_sum[r["config"]] += rank
            rank_n[r["config"]] += 1
            score_sum[r["config"]] += r["mean_auc"]

    os.makedirs(args.out, exist_ok=True)
    agg_path = os.path.join(args.out, "aggregate.csv")
    with open(agg_path, "w", encoding="utf-8") as fh:
        fh.write("task,config,n_runs,mean_auc,sd_auc\n")
        for r in rows:
            fh.write(f"{r['task']},{r['config']},{r['n_runs']},"
                     f"{r['mean_auc']!r},{r['sd_auc']!r}\n")
    summary_path = os.path.join(args.out, "summary.csv")
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write("config,avg_rank,avg_score,n_tasks\n")
        for c in configs:
            avg_rank = rank_sum[c] / max(rank_n[c], 1)
            avg_score = score_sum[c] / max(rank_n[c], 1)
            fh.write(f"{c},{avg_rank!r},{avg_score!r},{rank_n[c]}\n")

    lines = [f"{'task':<28} {'config':<14} {'n':>3} {'mean AUC':>10} {'sd':>8}"]
    for r in rows:
        lines.append(f"{r['task']:<28} {r['config']:<14} {r['n_runs']:>3} "
                     f"{r['mean_auc']:>10.4f} {r['sd_auc']:>8.4f}")
    lines.append("")
    lines.append(f"{'config':<14} {'avg rank':>9} {'avg score':>10}")
    for c in configs:
        lines.append(f"{c:<14} {rank_sum[c] / max(rank_n[c], 1):>9.2f} "
                     f"{score_sum[c] / max(rank_n[c], 1):>10.4f}")
    text = "\n".join(lines) + "\n"
    with open(os.path.join(args.out, "aggregate.txt"), "w",
              encoding="utf-8") as fh:
        fh.write(text)
    print(text, end="")

    if args.curves:
        curves_path = os.path.join(args.out, "curves.csv")
        with open(curves_path, "w", encoding="utf-8") as fh:
            fh.write("task,config,seed,budget_spent,avg_topk\n")
            for run in runs:
                for rec in run["records"]:
                    fh.write(f"{run['task']},{run['config_hash']},"
                             f"{run['seed']},{rec.budget_spent},"
                             f"{rec.avg_topk!r}\n")
    return EXIT_OK


def cmd_serve(args) -> int:
    model = policy.load_model(_model_path(args)) if args.model or not args.oracle \
        else None
    oracle = None
    if args.oracle:
        oracle, _ = oracles.load_oracle(args.oracle)
    adapters.serve(model=model, oracle=oracle,
                   version=args.protocol_version)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simtilt",
        description="similarity-tilted SMILES generation and optimization")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train the bundled n-gram model")
    p_train.add_argument("corpus")
    p_train.add_argument("--order", type=int, default=6)
    p_train.add_argument("--smoothing", type=float, default=0.01)
    p_train.add_argument("--embed-dim", type=int, default=256)
    p_train.add_argument("--embed-seed", type=int, default=0)
    p_train.add_argument("--out", required=True)
    p_train.set_defaults(func=cmd_train)

    p_gen = sub.add_parser("generate", help="guided generation with a report")
    p_gen.add_argument("--model")
    p_gen.add_argument("--guides", required=True)
    p_gen.add_argument("-n", "--num", type=int, default=100)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out")
    _add_guidance_args(p_gen)
    p_gen.set_defaults(func=cmd_generate)

    p_opt = sub.add_parser("optimize", help="run the genetic optimizer")
    p_opt.add_argument("--model")
    p_opt.add_argument("--oracle", required=True)
    p_opt.add_argument("--corpus")
    p_opt.add_argument("--config", help="flat key=value GA config file")
    p_opt.add_argument("--budget", type=int, default=0)
    p_opt.add_argument("--guides", type=int, default=0,
                       help="override number of guides")
    p_opt.add_argument("--diversity", type=int, default=None)
    p_opt.add_argument("--crossover", choices=["on", "off"])
    p_opt.add_argument("--seed", type=int, default=0)
    p_opt.add_argument("--target-seeded", action="store_true",
                       help="inject oracle target hints into the initial pool "
                            "(non-black-box; recorded in the manifest)")
    p_opt.add_argument("--out", required=True)
    _add_guidance_args(p_opt)
    p_opt.set_defaults(func=cmd_optimize)

    p_bench = sub.add_parser("bench", help="aggregate optimization runs")
    p_bench.add_argument("run_dirs", nargs="+")
    p_bench.add_argument("--out", required=True)
    p_bench.add_argument("--curves", action="store_true",
                         help="also emit tidy budget-vs-score curves")
    p_bench.set_defaults(func=cmd_bench)

    p_serve = sub.add_parser("serve", help="serve a model/oracle on stdio")
    p_serve.add_argument("--model")
    p_serve.add_argument("--oracle")
    p_serve.add_argument("--protocol-version", type=int,
                         default=adapters.PROTOCOL_VERSION,
                         help=argparse.SUPPRESS)
    p_serve.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except adapters.ProtocolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (SmilesError, ValueError, KeyError, OSError,
            policy.ModelFormatError, ga.CorpusTooSmallError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ga.BudgetExhaustedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
