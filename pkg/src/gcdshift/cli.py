"""Command-line experiment harness.

Commands: ``run`` (train one mode or a whole ablation table over seeds),
``compare`` (signed metric deltas between two reports on the same task),
``gen-data`` (export a dataset to the text format), ``bench-corrupt``
(distortion-vs-severity table for every corruption kind).

``run`` writes two files into the output directory: ``metrics.csv``, one row
per evaluation point with the fixed column set below, every float at six
decimals; and ``report.json``, the config echo plus per-seed finals and a
mean/std summary per variant.  Identical invocations produce byte-identical
metrics.csv.  The output root defaults to the GCDSHIFT_OUT environment
variable, then ``./runs``.
"""

import argparse
import concurrent.futures
import dataclasses
import json
import os
import shutil
import sys
import tempfile

import numpy as np

import gcdshift.bounds as bd
import gcdshift.config as cf
import gcdshift.curriculum as cur
import gcdshift.encoder as enc
import gcdshift.losses as ls
import gcdshift.synthdata as sd
import gcdshift.trainer as tr

OUT_ROOT_ENV = "GCDSHIFT_OUT"

COLUMNS = (
    "variant", "seed", "epoch", "lr",
    "loss_total", "loss_rep", "loss_cls", "loss_sem", "loss_dom", "loss_mi",
    "seen_all", "seen_old", "seen_new",
    "unseen_all", "unseen_old", "unseen_new",
    "d_hat", "mi_estimate", "e_l", "e_u",
    "thm1_rhs", "thm2_rhs", "thm1_slack", "thm2_slack",
)
SUMMARY_METRICS = COLUMNS[3:]

# ablation-table rows in report order: baseline, each component alone, the
# full method, then the two feature-tap ablations
TABLE3 = (
    ("simgcd", "simgcd", ()),
    ("+patchmix", "hilo", ("patchmix_only",)),
    ("+disentangle", "hilo", ("mi_only",)),
    ("+curriculum", "hilo", ("curriculum_only",)),
    ("hilo", "hilo", ()),
    ("deep_only", "hilo", ("deep_only",)),
    ("shallow_only", "hilo", ("shallow_only",)),
)


def _variants(cfg: cf.ExperimentConfig):
    """(name, mode, flag names) triples this config asks for."""
    if cfg.ablation == "table3":
        return list(TABLE3)
    flags = tuple(cfg.train.ablations.active())
    name = cfg.train.mode if not flags else f"{cfg.train.mode}:{'+'.join(flags)}"
    return [(name, cfg.train.mode, flags)]


def _run_one(cfg_dict: dict, name: str, mode: str, flag_names: tuple, seed: int):
    """One (variant, seed) training run; a top-level function so process pools
    can ship it."""
    cfg = cf.from_dict(cfg_dict)
    train_cfg = dataclasses.replace(
        cfg.train, mode=mode,
        ablations=tr.AblationFlags(**{f: True for f in flag_names}))
    dataset = sd.generate(cfg.task)
    result = tr.run_experiment(dataset, cfg.encoder, train_cfg, cfg.loss,
                               cfg.curriculum, cfg.bounds, seed=seed)
    return name, seed, result.rows


def _fmt(key: str, value) -> str:
    if key == "variant":
        return str(value)
    if key in ("seed", "epoch"):
        return str(int(value))
    return f"{float(value):.6f}"


def _atomic_write(path: str, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _summarize(finals: dict) -> dict:
    out = {}
    for metric in SUMMARY_METRICS:
        vals = np.array([finals[s][metric] for s in sorted(finals)], dtype=np.float64)
        out[metric] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return out


def cmd_run(args) -> int:
    cfg, cfg_dict = _load_config(args)
    out_dir = _resolve_out_dir(cfg, args)

    jobs = max(1, args.jobs)
    tasks = [(name, mode, flags, seed)
             for name, mode, flags in _variants(cfg) for seed in cfg.seeds]
    results = {}
    if jobs == 1 or len(tasks) == 1:
        for name, mode, flags, seed in tasks:
            key, _, rows = _run_one(cfg_dict, name, mode, flags, seed)
            results[(key, seed)] = rows
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_one, cfg_dict, name, mode, flags, seed)
                       for name, mode, flags, seed in tasks]
            for fut in concurrent.futures.as_completed(futures):
                name, seed, rows = fut.result()
                results[(name, seed)] = rows

    order = [name for name, _, _ in _variants(cfg)]
    lines = [",".join(COLUMNS)]
    for name in order:
        for seed in sorted(cfg.seeds):
            for row in results[(name, seed)]:
                record = {"variant": name, "seed": seed, **row}
                lines.append(",".join(_fmt(c, record[c]) for c in COLUMNS))

    variants_report = {}
    for name in order:
        finals = {seed: {m: float(results[(name, seed)][-1][m]) for m in SUMMARY_METRICS}
                  for seed in cfg.seeds}
        variants_report[name] = {"final": {str(s): finals[s] for s in sorted(finals)},
                                 "summary": _summarize(finals)}
    report = {"config": cfg_dict, "task_hash": cf.task_hash(cfg),
              "variants": variants_report}

    created = not os.path.isdir(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    try:
        _atomic_write(os.path.join(out_dir, "metrics.csv"), "\n".join(lines) + "\n")
        _atomic_write(os.path.join(out_dir, "report.json"),
                      json.dumps(report, indent=2, sort_keys=True) + "\n")
    except BaseException:
        if created:
            shutil.rmtree(out_dir, ignore_errors=True)
        raise

    for name in order:
        s = variants_report[name]["summary"]
        print(f"{name}: seen {s['seen_all']['mean']:.3f}±{s['seen_all']['std']:.3f}"
              f"  unseen {s['unseen_all']['mean']:.3f}±{s['unseen_all']['std']:.3f}")
    print(f"wrote {os.path.join(out_dir, 'metrics.csv')} and report.json")
    return 0


def cmd_compare(args) -> int:
    with open(args.report_a, encoding="utf-8") as fh:
        rep_a = json.load(fh)
    with open(args.report_b, encoding="utf-8") as fh:
        rep_b = json.load(fh)
    if rep_a.get("task_hash") != rep_b.get("task_hash"):
        print("reports come from different tasks; refusing to compare", file=sys.stderr)
        return 2

    va, vb = rep_a["variants"], rep_b["variants"]
    if len(va) == 1 and len(vb) == 1:
        pairs = [(next(iter(va)), next(iter(vb)))]
    else:
        common = [n for n in va if n in vb]
        if not common:
            print("no variant present in both reports", file=sys.stderr)
            return 2
        pairs = [(n, n) for n in common]

    print(f"{'variant':<28} {'metric':<14} {'A':>12} {'B':>12} {'delta':>12}")
    for name_a, name_b in pairs:
        sa, sb = va[name_a]["summary"], vb[name_b]["summary"]
        label = name_a if name_a == name_b else f"{name_a} vs {name_b}"
        for metric in SUMMARY_METRICS:
            if metric not in sa or metric not in sb:
                print(f"metric {metric} missing from one report", file=sys.stderr)
                return 2
            a, b = sa[metric]["mean"], sb[metric]["mean"]
            print(f"{label:<28} {metric:<14} {a:>12.6f} {b:>12.6f} {a - b:>+12.6f}")
    return 0


def cmd_gen_data(args) -> int:
    cfg, _ = _load_config(args)
    dataset = sd.generate(cfg.task)
    path = args.file or os.path.join(_resolve_out_dir(cfg, args), "dataset.txt")
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    sd.save_dataset(dataset, path)
    counts = dataset.counts()
    print(f"wrote {path}: " + ", ".join(f"{k}={v}" for k, v in sorted(counts.items())))
    return 0


def cmd_bench_corrupt(args) -> int:
    rng = np.random.default_rng(args.seed)
    samples = rng.normal(size=(args.samples, 16, 8))
    lines = ["kind,severity,mse"]
    for kind in sd.CORRUPTION_KINDS:
        for severity in range(1, 6):
            out = sd.corrupt(samples, kind, severity, np.random.default_rng(args.seed))
            mse = float(np.mean((out - samples) ** 2))
            lines.append(f"{kind},{severity},{mse:.6f}")
    text = "\n".join(lines) + "\n"
    if args.file:
        os.makedirs(os.path.dirname(args.file) or ".", exist_ok=True)
        _atomic_write(args.file, text)
        print(f"wrote {args.file}")
    else:
        print(text, end="")
    return 0


def _parse_seeds(spec: str):
    parts = [p.strip() for p in spec.split(",") if p.strip()]
    if not parts:
        raise ValueError(f"bad seed spec {spec!r}")
    if len(parts) == 1:
        return list(range(int(parts[0])))   # a count: N -> seeds 0..N-1
    return [int(p) for p in parts]


def _load_config(args) -> tuple:
    """Config file, then flag sugar, then --set overrides; returns the built
    config plus the exact dict it came from (the report echo)."""
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValueError("config root must be a JSON object")
    else:
        data = {}
    if getattr(args, "mode", None):
        data.setdefault("train", {})["mode"] = args.mode
    if getattr(args, "seeds", None):
        data["seeds"] = _parse_seeds(args.seeds)
    if getattr(args, "ablation", None):
        data["ablation"] = args.ablation
    if getattr(args, "out", None):
        data["out_dir"] = args.out
    cf.apply_overrides(data, getattr(args, "set", None) or [])
    cfg = cf.from_dict(data)
    # echo the fully resolved config, defaults included, so the report alone
    # can reproduce the run
    return cfg, cf.to_dict(cfg)


def _resolve_out_dir(cfg: cf.ExperimentConfig, args) -> str:
    if cfg.out_dir:
        return cfg.out_dir
    root = os.environ.get(OUT_ROOT_ENV, "runs")
    name = cfg.ablation if cfg.ablation != "none" else _variants(cfg)[0][0]
    return os.path.join(root, name.replace(":", "_"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gcdshift",
        description="category discovery under domain shift: experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_mode=True):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted-path override, e.g. --set train.epochs=20")
        p.add_argument("--out", help="output directory")
        if with_mode:
            p.add_argument("--mode", choices=tr.MODES)
            p.add_argument("--seeds", help="count (e.g. 5) or explicit list (e.g. 0,3,7)")

    p_run = sub.add_parser("run", help="train and write metrics.csv + report.json")
    common(p_run)
    p_run.add_argument("--ablation", choices=cf.ABLATION_SETS)
    p_run.add_argument("--jobs", type=int, default=1,
                       help="parallel seed/variant runs (default 1)")
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="signed metric deltas between two reports")
    p_cmp.add_argument("report_a")
    p_cmp.add_argument("report_b")
    p_cmp.set_defaults(func=cmd_compare)

    p_gen = sub.add_parser("gen-data", help="export a dataset as text")
    common(p_gen, with_mode=False)
    p_gen.add_argument("--file", help="output file (default <out>/dataset.txt)")
    p_gen.set_defaults(func=cmd_gen_data)

    p_bench = sub.add_parser("bench-corrupt", help="distortion vs severity table")
    p_bench.add_argument("--file", help="write CSV here instead of stdout")
    p_bench.add_argument("--samples", type=int, default=1000)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.set_defaults(func=cmd_bench_corrupt)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
