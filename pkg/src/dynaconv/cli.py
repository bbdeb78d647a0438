"""Operator surface: config-driven commands composing the engine into
experiments, emitting machine-readable CSV/JSON artifacts plus a run
manifest.

Exit codes: 0 success, 2 configuration violation, 3 missing input,
4 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__, kernels
from .analyses import (bounds, budget, combined_space, greedy_accumulate,
                       mean_unique_predictions, preference_report,
                       unique_predictions)
from .config import apply_override, load_config, validate_config
from .data import (Dataset, ProbeTransform, apply_probe, gen_scale_synthetic,
                   load_cifar10, load_dataset, load_idx, standardize)
from .efficiency import (cost_table, efficiency_oracle, frontier,
                         write_frontier_csv)
from .errors import ConfigError, DataFormatError
from .model import ModelSpec, OptionSet, SLOTS, StageSpec, build
from .sweep import (comprehensive_sweep, default_values,
                    enumerate_permutations, find_permutation, load_sweep,
                    save_sweep)
from .train import TrainConfig, rof_finetune, train_static
from .weightio import load_model, save_model

COMMANDS = ("validate", "train", "rof", "sweep", "greedy", "combined",
            "probe-scale", "probe-context", "efficiency", "report")


def _parser():
    p = argparse.ArgumentParser(prog="dynaconv",
                                description="inference-time-dynamic convolution experiments")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted-path config override, value parsed as JSON")
    p.add_argument("--output", help="override output.dir")
    p.add_argument("--seed", type=int, help="override train.seed")
    p.add_argument("--threads", type=int, help="worker threads (wins over config/env)")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except FileNotFoundError:
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return 3
    except json.JSONDecodeError as e:
        print(f"error: config is not valid JSON: {e}", file=sys.stderr)
        return 2
    for ov in args.set:
        if "=" not in ov:
            print(f"error: --set needs KEY=VALUE, got {ov!r}", file=sys.stderr)
            return 2
        key, _, val = ov.partition("=")
        cfg = apply_override(cfg, key, val)
    if args.output:
        cfg = apply_override(cfg, "output.dir", json.dumps(args.output))
    if args.seed is not None:
        cfg = apply_override(cfg, "train.seed", str(args.seed))

    violations = validate_config(cfg)
    if args.command == "validate":
        for vi in violations:
            print(vi)
        print(f"{len(violations)} violation(s)")
        return 0 if not violations else 2
    if violations:
        for vi in violations:
            print(vi, file=sys.stderr)
        return 2

    threads = args.threads or cfg.get("threads") or os.environ.get("DYNACONV_THREADS")
    if threads:
        kernels.set_threads(int(threads))

    try:
        handler = _HANDLERS[args.command]
        outdir = cfg["output"]["dir"]
        os.makedirs(outdir, exist_ok=True)
        outputs = handler(cfg, outdir)
        _write_manifest(outdir, args.command, cfg, threads, outputs)
        return 0
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"missing input: {e}", file=sys.stderr)
        return 3
    except DataFormatError as e:
        print(f"input format error: {e}", file=sys.stderr)
        return 3
    except Exception as e:  # noqa: BLE001 - single reporting point for the CLI
        print(f"runtime failure ({type(e).__name__}): {e}", file=sys.stderr)
        return 4


def _write_manifest(outdir, command, cfg, threads, outputs):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    try:
        import numba
        numba_version = numba.__version__
    except ImportError:
        numba_version = None
    manifest = {
        "command": command,
        "config_hash": hashlib.sha256(blob).hexdigest(),
        "seed": cfg.get("train", {}).get("seed"),
        "versions": {"dynaconv": __version__, "numpy": np.__version__,
                     "numba": numba_version},
        "backend": kernels.BACKEND,
        "threads": int(threads) if threads else None,
        "outputs": sorted(outputs),
    }
    with open(os.path.join(outdir, "run.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# config -> engine objects

def _spec_from_config(cfg, norm_mean=(0.0, 0.0, 0.0), norm_std=(1.0, 1.0, 1.0)) -> ModelSpec:
    m = cfg["model"]
    opts = {slot: OptionSet(stride=tuple(cfg["options"][slot]["stride"]),
                            dilation=tuple(cfg["options"][slot]["dilation"]),
                            size=tuple(cfg["options"][slot]["size"]))
            for slot in SLOTS}
    return ModelSpec(
        input_size=m["input_size"], class_count=m["class_count"],
        stem_channels=m["stem_channels"],
        stages=tuple(StageSpec(b, n, w) for b, n, w in m["stages"]),
        default_strides=tuple(m["default_strides"]),
        options=opts, norm_mean=tuple(norm_mean), norm_std=tuple(norm_std))


def _load_raw_datasets(cfg) -> tuple[Dataset, Dataset]:
    d = cfg["data"]
    src = d["source"]
    train_n = d.get("train_count", 0)
    eval_n = d.get("eval_count", 0)
    if src == "cifar10":
        train = load_cifar10(d["dir"], "train")
        test = load_cifar10(d["dir"], "test")
        train = train.subset(np.arange(min(train_n or len(train), len(train))))
        test = test.subset(np.arange(min(eval_n or len(test), len(test))))
        return train, test
    if src == "synthetic":
        s = d["synthetic"]
        total = (train_n + eval_n) or s["n"]
        ds = gen_scale_synthetic(total, s["class_count"],
                                 (s["scale_lo"], s["scale_hi"]), s["seed"],
                                 canvas=s.get("canvas", 32))
        cut = train_n or (total // 2)
        return ds.subset(np.arange(cut)), ds.subset(np.arange(cut, total))
    if src == "idx":
        ds = load_idx(d["images"], d["labels"])
    else:
        ds = load_dataset(d["path"])
    cut = train_n or (len(ds) // 2)
    end = cut + eval_n if eval_n else len(ds)
    return ds.subset(np.arange(cut)), ds.subset(np.arange(cut, end))


def _eval_dataset(cfg, model) -> Dataset:
    _, ds = _load_raw_datasets(cfg)
    if cfg["data"].get("normalize", True) and not ds.normalized:
        ds = standardize(ds, model.spec.norm_mean, model.spec.norm_std)
    return ds


def _sweep_section(cfg) -> dict:
    if "sweep" not in cfg:
        raise ConfigError("this command needs a $.sweep section")
    return cfg["sweep"]


def _train_config(cfg, outdir=None) -> TrainConfig:
    if "train" not in cfg:
        raise ConfigError("this command needs a $.train section")
    t = cfg["train"]
    every = t.get("checkpoint_every", 0)
    return TrainConfig(
        epochs=t.get("epochs", 10), batch_size=t.get("batch_size", 64),
        lr=t.get("lr", 0.01), momentum=t.get("momentum", 0.9),
        weight_decay=t.get("weight_decay", 1e-4),
        decay_factor=t.get("decay_factor", 0.1),
        decay_epoch=t.get("decay_epoch"), seed=t.get("seed", 0),
        sampling=t.get("sampling", "fixed-default"),
        freeze_bn=t.get("freeze_bn", False),
        checkpoint_every=every,
        checkpoint_dir=os.path.join(outdir, "checkpoints") if every and outdir else None)


def _enumerate_from_config(cfg, spec, input_hw=None):
    s = _sweep_section(cfg)
    attrs = tuple(s.get("attributes", ["stride"]))
    slots = tuple(s.get("slots", list(SLOTS)))
    guard = s.get("area_guard", 16.0)
    return enumerate_permutations(spec, attrs, slots, area_guard=guard,
                                  input_hw=input_hw)


def _model_from_weights(cfg):
    s = _sweep_section(cfg)
    if "weights" not in s:
        raise ConfigError("$.sweep.weights: checkpoint path required")
    return load_model(s["weights"])


def _sweep_kwargs(cfg):
    s = cfg.get("sweep", {})
    return {"strategy": s.get("strategy", "prefix"),
            "chunk_bytes": s.get("chunk_mb", 256) << 20}


# ---------------------------------------------------------------------------
# shared artifact writers (used by both `sweep` and `report` so regenerated
# files are byte-identical)

def _write_bounds_csv(path, b):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["metric", "value"])
        for name, val in (("worst", b.worst), ("median", b.median),
                          ("best", b.best), ("volatility", b.volatility)):
            w.writerow([name, f"{val:.6f}"])


def _write_static_csv(path, sr):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["perm_index", "values", "accuracy", "macs"])
        accs = sr.static_accuracies()
        for p in sr.perms:
            w.writerow([p.index, json.dumps([list(v) for v in p.values]),
                        f"{accs[p.index]:.6f}", int(sr.macs[p.index])])


def _write_unique_csv(path, sr):
    hist = unique_predictions(sr)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["unique_predictions", "samples"])
        for k in range(1, len(hist)):
            if hist[k]:
                w.writerow([k, int(hist[k])])


def _write_preferences_json(path, sr):
    rep = preference_report(sr)
    doc = {
        "path_fractions": {str(k): round(v, 9) for k, v in rep.path_fractions.items()},
        "marginals": {f"{slot}.{attr}": {str(o): round(f, 9) for o, f in dist.items()}
                      for (slot, attr), dist in rep.marginals.items()},
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _emit_sweep_artifacts(outdir, sr, stem="sweep"):
    b = bounds(sr)
    save_sweep(os.path.join(outdir, f"{stem}.dyns"), sr)
    _write_bounds_csv(os.path.join(outdir, f"{stem}_bounds.csv"), b)
    _write_static_csv(os.path.join(outdir, f"{stem}_static.csv"), sr)
    _write_unique_csv(os.path.join(outdir, f"{stem}_unique.csv"), sr)
    _write_preferences_json(os.path.join(outdir, f"{stem}_preferences.json"), sr)
    print(f"{stem}: n={sr.n} M={sr.m} worst={b.worst:.4f} "
          f"median={b.median:.4f} best={b.best:.4f}")
    return [f"{stem}.dyns", f"{stem}_bounds.csv", f"{stem}_static.csv",
            f"{stem}_unique.csv", f"{stem}_preferences.json"]


# ---------------------------------------------------------------------------
# commands

def _cmd_train(cfg, outdir):
    tc = _train_config(cfg, outdir)
    train_raw, eval_raw = _load_raw_datasets(cfg)
    if cfg["data"].get("normalize", True):
        train_ds = standardize(train_raw)
        spec = _spec_from_config(cfg, train_ds.norm_mean, train_ds.norm_std)
        eval_ds = standardize(eval_raw, train_ds.norm_mean, train_ds.norm_std)
    else:
        spec = _spec_from_config(cfg)
        train_ds, eval_ds = train_raw, eval_raw
    model = build(spec, seed=tc.seed)
    init = cfg.get("train", {}).get("init_weights")
    if init:
        from .weightio import load_weights_for
        load_weights_for(model, init)
    log = train_static(model, train_ds, tc)
    acc = _static_accuracy(model, eval_ds)
    print(f"train: epochs={tc.epochs} final_loss={log.epoch_loss[-1]:.4f} "
          f"eval_acc={acc:.4f}")
    save_model(model, os.path.join(outdir, "weights.dynw"))
    log.write_csv(os.path.join(outdir, "train_log.csv"))
    with open(os.path.join(outdir, "train_summary.json"), "w") as f:
        json.dump({"eval_accuracy": acc, "epoch_loss": log.epoch_loss}, f, indent=2)
        f.write("\n")
    return ["weights.dynw", "train_log.csv", "train_summary.json"]


def _static_accuracy(model, ds, assignment=None, batch=256):
    hits = 0
    for lo in range(0, len(ds), batch):
        x = ds.images[lo:lo + batch].astype(model.dtype)
        logits = model.forward(x, assignment).data
        hits += int((logits.argmax(axis=1) == ds.labels[lo:lo + batch]).sum())
    return hits / len(ds)


def _cmd_rof(cfg, outdir):
    tc = _train_config(cfg, outdir)
    model = _model_from_weights(cfg)
    train_raw, eval_raw = _load_raw_datasets(cfg)
    if cfg["data"].get("normalize", True):
        train_ds = standardize(train_raw, model.spec.norm_mean, model.spec.norm_std)
        eval_ds = standardize(eval_raw, model.spec.norm_mean, model.spec.norm_std)
    else:
        train_ds, eval_ds = train_raw, eval_raw
    perms = _enumerate_from_config(cfg, model.spec)
    want_report = cfg.get("train", {}).get("report", False)
    model, log, report, pre, post = rof_finetune(
        model, train_ds, tc, perms,
        eval_ds=eval_ds if want_report else None)
    save_model(model, os.path.join(outdir, "weights_rof.dynw"))
    log.write_csv(os.path.join(outdir, "rof_log.csv"))
    outputs = ["weights_rof.dynw", "rof_log.csv"]
    if report is not None:
        save_sweep(os.path.join(outdir, "pre_sweep.dyns"), pre)
        save_sweep(os.path.join(outdir, "post_sweep.dyns"), post)
        doc = {
            "pre": {"worst": report.pre[0], "median": report.pre[1],
                    "best": report.pre[2], "volatility": report.pre_volatility,
                    "mean_unique": mean_unique_predictions(pre)},
            "post": {"worst": report.post[0], "median": report.post[1],
                     "best": report.post[2], "volatility": report.post_volatility,
                     "mean_unique": mean_unique_predictions(post)},
        }
        with open(os.path.join(outdir, "rof_report.json"), "w") as f:
            json.dump(doc, f, indent=2, sort_keys=True)
            f.write("\n")
        print(f"rof: volatility {report.pre_volatility:.4f} -> "
              f"{report.post_volatility:.4f}, median {report.pre[1]:.4f} -> "
              f"{report.post[1]:.4f}")
        outputs += ["pre_sweep.dyns", "post_sweep.dyns", "rof_report.json"]
    return outputs


def _cmd_sweep(cfg, outdir):
    model = _model_from_weights(cfg)
    eval_ds = _eval_dataset(cfg, model)
    perms = _enumerate_from_config(cfg, model.spec)
    sr = comprehensive_sweep(model, eval_ds, perms, **_sweep_kwargs(cfg))
    return _emit_sweep_artifacts(outdir, sr)


def _cmd_greedy(cfg, outdir):
    s = _sweep_section(cfg)
    if "sweep_file" not in s:
        raise ConfigError("$.sweep.sweep_file: serialized sweep required")
    sr = load_sweep(s["sweep_file"])
    curve = greedy_accumulate(sr, s.get("greedy_k"))
    path = os.path.join(outdir, "greedy_curve.csv")
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["k", "best_case_accuracy", "perm_index"])
        for step in curve:
            w.writerow([step.k, f"{step.accuracy:.6f}", step.perm_index])
    print(f"greedy: k=1 acc={curve[0].accuracy:.4f}, "
          f"k={curve[-1].k} acc={curve[-1].accuracy:.4f}")
    return ["greedy_curve.csv"]


def _cmd_combined(cfg, outdir):
    s = _sweep_section(cfg)
    table = s.get("attribute_sweeps")
    if not table:
        raise ConfigError("$.sweep.attribute_sweeps: per-attribute sweep files required")
    cap = s.get("budget_cap", 625)
    plan = budget(len(table), cap)
    per_attr = {}
    for attr, path in table.items():
        sr = load_sweep(path)
        steps = greedy_accumulate(sr, min(plan.per_attribute, sr.m))
        per_attr[attr] = [sr.perms[st.perm_index] for st in steps]
    combined = combined_space(per_attr, plan)
    model = _model_from_weights(cfg)
    eval_ds = _eval_dataset(cfg, model)
    sr = comprehensive_sweep(model, eval_ds, combined, **_sweep_kwargs(cfg))
    outputs = _emit_sweep_artifacts(outdir, sr, stem="combined_sweep")
    doc = {"attributes": sorted(table), "cap": cap,
           "per_attribute": plan.per_attribute, "total": plan.total,
           "enumerated": len(combined)}
    with open(os.path.join(outdir, "budget.json"), "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"combined: R={plan.per_attribute} total={plan.total}")
    return outputs + ["budget.json"]


def _probe_levels(cfg, kind):
    s = _sweep_section(cfg)
    levels = s.get("probe_levels")
    if not levels:
        levels = [0.25, 0.5, 1.0, 2.0, 4.0] if kind == "scale" else [20, 24, 28, 32, 36, 40]
    if kind == "context":
        levels = [int(v) for v in levels]
    return levels


def _cmd_probe(kind):
    def run(cfg, outdir):
        s = _sweep_section(cfg)
        model = _model_from_weights(cfg)
        eval_ds = _eval_dataset(cfg, model)
        mode = s.get("mode", "global")
        levels = _probe_levels(cfg, kind)
        reference = s.get("probe_reference", 40)
        attrs = tuple(s.get("attributes", ["stride"]))
        slots = tuple(s.get("slots", list(SLOTS)))
        rows = []
        brows = []
        outputs = []
        for level in levels:
            t = (ProbeTransform("scale", factor=level) if kind == "scale"
                 else ProbeTransform("context", crop=level, reference=reference))
            probed = apply_probe(eval_ds, t)
            hw = probed.images.shape[2:]
            sweep_sets = ([(slots, None)] if mode == "global"
                          else [((slot,), slot) for slot in slots])
            for active_slots, tag in sweep_sets:
                perms = enumerate_permutations(
                    model.spec, attrs, active_slots,
                    area_guard=s.get("area_guard", 16.0), input_hw=hw)
                sr = comprehensive_sweep(model, probed, perms, **_sweep_kwargs(cfg))
                rep = preference_report(sr)
                b = bounds(sr)
                name = f"probe_{kind}_{level}" + (f"_{tag}" if tag else "")
                save_sweep(os.path.join(outdir, f"{name}.dyns"), sr)
                outputs.append(f"{name}.dyns")
                for (slot, attr), dist in rep.marginals.items():
                    for opt, fr in sorted(dist.items(), key=lambda kv: float(kv[0])):
                        rows.append([level, mode, slot, attr, opt, f"{fr:.6f}"])
                brows.append([level, tag or "all", f"{b.worst:.6f}",
                              f"{b.median:.6f}", f"{b.best:.6f}"])
        mpath = os.path.join(outdir, f"probe_{kind}_marginals.csv")
        with open(mpath, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["level", "mode", "slot", "attribute", "option", "fraction"])
            w.writerows(rows)
        bpath = os.path.join(outdir, f"probe_{kind}_bounds.csv")
        with open(bpath, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["level", "slots", "worst", "median", "best"])
            w.writerows(brows)
        print(f"probe-{kind}: {len(levels)} levels, mode={mode}")
        return outputs + [f"probe_{kind}_marginals.csv", f"probe_{kind}_bounds.csv"]
    return run


def _cmd_efficiency(cfg, outdir):
    s = _sweep_section(cfg)
    if "sweep_file" not in s:
        raise ConfigError("$.sweep.sweep_file: serialized sweep required")
    sr = load_sweep(s["sweep_file"])
    model = _model_from_weights(cfg)
    costs = cost_table(model, sr.perms, sr.input_hw)
    refs = s.get("references")
    if refs is None:
        d = find_permutation(sr.perms, default_values(
            model.spec, sr.perms[0].slots, sr.perms[0].attrs))
        refs = [d] if d >= 0 else [0]
    for r in refs:
        if not 0 <= r < sr.m:
            raise ConfigError(f"reference permutation {r} outside [0, {sr.m})")
    points = frontier(sr, costs, reference_indices=refs)
    write_frontier_csv(os.path.join(outdir, "frontier.csv"), points)
    doc = []
    for r in refs:
        res = efficiency_oracle(sr, costs, sr.preds[:, r], np.full(sr.n, costs[r]))
        doc.append({"reference": int(r), "accuracy": res.accuracy,
                    "avg_macs": res.avg_macs,
                    "reference_macs": res.reference_avg_macs,
                    "speedup": res.speedup})
        print(f"efficiency: ref={r} acc={res.accuracy:.4f} "
              f"macs {res.reference_avg_macs / 1e6:.2f}M -> {res.avg_macs / 1e6:.2f}M "
              f"({res.speedup:.2f}x)")
    with open(os.path.join(outdir, "efficiency.json"), "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    return ["frontier.csv", "efficiency.json"]


def _cmd_report(cfg, outdir):
    s = _sweep_section(cfg)
    if "sweep_file" not in s:
        raise ConfigError("$.sweep.sweep_file: serialized sweep required")
    sr = load_sweep(s["sweep_file"])
    b = bounds(sr)
    _write_bounds_csv(os.path.join(outdir, "sweep_bounds.csv"), b)
    _write_static_csv(os.path.join(outdir, "sweep_static.csv"), sr)
    _write_unique_csv(os.path.join(outdir, "sweep_unique.csv"), sr)
    _write_preferences_json(os.path.join(outdir, "sweep_preferences.json"), sr)
    print(f"report: n={sr.n} M={sr.m} best={b.best:.4f}")
    return ["sweep_bounds.csv", "sweep_static.csv", "sweep_unique.csv",
            "sweep_preferences.json"]


_HANDLERS = {
    "train": _cmd_train,
    "rof": _cmd_rof,
    "sweep": _cmd_sweep,
    "greedy": _cmd_greedy,
    "combined": _cmd_combined,
    "probe-scale": _cmd_probe("scale"),
    "probe-context": _cmd_probe("context"),
    "efficiency": _cmd_efficiency,
    "report": _cmd_report,
}

if __name__ == "__main__":
    sys.exit(main())
