"""Run configuration: a strict JSON document validated before any work.

Unknown keys are rejected everywhere; option sets are never defaulted
silently because the option space is the experiment's identity.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass

from .model import ATTRIBUTES, BLOCK_TYPES, SLOTS


@dataclass
class Violation:
    path: str
    message: str

    def __str__(self):
        return f"{self.path}: {self.message}"


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


_STRIDE_VALUES = (0.5, 1, 2, 3, 4)
_DILATION_VALUES = (1, 2, 3, 4, 5)
_SIZE_VALUES = (1, 3, 5, 7, 9)

REQUIRED_SECTIONS = ("model", "options", "data", "output")
OPTIONAL_SECTIONS = ("sweep", "train", "threads")


def validate_config(cfg) -> list[Violation]:
    v: list[Violation] = []
    if not isinstance(cfg, dict):
        return [Violation("$", "configuration must be a JSON object")]
    known = set(REQUIRED_SECTIONS) | set(OPTIONAL_SECTIONS)
    for key in cfg:
        if key not in known:
            v.append(Violation(f"$.{key}", "unknown section"))
    for key in REQUIRED_SECTIONS:
        if key not in cfg:
            v.append(Violation(f"$.{key}", "required section missing"))
    if "model" in cfg:
        _check_model(cfg["model"], v)
    if "options" in cfg:
        _check_options(cfg["options"], v)
    if "data" in cfg:
        _check_data(cfg["data"], v)
    if "output" in cfg:
        _check_output(cfg["output"], v)
    if "sweep" in cfg:
        _check_sweep(cfg["sweep"], v)
    if "train" in cfg:
        _check_train(cfg["train"], v)
    if "threads" in cfg and (not _is_int(cfg["threads"]) or cfg["threads"] < 1):
        v.append(Violation("$.threads", "must be a positive integer"))
    if "model" in cfg and "options" in cfg and isinstance(cfg.get("model"), dict) \
            and isinstance(cfg.get("options"), dict):
        _check_defaults_allowed(cfg["model"], cfg["options"], v)
    return v


def _check_keys(d, path, required, optional, v) -> bool:
    if not isinstance(d, dict):
        v.append(Violation(path, "must be an object"))
        return False
    for k in d:
        if k not in required and k not in optional:
            v.append(Violation(f"{path}.{k}", "unknown key"))
    ok = True
    for k in required:
        if k not in d:
            v.append(Violation(f"{path}.{k}", "required key missing"))
            ok = False
    return ok


def _check_model(m, v):
    if not _check_keys(m, "$.model",
                       ("input_size", "class_count", "stem_channels", "stages",
                        "default_strides"), (), v):
        return
    for k in ("input_size", "class_count", "stem_channels"):
        if k in m and (not _is_int(m[k]) or m[k] < 1):
            v.append(Violation(f"$.model.{k}", "must be a positive integer"))
    if isinstance(m.get("class_count"), int) and m["class_count"] < 2:
        v.append(Violation("$.model.class_count", "needs at least 2 classes"))
    stages = m.get("stages")
    if not isinstance(stages, list) or len(stages) != 4:
        v.append(Violation("$.model.stages", "must list exactly 4 stages"))
    else:
        for i, st in enumerate(stages):
            if (not isinstance(st, list) or len(st) != 3
                    or st[0] not in BLOCK_TYPES
                    or not _is_int(st[1]) or st[1] < 1
                    or not _is_int(st[2]) or st[2] < 1):
                v.append(Violation(f"$.model.stages[{i}]",
                                   f"must be [block in {BLOCK_TYPES}, blocks>=1, width>=1]"))
    ds = m.get("default_strides")
    if not isinstance(ds, list) or len(ds) != 4 or any(s not in _STRIDE_VALUES for s in ds):
        v.append(Violation("$.model.default_strides",
                           f"must be 4 values from {_STRIDE_VALUES}"))


def _check_options(o, v):
    if not _check_keys(o, "$.options", SLOTS, (), v):
        return
    universe = {"stride": _STRIDE_VALUES, "dilation": _DILATION_VALUES,
                "size": _SIZE_VALUES}
    for slot in SLOTS:
        if slot not in o:
            continue
        if not _check_keys(o[slot], f"$.options.{slot}", ATTRIBUTES, (), v):
            continue
        for attr in ATTRIBUTES:
            vals = o[slot].get(attr)
            path = f"$.options.{slot}.{attr}"
            if not isinstance(vals, list) or not vals:
                v.append(Violation(path, "must be a non-empty list"))
                continue
            bad = [x for x in vals if x not in universe[attr]]
            if bad:
                v.append(Violation(path, f"values {bad} not in {universe[attr]}"))
            if attr == "stride" and slot in ("A", "B") and 0.5 in vals:
                v.append(Violation(path,
                                   "stride 0.5 (upsampling) is not allowed in the "
                                   "shallow A and B slots"))
            if len(set(vals)) != len(vals):
                v.append(Violation(path, "duplicate values"))


def _check_defaults_allowed(m, o, v):
    ds = m.get("default_strides")
    if not isinstance(ds, list) or len(ds) != 4:
        return
    for slot, s in zip(SLOTS, ds):
        vals = o.get(slot, {}).get("stride") if isinstance(o.get(slot), dict) else None
        if isinstance(vals, list) and s not in vals:
            v.append(Violation(f"$.model.default_strides",
                               f"default stride {s} not in slot {slot} options"))


def _check_data(d, v):
    if not _check_keys(d, "$.data", ("source",),
                       ("dir", "images", "labels", "path", "synthetic",
                        "train_count", "eval_count", "normalize"), v):
        return
    src = d.get("source")
    if src not in ("cifar10", "idx", "synthetic", "container"):
        v.append(Violation("$.data.source",
                           "must be cifar10, idx, synthetic, or container"))
        return
    need = {"cifar10": ("dir",), "idx": ("images", "labels"),
            "synthetic": ("synthetic",), "container": ("path",)}[src]
    for k in need:
        if k not in d:
            v.append(Violation(f"$.data.{k}", f"required for source {src}"))
    for k in ("train_count", "eval_count"):
        if k in d and (not _is_int(d[k]) or d[k] < 0):
            v.append(Violation(f"$.data.{k}", "must be a non-negative integer"))
    if "synthetic" in d:
        syn = d["synthetic"]
        if _check_keys(syn, "$.data.synthetic",
                       ("n", "class_count", "scale_lo", "scale_hi", "seed"),
                       ("canvas",), v):
            for k in ("n", "class_count", "scale_lo", "scale_hi"):
                if not _is_int(syn.get(k)) or syn[k] < 1:
                    v.append(Violation(f"$.data.synthetic.{k}", "must be a positive integer"))
            if not _is_int(syn.get("seed")):
                v.append(Violation("$.data.synthetic.seed", "must be an integer"))


def _check_output(o, v):
    if _check_keys(o, "$.output", ("dir",), ("formats",), v):
        if not isinstance(o["dir"], str) or not o["dir"]:
            v.append(Violation("$.output.dir", "must be a non-empty string"))
        fmts = o.get("formats", ["csv", "json"])
        if not isinstance(fmts, list) or any(f not in ("csv", "json") for f in fmts):
            v.append(Violation("$.output.formats", "entries must be csv or json"))


def _check_sweep(s, v):
    if not _check_keys(s, "$.sweep", (),
                       ("attributes", "slots", "area_guard", "budget_cap",
                        "chunk_mb", "strategy", "weights", "sweep_file",
                        "attribute_sweeps", "greedy_k", "probe_levels",
                        "probe_reference", "mode", "references"), v):
        return
    attrs = s.get("attributes")
    if attrs is not None and (not isinstance(attrs, list) or not attrs
                              or any(a not in ATTRIBUTES for a in attrs)):
        v.append(Violation("$.sweep.attributes", f"must be a subset of {ATTRIBUTES}"))
    slots = s.get("slots")
    if slots is not None and (not isinstance(slots, list) or not slots
                              or any(x not in SLOTS for x in slots)):
        v.append(Violation("$.sweep.slots", f"must be a subset of {SLOTS}"))
    for k in ("area_guard",):
        if k in s and s[k] is not None and (not _is_number(s[k]) or s[k] <= 0):
            v.append(Violation(f"$.sweep.{k}", "must be a positive number or null"))
    for k in ("budget_cap", "chunk_mb", "greedy_k", "probe_reference"):
        if k in s and s[k] is not None and (not _is_int(s[k]) or s[k] < 1):
            v.append(Violation(f"$.sweep.{k}", "must be a positive integer"))
    if "strategy" in s and s["strategy"] not in ("prefix", "direct"):
        v.append(Violation("$.sweep.strategy", "must be prefix or direct"))
    if "mode" in s and s["mode"] not in ("global", "per-layer"):
        v.append(Violation("$.sweep.mode", "must be global or per-layer"))
    for k in ("weights", "sweep_file"):
        if k in s and not isinstance(s[k], str):
            v.append(Violation(f"$.sweep.{k}", "must be a path string"))
    if "attribute_sweeps" in s:
        asw = s["attribute_sweeps"]
        if not isinstance(asw, dict) or any(a not in ATTRIBUTES for a in asw) \
                or any(not isinstance(p, str) for p in asw.values()):
            v.append(Violation("$.sweep.attribute_sweeps",
                               "must map attribute names to sweep-file paths"))
    if "probe_levels" in s:
        pl = s["probe_levels"]
        if not isinstance(pl, list) or not pl or not all(_is_number(x) for x in pl):
            v.append(Violation("$.sweep.probe_levels", "must be a non-empty number list"))
    if "references" in s:
        refs = s["references"]
        if not isinstance(refs, list) or any(not _is_int(r) or r < 0 for r in refs):
            v.append(Violation("$.sweep.references", "must list permutation indices"))


def _check_train(t, v):
    if not _check_keys(t, "$.train", (),
                       ("epochs", "batch_size", "lr", "momentum", "weight_decay",
                        "decay_factor", "decay_epoch", "seed", "sampling",
                        "freeze_bn", "init_weights", "report",
                        "checkpoint_every"), v):
        return
    for k in ("epochs", "batch_size"):
        if k in t and (not _is_int(t[k]) or t[k] < 1):
            v.append(Violation(f"$.train.{k}", "must be a positive integer"))
    if "checkpoint_every" in t and (not _is_int(t["checkpoint_every"])
                                    or t["checkpoint_every"] < 0):
        v.append(Violation("$.train.checkpoint_every",
                           "must be a non-negative integer"))
    for k in ("lr", "momentum", "weight_decay", "decay_factor"):
        if k in t and (not _is_number(t[k]) or t[k] < 0):
            v.append(Violation(f"$.train.{k}", "must be a non-negative number"))
    if "lr" in t and _is_number(t["lr"]) and t["lr"] <= 0:
        v.append(Violation("$.train.lr", "must be positive"))
    if "decay_epoch" in t and t["decay_epoch"] is not None and not _is_int(t["decay_epoch"]):
        v.append(Violation("$.train.decay_epoch", "must be an integer or null"))
    if "seed" in t and not _is_int(t["seed"]):
        v.append(Violation("$.train.seed", "must be an integer"))
    if "sampling" in t and t["sampling"] not in ("fixed-default", "uniform-random-per-batch"):
        v.append(Violation("$.train.sampling",
                           "must be fixed-default or uniform-random-per-batch"))
    for k in ("freeze_bn", "report"):
        if k in t and not isinstance(t[k], bool):
            v.append(Violation(f"$.train.{k}", "must be a boolean"))
    if "init_weights" in t and t["init_weights"] is not None \
            and not isinstance(t["init_weights"], str):
        v.append(Violation("$.train.init_weights", "must be a path string or null"))


# ---------------------------------------------------------------------------
# loading and overrides

def load_config(path) -> dict:
    with open(path) as f:
        return json.load(f)


def apply_override(cfg: dict, dotted: str, raw: str) -> dict:
    """Set a dotted-path key; the value parses as JSON, else a string."""
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    out = copy.deepcopy(cfg)
    node = out
    parts = dotted.split(".")
    for p in parts[:-1]:
        nxt = node.get(p)
        if not isinstance(nxt, dict):
            nxt = {}
            node[p] = nxt
        node = nxt
    node[parts[-1]] = value
    return out
