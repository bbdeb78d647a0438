"""Bridge acceptance: export -> verify zero diffs, the exported file loads
in the primary engine with a matching fingerprint, and a corrupted byte is
detected.  The primary engine is touched only through its weight-file
interface (plus the load call the criterion itself demands)."""

import json
import time

import numpy as np
import pytest
import torch

from dynw_bridge import dynw_format as fmt
from dynw_bridge.bridge import ExportManifest, export, verify


def report(name, ok, detail=""):
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def test_bridge_round_trip(tmp_path):
    t0 = time.time()
    dynaconv_model = pytest.importorskip("dynaconv.model")
    from dynaconv.model import ModelSpec, StageSpec, build
    from dynaconv.weightio import load_model

    # target spec on the primary side; the bridge sees only its JSON form
    spec = ModelSpec(input_size=16, class_count=3, stem_channels=4,
                     stages=(StageSpec("basic", 1, 4), StageSpec("basic", 1, 4),
                             StageSpec("basic", 1, 8), StageSpec("basic", 1, 8)))
    net = build(spec, seed=5)
    spec_doc = spec.to_dict()

    # a torch checkpoint holding the same values under source-style names
    state = {}
    mapping = {}
    for i, (name, arr) in enumerate(net.state().items()):
        src = f"backbone.{i}.param"
        state[src] = torch.from_numpy(np.ascontiguousarray(arr.astype(np.float32)))
        mapping[name] = {"source": src, "dims": list(arr.shape)}
    ckpt = tmp_path / "zoo.pt"
    torch.save(state, ckpt)
    mpath = tmp_path / "manifest.json"
    mpath.write_text(json.dumps({
        "source": "acceptance-fixture",
        "mapping": mapping,
        "spec": spec_doc,
        "fingerprint": fmt.spec_fingerprint(spec_doc)}))

    manifest = ExportManifest.load(mpath)
    out = tmp_path / "weights.dynw"
    export(ckpt, manifest, out)

    rep = verify(out, ckpt, manifest)
    zero = rep.passed and all(v == 0.0 for v in rep.per_tensor_max_diff.values())

    loaded = load_model(out)
    loads_ok = all((loaded.state()[k] == v).all() for k, v in net.state().items())
    from dynaconv.weightio import fingerprint as primary_fingerprint
    fp_ok = primary_fingerprint(loaded.spec.to_dict()) == manifest.fingerprint

    raw = bytearray(out.read_bytes())
    raw[-2] ^= 0x20
    corrupted = tmp_path / "corrupt.dynw"
    corrupted.write_bytes(bytes(raw))
    rep2 = verify(corrupted, ckpt, manifest)
    detected = not rep2.passed

    took = time.time() - t0
    report("bridge round trip",
           zero and loads_ok and fp_ok and detected and took < 60,
           f"zero diffs={zero}, primary load={loads_ok}, fingerprint={fp_ok}, "
           f"corruption detected={detected}, {took:.1f}s")
