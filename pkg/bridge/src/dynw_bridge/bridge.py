"""Convert a PyTorch checkpoint into the portable DYNW weight container.

Values are copied verbatim (no transformation); any layout permutation the
engine needs happens on its side at load time.  The export manifest maps
portable tensor names to source tensor names and pins expected dims, the
target spec document, and its fingerprint.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import dynw_format as fmt


class ExportError(ValueError):
    pass


@dataclass
class ExportManifest:
    source: str                      # informational source-model identifier
    mapping: dict                    # portable name -> {"source": str, "dims": [..]}
    spec: dict                       # target model-spec document (copied opaquely)
    fingerprint: str
    normalization: dict | None = None

    @staticmethod
    def load(path) -> "ExportManifest":
        with open(path) as f:
            doc = json.load(f)
        for key in ("source", "mapping", "spec", "fingerprint"):
            if key not in doc:
                raise ExportError(f"manifest missing {key!r}")
        m = ExportManifest(source=doc["source"], mapping=doc["mapping"],
                           spec=doc["spec"], fingerprint=doc["fingerprint"],
                           normalization=doc.get("normalization"))
        m.validate()
        return m

    def validate(self):
        seen = {}
        for portable, entry in self.mapping.items():
            if not isinstance(entry, dict) or "source" not in entry or "dims" not in entry:
                raise ExportError(f"mapping entry {portable!r} needs source and dims")
            src = entry["source"]
            if src in seen:
                raise ExportError(
                    f"source tensor {src!r} mapped twice ({seen[src]!r} and {portable!r})")
            seen[src] = portable
        if fmt.spec_fingerprint(self.spec) != self.fingerprint:
            raise ExportError("manifest fingerprint does not match its spec document")


def load_source_state(path) -> dict:
    """Read a torch checkpoint (state_dict or {'state_dict': ...})."""
    import torch

    obj = torch.load(path, map_location="cpu", weights_only=True)
    if isinstance(obj, dict) and "state_dict" in obj and isinstance(obj["state_dict"], dict):
        obj = obj["state_dict"]
    if not isinstance(obj, dict):
        raise ExportError(f"{path}: checkpoint is not a state dict")
    return obj


def export(source_path, manifest: ExportManifest, out_path) -> dict:
    """Write the portable file; refuses on missing tensors, dim mismatches,
    or non-float32 sources.  Returns the written header."""
    state = load_source_state(source_path)
    tensors: dict[str, np.ndarray] = {}
    for portable, entry in manifest.mapping.items():
        src = entry["source"]
        if src not in state:
            raise ExportError(f"source tensor {src!r} missing from checkpoint")
        t = state[src]
        arr = t.detach().numpy() if hasattr(t, "detach") else np.asarray(t)
        if arr.dtype != np.float32:
            raise ExportError(f"{src!r}: dtype {arr.dtype} is not 32-bit float")
        if list(arr.shape) != list(entry["dims"]):
            raise ExportError(
                f"{src!r}: dims {list(arr.shape)} do not match manifest {entry['dims']}")
        tensors[portable] = arr
    header = {
        "kind": "model-weights",
        "spec": manifest.spec,
        "fingerprint": manifest.fingerprint,
        "export": {"source": manifest.source,
                   "mapping_sha": fmt.spec_fingerprint(manifest.mapping)},
    }
    if manifest.normalization:
        header["export"]["normalization"] = manifest.normalization
    fmt.write(out_path, header, tensors)
    return header


@dataclass
class VerifyReport:
    per_tensor_max_diff: dict
    missing: list
    fingerprint_ok: bool

    @property
    def passed(self) -> bool:
        return (self.fingerprint_ok and not self.missing
                and all(d == 0.0 for d in self.per_tensor_max_diff.values()))


def verify(portable_path, source_path, manifest: ExportManifest) -> VerifyReport:
    """Per-tensor max absolute difference between the portable file and the
    source checkpoint; refuses when the file's fingerprint mismatches."""
    header, tensors = fmt.read(portable_path)
    if header.get("fingerprint") != manifest.fingerprint \
            or fmt.spec_fingerprint(header.get("spec", {})) != header.get("fingerprint"):
        raise ExportError("portable file fingerprint mismatch; verification refused")
    state = load_source_state(source_path)
    diffs: dict = {}
    missing: list = []
    for portable, entry in manifest.mapping.items():
        if portable not in tensors:
            missing.append(portable)
            continue
        t = state[entry["source"]]
        arr = t.detach().numpy() if hasattr(t, "detach") else np.asarray(t)
        a = tensors[portable]
        if a.shape != arr.shape:
            diffs[portable] = float("inf")
        else:
            diffs[portable] = float(np.abs(a - arr).max()) if a.size else 0.0
    return VerifyReport(per_tensor_max_diff=diffs, missing=missing,
                        fingerprint_ok=True)
