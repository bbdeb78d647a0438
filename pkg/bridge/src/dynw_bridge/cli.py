"""Command-line surface: export / verify."""

from __future__ import annotations

import argparse
import sys

from .bridge import ExportError, ExportManifest, export, verify
from .dynw_format import FormatError


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="dynw-bridge",
                                description="checkpoint -> portable DYNW converter")
    sub = p.add_subparsers(dest="command", required=True)
    pe = sub.add_parser("export", help="convert a checkpoint")
    pe.add_argument("--source", required=True, help="torch checkpoint path")
    pe.add_argument("--manifest", required=True, help="export manifest JSON")
    pe.add_argument("--out", required=True, help="output .dynw path")
    pv = sub.add_parser("verify", help="diff a portable file against its source")
    pv.add_argument("--file", required=True, help="portable .dynw path")
    pv.add_argument("--source", required=True, help="torch checkpoint path")
    pv.add_argument("--manifest", required=True, help="export manifest JSON")
    args = p.parse_args(argv)
    try:
        manifest = ExportManifest.load(args.manifest)
        if args.command == "export":
            header = export(args.source, manifest, args.out)
            print(f"exported {len(manifest.mapping)} tensors "
                  f"(fingerprint {header['fingerprint'][:12]}...) -> {args.out}")
            return 0
        report = verify(args.file, args.source, manifest)
        worst = max(report.per_tensor_max_diff.values(), default=0.0)
        for name in report.missing:
            print(f"MISSING {name}")
        bad = {k: v for k, v in report.per_tensor_max_diff.items() if v != 0.0}
        for name, d in sorted(bad.items()):
            print(f"DIFF {name} max|diff|={d:g}")
        print(f"verify: {'PASS' if report.passed else 'FAIL'} "
              f"({len(report.per_tensor_max_diff)} tensors, worst diff {worst:g})")
        return 0 if report.passed else 1
    except (ExportError, FormatError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
