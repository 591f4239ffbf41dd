"""render-figures: turn experiment CSV directories into figures."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .render import RECIPES, render
from .schema import SchemaError


def detect_suite(in_dir: Path) -> str:
    manifest = in_dir / "manifest.json"
    if manifest.exists():
        suite = json.loads(manifest.read_text()).get("suite", "")
        if suite in RECIPES:
            return suite
    return "main"


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="render-figures", description="Render polar-lab CSV outputs into figures."
    )
    parser.add_argument("--in", dest="in_dir", required=True, help="CSV input directory")
    parser.add_argument("--out", dest="out_dir", required=True, help="image output directory")
    parser.add_argument(
        "--suite",
        choices=sorted(RECIPES),
        help="which recipe to render (default: from manifest.json, else main)",
    )
    args = parser.parse_args(argv)
    in_dir = Path(args.in_dir)
    suite = args.suite or detect_suite(in_dir)
    try:
        summary = render(RECIPES[suite], in_dir, args.out_dir)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    for path in summary["outputs"]:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
