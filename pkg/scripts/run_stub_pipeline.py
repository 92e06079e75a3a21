#!/usr/bin/env python3
"""End-to-end offline demo: ingest -> sweep -> report, all on stub backends.

Creates a synthetic project under --workdir, runs the full 12-cell
(k, temperature) grid with the hash embedder and the median-policy
generator, and writes the report bundle. Rerunning resumes: persisted
cells are skipped.
"""

import argparse
import subprocess
import sys
from pathlib import Path

from sprag.cli import main as sprag_main


def run(argv: list[str]) -> None:
    code = sprag_main(argv)
    if code != 0:
        sys.exit(code)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", type=Path, default=Path("demo-run"))
    ap.add_argument("--n", type=int, default=120)
    args = ap.parse_args()

    workdir = args.workdir
    workdir.mkdir(parents=True, exist_ok=True)
    csv_path = workdir / "DEMO.csv"
    config_path = workdir / "sprag.yaml"
    config_path.write_text(
        "\n".join(
            [
                f"dataset_dir: {workdir / 'corpora'}",
                f"results_dir: {workdir / 'results'}",
                f"cache_dir: {workdir / 'cache'}",
                "embedding: {stub: true, stub_dims: 64, model_id: stub-embed}",
                "generator: {stub: true, model_id: stub-gen}",
            ]
        )
        + "\n"
    )

    subprocess.run(
        [sys.executable, str(Path(__file__).parent / "make_demo_project.py"),
         "--n", str(args.n), "--out", str(csv_path)],
        check=True,
    )
    base = ["--config", str(config_path)]
    run(base + ["ingest", str(csv_path), "--project", "DEMO"])
    run(base + ["split", "--project", "DEMO"])
    run(base + ["sweep", "--project", "DEMO"])
    run(base + ["evaluate"])
    run(base + ["report", "--out", str(workdir / "report")])
    print(f"\ndone; see {workdir / 'report'} and {workdir / 'results'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
