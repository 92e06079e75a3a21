#!/usr/bin/env python3
"""Recompute the full comparison analysis from the bundled reference table.

Prints per-group summaries, Kruskal-Wallis results, win counts, and the
one-sided Wilcoxon table for both retrieval variants against the four
baselines, and writes the delimited report bundle. Runs entirely from the
packaged fixture; no backends needed.
"""

import argparse
import sys
from pathlib import Path

from sprag import evaluation, report, stats
from sprag.evaluation import BASELINE_METHODS, GROUP_ORDER, RAG_METHODS


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("reference-report"))
    args = ap.parse_args()

    table = evaluation.load_reference_table()
    grouping = evaluation.reference_grouping()
    by_group = {g: sorted(p for p, gg in grouping.items() if gg == g) for g in GROUP_ORDER}

    print("== group summaries (mean MAE / sample SD / projects) ==")
    for method in RAG_METHODS:
        for s in evaluation.group_summary(table.method_scores(method), grouping):
            print(f"  {method:10s} {s.label:6s} {s.mean_mae:5.2f} / {s.sd_mae:4.2f} / {s.project_count}")

    print("\n== Kruskal-Wallis across size groups ==")
    for method in RAG_METHODS:
        groups = [[table.mae(p, method) for p in by_group[g]] for g in GROUP_ORDER]
        r = stats.kruskal_wallis(groups)
        print(f"  {method:10s} H = {r.statistic:.2f}, p = {r.p_value:.2f}")

    print("\n== wins against baselines (strict <) ==")
    header = "  {:10s} {:9s} " + " ".join(f"{g:>6s}" for g in GROUP_ORDER)
    print(header.format("method", "baseline"))
    for method in RAG_METHODS:
        counts = evaluation.win_counts(table.method_scores(method), table, grouping)
        for baseline in BASELINE_METHODS:
            row = " ".join(f"{counts[(method, baseline, g)]:6d}" for g in GROUP_ORDER)
            print(f"  {method:10s} {baseline:9s} {row}")

    print("\n== Wilcoxon signed-rank p-values (alternative: less) ==")
    print(header.format("method", "baseline"))
    for method in RAG_METHODS:
        for baseline in BASELINE_METHODS:
            cells = []
            for g in GROUP_ORDER:
                labels = by_group[g]
                samples = stats.PairedSamples(
                    tuple(labels),
                    tuple(table.mae(p, method) for p in labels),
                    tuple(table.mae(p, baseline) for p in labels),
                )
                cells.append(f"{stats.wilcoxon_signed_rank(samples, 'less').p_value:.4f}")
            print(f"  {method:10s} {baseline:9s} " + " ".join(f"{c:>6s}" for c in cells))

    paths = report.write_report(args.out, table, grouping)
    print(f"\nreport bundle written to {args.out}:")
    for name, path in sorted(paths.items()):
        print(f"  {name}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
