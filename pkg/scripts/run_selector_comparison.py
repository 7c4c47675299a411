"""Selection-strategy comparison on synthetic claim sets.

Reproduces the shape of the headline selector experiment without any
model backend: claim/answer support graphs are drawn from a calibrated
generative model, each strategy scores and repairs claims under a fixed
verification budget, and pooled claim-level F1 is reported per budget.

    python3 scripts/run_selector_comparison.py
    python3 scripts/run_selector_comparison.py --questions 200 --seeds 0 1 2
"""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from simulrag.evaluation import selector_study


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--questions", type=int, default=100)
    parser.add_argument("--budgets", type=float, nargs="+", default=[0.15, 0.25, 0.45])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument("--metric", default="closeness")
    parser.add_argument("--out", help="write the full report JSON here")
    args = parser.parse_args()

    report = selector_study(
        n_questions=args.questions,
        budgets=tuple(args.budgets),
        seeds=tuple(args.seeds),
        metric=args.metric,
    )

    means = report["mean_f1"]
    strategies = sorted(means)
    print("mean pooled F1 over", len(args.seeds), "seeds,", args.questions, "questions")
    print("budget".ljust(10) + "".join(s.rjust(14) for s in strategies))
    for budget in args.budgets:
        row = "".join(f"{means[s][budget]:>14.4f}" for s in strategies)
        print(f"{budget:<10g}" + row)

    if args.out:
        Path(args.out).write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        print("report written to", args.out)


if __name__ == "__main__":
    main()
