"""End-to-end demo on the bundled fixture: train, evaluate, interpret,
permute, analyze. Equivalent to chaining the CLI subcommands."""

import argparse
from pathlib import Path

from tsaliency.cli import main as cli


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default="fixtures/demo.cfg")
    parser.add_argument("--out", default="runs/demo")
    parser.add_argument("--seed", type=int)
    args = parser.parse_args()

    train_args = ["train", "--config", args.config, "--out", args.out]
    if args.seed is not None:
        train_args += ["--seed", str(args.seed)]
    for stage_args in (
        train_args,
        ["evaluate", "--run", args.out],
        ["interpret", "--run", args.out, "--jobs", "2"],
        ["permute", "--run", args.out],
        ["analyze", "--run", args.out],
    ):
        code = cli(stage_args)
        if code != 0:
            raise SystemExit(code)
    run = Path(args.out)
    print("\nartifacts:")
    for name in ("metrics.csv", "permutation.csv", "feature_importance.csv"):
        print(f"--- {name}")
        print((run / name).read_text().rstrip())


if __name__ == "__main__":
    main()
