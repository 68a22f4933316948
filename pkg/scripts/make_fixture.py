"""Regenerate the bundled synthetic fixture CSV (500 rows x 3 features)."""

import argparse
from pathlib import Path

from tsaliency.synthetic import fixture_frame, write_csv


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="fixtures/synthetic_500.csv")
    parser.add_argument("--rows", type=int, default=500)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()
    frame = fixture_frame(args.rows, seed=args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_csv(frame, args.out, header=True)
    print(f"wrote {frame.n_rows} x {frame.n_features} series to {args.out}")


if __name__ == "__main__":
    main()
