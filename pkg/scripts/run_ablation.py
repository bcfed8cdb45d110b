"""Run the 16-cell stage ablation twice with one seed and check the tables match.

    python3 scripts/run_ablation.py --out runs/ablation [--seed 0] [--config FILE]
"""
import argparse
import sys
import time
from pathlib import Path

from ffsv.cli import main


def run(out: Path, seed: int, config: str | None) -> tuple[int, float]:
    args = ["ablate", "--out", str(out), "--seed", str(seed), "-q"]
    if config:
        args += ["--config", config]
    t0 = time.perf_counter()
    code = main(args)
    return code, time.perf_counter() - t0


def rows(path: Path):
    lines = path.read_text().splitlines()
    head = lines[0].split("\t")
    return {tuple(r[:4]): dict(zip(head, r)) for r in (line.split("\t") for line in lines[1:])}


def cli():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/ablation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    a = p.parse_args()
    out = Path(a.out)
    results = [run(out / name, a.seed, a.config) for name in ("first", "second")]
    table = (out / "first" / "ablation.txt").read_text()
    print(table, end="")
    cells = rows(out / "first" / "ablation.tsv")
    off, on = float(cells[("0",) * 4]["eer"]), float(cells[("1",) * 4]["eer"])
    same = (out / "first" / "ablation.tsv").read_bytes() == (out / "second" / "ablation.tsv").read_bytes()
    print(f"exit codes: {[c for c, _ in results]}")
    print(f"all-off EER {100 * off:.4f}%  all-on EER {100 * on:.4f}%  all-on <= all-off: {on <= off}")
    print(f"rerun identical: {same}")
    print(f"runtime: {sum(t for _, t in results) / 60:.1f} min for both runs")
    return 0 if all(c == 0 for c, _ in results) and same else 1


if __name__ == "__main__":
    sys.exit(cli())
