import argparse
import csv
import hashlib
import json
import subprocess
import sys
import tempfile
import time
from pathlib import Path
from typing import Any, Dict, List


def hash_csvs(out_dir: Path) -> Dict[str, str]:
    return {
        str(p.relative_to(out_dir)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(out_dir.rglob("*.csv"))
    }


def read_acceptance(out_dir: Path) -> List[List[str]]:
    path = out_dir / "acceptance.csv"
    if not path.exists():
        return []
    with path.open("r", encoding="utf-8", newline="") as f:
        # drop the seconds column, which is wall-clock
        return [row[:4] for row in csv.reader(f)]


def run_cli(args: List[str], out_dir: Path) -> Dict[str, Any]:
    cmd = [sys.executable, "-m", "app.main", *args, "--out", str(out_dir)]
    t0 = time.perf_counter()
    proc = subprocess.run(cmd, capture_output=True, text=True)
    return {
        "cmd": " ".join(cmd[1:]),
        "exit_code": proc.returncode,
        "seconds": round(time.perf_counter() - t0, 2),
        "stderr_tail": proc.stderr.strip().splitlines()[-5:],
        "csv_sha256": hash_csvs(out_dir) if out_dir.exists() else {},
        "acceptance": read_acceptance(out_dir),
    }


def main() -> None:
    parser = argparse.ArgumentParser(description="Reproducibility audit: identical seeds must give identical CSVs.")
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--scale", type=str, default="quick")
    parser.add_argument("--out", type=str, default="eval/results.json")
    args = parser.parse_args()

    out_path = Path(args.out)
    converge = [
        "converge", "--model", "bm", "--dim", "2", "--grid-points", "64", "--dirs", "180",
        "--n-schedule", "100,1000", "--reps", "8", "--seed", str(args.seed),
    ]

    runs: Dict[str, Dict[str, Any]] = {}
    with tempfile.TemporaryDirectory(prefix="hullshape-eval-") as tmp:
        root = Path(tmp)
        runs["converge_a"] = run_cli(converge + ["--threads", "1"], root / "converge_a")
        runs["converge_b"] = run_cli(converge + ["--threads", "1"], root / "converge_b")
        runs["converge_threads"] = run_cli(converge + ["--threads", "4"], root / "converge_threads")
        runs["repro_a"] = run_cli(["repro", "--scale", args.scale, "--seed", str(args.seed)], root / "repro_a")
        runs["repro_b"] = run_cli(["repro", "--scale", args.scale, "--seed", str(args.seed)], root / "repro_b")

    metrics = {
        "runs": len(runs),
        "all_exit_zero": all(r["exit_code"] == 0 for r in runs.values()),
        "same_seed_identical": runs["converge_a"]["csv_sha256"] == runs["converge_b"]["csv_sha256"],
        "threads_identical": runs["converge_a"]["csv_sha256"] == runs["converge_threads"]["csv_sha256"],
        "repro_identical": runs["repro_a"]["acceptance"] == runs["repro_b"]["acceptance"]
        and runs["repro_a"]["exit_code"] == runs["repro_b"]["exit_code"],
        "repro_passed": runs["repro_a"]["exit_code"] == 0,
    }

    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps({"metrics": metrics, "runs": runs}, indent=2), encoding="utf-8")

    print("Eval complete ✅")
    print(json.dumps(metrics, indent=2))
    print(f"Wrote: {out_path}")


if __name__ == "__main__":
    main()
