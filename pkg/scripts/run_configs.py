"""Run every config in scripts/configs through the CLI, writing reports to an output directory.

    python3 scripts/run_configs.py --out reports --threads 4
"""

import argparse
from pathlib import Path

from vanna_lab.cli import load_config, run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="reports")
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    worst = 0
    for cfg_path in sorted((Path(__file__).parent / "configs").glob("*.cfg")):
        cfg = load_config(str(cfg_path))
        target = out / Path(cfg.output_path).name
        cfg = load_config(str(cfg_path), output=str(target))
        code = run(cfg, args.threads)
        worst = max(worst, code)
        print(f"{cfg_path.name:20s} exit {code}  -> {target}")
    return worst


if __name__ == "__main__":
    raise SystemExit(main())
