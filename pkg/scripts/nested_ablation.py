"""Four-variant ablation on the bracket-depth task, where hierarchy should matter.

Writes the usual ablation directory (one run per variant plus ablation.txt).

    python scripts/nested_ablation.py --steps 600 --out runs/nested
"""
import argparse
from dataclasses import replace
from pathlib import Path

from unet_transformer.cli import format_table, run_ablation
from unet_transformer.config import DataConfig, RunConfig
from unet_transformer.models import ModelConfig
from unet_transformer.train import TrainConfig


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--steps", type=int, default=600)
    p.add_argument("--d-model", type=int, default=32)
    p.add_argument("--max-len", type=int, default=24)
    p.add_argument("--pool", type=int, default=4096)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/nested-ablation")
    args = p.parse_args()

    cfg = RunConfig(
        model=ModelConfig(d_model=args.d_model),
        train=TrainConfig(lr=1e-3, steps=args.steps, batch_size=64, eval_interval=50, patience=6, seed=args.seed),
        data=DataConfig(spec=f"synth:nested:len={args.max_len}:n={args.pool}"),
    )
    out = Path(args.out)
    rows = run_ablation(cfg, out)
    table = format_table(rows)
    print(table)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.txt").write_text(table + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
