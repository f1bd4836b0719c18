"""Train UNET and TRANSFORMER on the copy task and report held-out exact-copy accuracy.

    python scripts/copy_smoke.py --steps 400 --d-model 32
"""
import argparse
import time

import numpy as np

from unet_transformer import ModelConfig, TrainConfig, build_model, greedy_decode, load_data, make_rng, train_loop


def run(variant: str, args) -> None:
    data = load_data(f"synth:copy:len={args.max_len}:n={args.pool}:vocab={args.vocab}", seed=args.seed)
    cfg = ModelConfig(variant=variant, src_vocab=len(data.src_vocab), tgt_vocab=len(data.tgt_vocab), d_model=args.d_model)
    model = build_model(cfg, make_rng([args.seed, 0]))
    t0 = time.perf_counter()
    train_cfg = TrainConfig(lr=args.lr, steps=args.steps, batch_size=args.batch_size, eval_interval=50,
                            patience=100, seed=args.seed)

    def show(row):
        if row["split"] == "valid":
            print(f"  {variant:<12} step {row['step']:>5}  valid ce {row['ce']:.4f}", flush=True)

    result = train_loop(model, data, train_cfg, on_eval=show)
    seen = {tuple(e.src) for e in data.train}
    held_out = [e for e in data.test if tuple(e.src) not in seen][: args.held_out]
    exact = np.mean([greedy_decode(model, e.src) == e.src for e in held_out])
    print(f"{variant}: best valid ce {result.best_valid:.4f} (step {result.best_step}), "
          f"exact copies {exact:.1%} of {len(held_out)} held-out, {time.perf_counter() - t0:.0f}s")


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--variants", nargs="+", default=["unet", "transformer"])
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--d-model", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--pool", type=int, default=4096, help="training sequences to sample batches from")
    p.add_argument("--vocab", type=int, default=20)
    p.add_argument("--max-len", type=int, default=10)
    p.add_argument("--held-out", type=int, default=200)
    p.add_argument("--seed", type=int, default=1)
    args = p.parse_args()
    for variant in args.variants:
        run(variant, args)


if __name__ == "__main__":
    main()
