"""UNET with decoder cross-attention on the final encoder output vs. on every encoder level.

    python scripts/cross_attention_compare.py --steps 400
"""
import argparse

from unet_transformer import ModelConfig, TrainConfig, build_model, load_data, make_rng, train_loop


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--data", default="synth:reverse:len=16:n=4096:vocab=24")
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--d-model", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    data = load_data(args.data, seed=args.seed)
    train_cfg = TrainConfig(lr=1e-3, steps=args.steps, batch_size=64, eval_interval=50, patience=100, seed=args.seed)
    for per_layer in (False, True):
        cfg = ModelConfig(variant="unet", src_vocab=len(data.src_vocab), tgt_vocab=len(data.tgt_vocab),
                          d_model=args.d_model, per_layer_cross_attention=per_layer)
        model = build_model(cfg, make_rng([args.seed, 0]))
        result = train_loop(model, data, train_cfg)
        label = "per-layer levels" if per_layer else "final output"
        print(f"{label:<18} params {model.num_parameters():>8}  best valid ce {result.best_valid:.4f} "
              f"(step {result.best_step})  batches {result.batch_digest[:12]}")


if __name__ == "__main__":
    main()
