"""Train a SNAP net on the toy blobs task and score it against the union of attacks.

Run from the repository root:  python3 demos/01_toy_union.py
"""
from pathlib import Path

from snaplab import attacks, cli, config, training

ROOT = Path(__file__).resolve().parents[1]
cfg = config.load_config(ROOT / "configs" / "toy.ini")

train, test = cli.load_datasets(cfg)
print(f"{len(train)} training points, {len(test)} test points, D={train.dim}")

net = cli.build_net(cfg, train)
print("noise:", net.noise.dist, "P =", net.noise.p_noise)

result = training.train(net, train, cfg.train_spec(), cfg.seed)
for row in result.history:
    print(f"epoch {row['epoch']:2d}  loss {row['train_loss']:.3f}  sigma^2 max {row['sigma_max']:.4f}")
print("noise updates after epochs", result.updates)

# variances no longer uniform once the update epochs have run
s2 = result.net.noise.sigma ** 2
print("sum sigma^2 =", round(float(s2.sum()), 6), " largest share =", round(float(s2.max() / s2.sum()), 3))

rep = attacks.eval_union(result.net, test.inputs, test.labels, cfg.attack_specs(),
                         cfg["eval"]["n0_samples"], cfg.seed)
for name, acc in rep.as_dict().items():
    print(f"A_{name:5s} {acc:.3f}")
