"""Where do adversarial perturbations live?

Craft l-inf, l2 and l1 perturbations against a vanilla net and a PGD-trained
net, build an SVD basis from the l2 set, and count how many directions carry
at least 10% of the peak mean squared projection.
"""
from pathlib import Path

from snaplab import analysis, cli, config, training
from snaplab.rng import Rng

ROOT = Path(__file__).resolve().parents[1]
CONFIG = ROOT / "configs" / "digits.ini"
# plain nets, and 20 attack steps keep the demo quick
OVERRIDES = ["noise.p_noise=0", "attack.steps=20"]
cfg = config.load_config(CONFIG, OVERRIDES)
train, test = cli.load_datasets(cfg)

nets = {}
for base in ("vanilla", "pgd"):
    c = config.load_config(CONFIG, OVERRIDES + [f"train.base={base}"])
    nets[base] = training.train(cli.build_net(c, train), train, c.train_spec(), c.seed).net

specs = [s.with_(restarts=1) for s in cfg.attack_specs()]
van, rob = analysis.subspace_experiment(nets["vanilla"], nets["pgd"], test.inputs, test.labels,
                                        specs, Rng(0))
print("family  vanilla  pgd")
for fam in analysis.FAMILIES:
    print(f"{fam:6s}  {van.effective_dim[fam]:7d}  {rob.effective_dim[fam]:3d}")
