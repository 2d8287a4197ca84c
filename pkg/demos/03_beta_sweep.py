"""
Sweeping beta
=============

beta = 0 trains every modality as if alone and averages the losses; beta = 1
fully discounts a modality wherever another one is already right. The sweep
below uses a smaller copy of the synthetic preset and three seeds per value.
"""

from mulfusion.experiment import load_config
from mulfusion.sweep import sweep

cfg = load_config("synthetic-weak").with_overrides(**{
    "data.synthetic.n_samples": 2000,
    "optimizer.max_epochs": 25,
    "evaluation.single_modality_baselines": False,
})

result = sweep(cfg, "beta", [0.0, 0.25, 0.5, 0.75, 1.0], seeds=[0, 1, 2])
print(result.to_csv(), end="")

# Large beta can stall training here: once one head is confident on a class,
# the others receive almost no gradient for it, and on this data they may
# never pick up their own modality.
