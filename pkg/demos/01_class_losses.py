"""
How the multiplicative loss weighs each modality
=================================================

Two modalities look at the same sample. The first is confident and right, the
second is confused. We print the per-model down-weighting factors and the
class losses for a few values of beta.
"""

import numpy as np

from mulfusion.fusion import mul_class_losses, predict_argmin, q_factor

p_good = np.array([0.9, 0.1])   # modality 0: confident in class 0
p_weak = np.array([0.45, 0.55])  # modality 1: barely leaning the wrong way

for beta in (0.0, 0.5, 1.0):
    L = mul_class_losses([p_good, p_weak], beta).data
    # q for the weak model on class 0: how badly the *other* model does there
    q_weak = q_factor([p_good, p_weak], 0, 1, beta)
    print(f"beta={beta:.1f}  class losses={np.round(L, 4)}  "
          f"q(weak, class 0)={q_weak:.3f}  prediction={predict_argmin(L)}")

# With beta=0 the weak model's log-loss counts in full. As beta grows its
# contribution on class 0 shrinks to (1 - 0.9)^beta, because the good model
# already covers that class.
