"""How the seen-score floor beta trades seen for unseen detections.

Seen predictions below beta are dropped before the per-image budget of 100
is filled, so raising beta leaves more of the budget to unseen categories.
Any beta above 1 removes seen predictions entirely.
"""

from zsdet import InferConfig, SynthConfig, TaskMode, TrainConfig, generate, train_heads
from zsdet.ablation import run_eval

# Crowded images make the budget bind.
data = generate(SynthConfig(seed=1, sigma=0.1, objects_per_image=6, proposals_per_object=8,
                            background_proposals=12))
params = train_heads(data.proposals_train, data.gt_train, data.embeddings, data.split,
                     TrainConfig())

print(f"{'beta':>6}{'seen dets':>11}{'seen mAP':>10}{'unseen mAP':>12}{'unseen R@100':>14}")
for beta in (0.0, 0.05, 0.1, 0.2, 0.3, 1.1):
    dets, rep = run_eval(data, params, InferConfig(mode=TaskMode.GZSD, beta=beta, max_detections=20))
    seen = sum(d.origin == "seen" for d in dets)
    print(f"{beta:>6.2f}{seen:>11}{rep.map_seen:>10.3f}{rep.map_unseen:>12.3f}"
          f"{rep.recall_unseen[0.5]:>14.3f}")
