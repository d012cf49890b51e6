"""Train embedding-aware heads on a synthetic set and detect unseen categories.

Run with ``python3 demos/quickstart.py``; takes about half a minute.
"""

from zsdet import InferConfig, SynthConfig, TaskMode, TrainConfig, evaluate, generate, predict, train_heads
from zsdet.metrics import classification_accuracy

# A planted linear world: proposal features are a fixed map of the category
# embedding plus a box-offset code. Unseen categories only occur at test time.
data = generate(SynthConfig(seed=1))
print("seen:", ", ".join(data.split.seen))
print("unseen:", ", ".join(data.split.unseen))

# Only the head matrices are learned, from seen-category annotations.
params = train_heads(data.proposals_train, data.gt_train, data.embeddings, data.split,
                     TrainConfig())

# The unseen classifier reuses W^cls with the unseen embedding rows.
acc = classification_accuracy(data.proposals_test, data.gt_test, params, data.embeddings,
                              data.split.unseen)
print(f"unseen top-1 accuracy on object proposals: {acc:.3f}")

for mode in (TaskMode.ZSD, TaskMode.GZSD):
    cfg = InferConfig(mode=mode)
    dets = predict(data.proposals_test, params, data.embeddings, data.split, cfg,
                   data.gt_test.images)
    report = evaluate(dets, data.gt_test, data.split, mode)
    line = f"{mode.value}: unseen mAP {report.map_unseen:.3f}"
    if report.map_seen is not None:
        line += f", seen mAP {report.map_seen:.3f}, HM {report.hm_map:.3f}"
    print(line)
