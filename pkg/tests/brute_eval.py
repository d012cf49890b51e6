"""Slow, loop-only reference evaluator used as an oracle for zsdet.metrics.

Written from the COCO protocol description without reusing any package
code: pure-Python IoU, greedy matching, 101-point interpolated AP and
per-image Recall@k.
"""


def iou(a, b):
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def match(dets, gts, thr):
    """dets: list of (image, score, box); gts: list of (image, box).

    Returns true-positive flags in visiting order.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][1], i))
    used = [False] * len(gts)
    flags = []
    for i in order:
        img, _, box = dets[i]
        best, best_j = -1.0, None
        for j, (gimg, gbox) in enumerate(gts):
            if used[j] or gimg != img:
                continue
            v = iou(box, gbox)
            if v >= thr and v > best:
                best, best_j = v, j
        if best_j is None:
            flags.append(False)
        else:
            used[best_j] = True
            flags.append(True)
    return flags


def ap(dets, gts, thr):
    flags = match(dets, gts, thr)
    tp = fp = 0
    prec, rec = [], []
    for f in flags:
        tp += f
        fp += not f
        prec.append(tp / (tp + fp))
        rec.append(tp / len(gts))
    total = 0.0
    for step in range(101):
        r = step / 100
        cands = [p for p, q in zip(prec, rec) if q >= r]
        total += max(cands) if cands else 0.0
    return total / 101


def truncate(dets_by_cat, k):
    """Keep the k best detections per image across all categories."""
    flat = []
    for cat, dets in dets_by_cat.items():
        for idx, d in enumerate(dets):
            flat.append((d[0], -d[1], cat, idx, d))
    per_image = {}
    for row in flat:
        per_image.setdefault(row[0], []).append(row)
    out = {cat: [] for cat in dets_by_cat}
    for rows in per_image.values():
        rows.sort(key=lambda r: (r[1], r[2], r[3]))
        for r in rows[:k]:
            out[r[2]].append(r[4])
    return out


def evaluate(dets_by_cat, gts_by_cat, thr=0.5, k=100, categories=None):
    """Mean AP and mean Recall@k over ``categories`` that have ground truth.

    Truncation to k per image runs over every category in ``dets_by_cat``.
    """
    kept = truncate(dets_by_cat, k)
    if categories is None:
        categories = list(gts_by_cat)
    aps, recalls = [], []
    for cat in categories:
        gts = gts_by_cat.get(cat, [])
        if not gts:
            continue
        dets = kept.get(cat, [])
        aps.append(ap(dets, gts, thr))
        recalls.append(sum(match(dets, gts, thr)) / len(gts))
    return sum(aps) / len(aps), sum(recalls) / len(recalls)
