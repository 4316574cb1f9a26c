"""Train/test splitting, top-K ranking metrics and non-factorized baselines.

Everything operates on raw event tuples ``(context, item, y, alpha)`` in file
order, so the splits are reproducible from the input file alone. An item is
relevant for a context iff the pair occurs in the held-out positives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SPLIT_METHODS = ("leave_last_out", "cutoff_time", "cold_start_users")


def split_events(events, method, fraction=0.2, seed=0):
    """Split raw events into (train, test, info).

    leave_last_out: the last event of every context with >= 2 events is held
    out. cutoff_time: the trailing ``fraction`` of the file is held out (the
    file order stands in for time, since the interaction format carries no
    timestamps). cold_start_users: a seeded ``fraction`` of the contexts
    moves entirely to test. Held-out events whose item never occurs in train
    are dropped; cold_start_users additionally keeps unseen contexts, which
    scorers must handle.
    """
    if method not in SPLIT_METHODS:
        raise ValueError(f"unknown split method {method!r}")
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    if method == "leave_last_out":
        last = {}
        for pos, ev in enumerate(events):
            last[ev[0]] = pos
        counts = {}
        for ev in events:
            counts[ev[0]] = counts.get(ev[0], 0) + 1
        test_pos = {p for c, p in last.items() if counts[c] >= 2}
        train = [ev for p, ev in enumerate(events) if p not in test_pos]
        test = [ev for p, ev in enumerate(events) if p in test_pos]
    elif method == "cutoff_time":
        cut = int(round(len(events) * (1.0 - fraction)))
        cut = max(1, min(cut, len(events) - 1))
        train, test = list(events[:cut]), list(events[cut:])
    else:
        contexts = []
        seen = set()
        for ev in events:
            if ev[0] not in seen:
                seen.add(ev[0])
                contexts.append(ev[0])
        rng = np.random.default_rng(seed)
        n_test = max(1, int(round(len(contexts) * fraction)))
        held = set(rng.choice(len(contexts), size=n_test, replace=False).tolist())
        held_keys = {contexts[j] for j in held}
        train = [ev for ev in events if ev[0] not in held_keys]
        test = [ev for ev in events if ev[0] in held_keys]
    train_items = {ev[1] for ev in train}
    kept = [ev for ev in test if ev[1] in train_items]
    info = {
        "method": method,
        "train_events": len(train),
        "test_events": len(kept),
        "dropped_unseen_item": len(test) - len(kept),
    }
    if method != "cold_start_users":
        train_ctx = {ev[0] for ev in train}
        before = len(kept)
        kept = [ev for ev in kept if ev[0] in train_ctx]
        info["dropped_unseen_context"] = before - len(kept)
        info["test_events"] = len(kept)
    if not train or not kept:
        raise ValueError(f"{method} split produced an empty side")
    return train, kept, info


def rank_top_k(scores, item_keys, exclude, k):
    """Top-k item keys by descending score; ties break by ascending item id.

    Item id order is the position in ``item_keys``. ``exclude`` keys are
    filtered before ranking (the caller passes the context's training items).
    """
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) != len(item_keys):
        raise ValueError("one score required per item")
    order = np.lexsort((np.arange(len(scores)), -scores))
    out = []
    for j in order:
        if item_keys[j] in exclude:
            continue
        out.append(item_keys[j])
        if len(out) == k:
            break
    return out


def recall_at_k(recommended, relevant):
    """Fraction of the relevant items retrieved: hits / |relevant|."""
    if not relevant:
        raise ValueError("relevant set must be non-empty")
    hits = sum(1 for key in recommended if key in relevant)
    return hits / len(relevant)


def ndcg_at_k(recommended, relevant, k):
    """Binary-gain NDCG: DCG of the hits over the best attainable DCG."""
    if not relevant:
        raise ValueError("relevant set must be non-empty")
    dcg = 0.0
    for rank, key in enumerate(recommended[:k], start=1):
        if key in relevant:
            dcg += 1.0 / math.log2(rank + 1)
    ideal = sum(1.0 / math.log2(r + 1)
                for r in range(1, min(len(relevant), k) + 1))
    return dcg / ideal


def popularity_scorer(train_events):
    """Scores every context identically by training interaction counts."""
    counts = {}
    for ev in train_events:
        counts[ev[1]] = counts.get(ev[1], 0) + 1

    def scorer(context_key, item_keys):
        return np.array([counts.get(key, 0) for key in item_keys], dtype=np.float64)

    return scorer


def coview_scorer(train_events):
    """Scores by co-occurrence with the context's last training item.

    The transition counts pair each training item with the next item of the
    same context in file order. Contexts without usable transitions fall
    back to popularity.
    """
    prev = {}
    trans = {}
    last_item = {}
    counts = {}
    for ev in train_events:
        c, i = ev[0], ev[1]
        counts[i] = counts.get(i, 0) + 1
        if c in prev:
            trans.setdefault(prev[c], {})
            trans[prev[c]][i] = trans[prev[c]].get(i, 0) + 1
        prev[c] = i
        last_item[c] = i

    def scorer(context_key, item_keys):
        source = last_item.get(context_key)
        table = trans.get(source) if source is not None else None
        if table:
            return np.array([table.get(key, 0) for key in item_keys],
                            dtype=np.float64)
        return np.array([counts.get(key, 0) for key in item_keys],
                        dtype=np.float64)

    return scorer


@dataclass
class MetricReport:
    """Per-(metric, model) values with ratios against the popularity model."""

    rows: list = field(default_factory=list)  # (metric, model, value)

    def value(self, metric, model):
        for m, mod, v in self.rows:
            if m == metric and mod == model:
                return v
        raise KeyError((metric, model))

    def ratio(self, metric, model):
        base = self.value(metric, "popularity")
        return self.value(metric, model) / base if base > 0 else float("nan")

    def to_csv(self):
        lines = ["metric,model,value,ratio_vs_popularity"]
        for metric, model, v in self.rows:
            lines.append(f"{metric},{model},{v:.6f},{self.ratio(metric, model):.6f}")
        return "\n".join(lines) + "\n"

    def to_text(self):
        width = max(len(m) for _, m, _ in self.rows)
        lines = []
        for metric in sorted({m for m, _, _ in self.rows}):
            lines.append(metric)
            for m, mod, v in self.rows:
                if m != metric:
                    continue
                ratio = self.ratio(metric, mod)
                delta = (ratio - 1.0) * 100.0
                lines.append(
                    f"  {mod:<{width}}  {v:.4f}  (x{ratio:.3f} vs popularity, "
                    f"{delta:+.1f}%)"
                )
        return "\n".join(lines) + "\n"


def evaluate(train_events, test_events, scorers, ks=(5, 10)):
    """Rank held-out items for every test context under each scorer.

    ``scorers`` maps model name -> scorer(context_key, item_keys) -> score
    array; a "popularity" entry is added when missing since the report
    normalizes against it. Training positives of a context are excluded from
    its candidates. Returns a MetricReport averaging over test contexts.
    """
    scorers = dict(scorers)
    scorers.setdefault("popularity", popularity_scorer(train_events))
    item_keys = []
    seen = set()
    for ev in train_events:
        if ev[1] not in seen:
            seen.add(ev[1])
            item_keys.append(ev[1])
    train_by_ctx = {}
    for ev in train_events:
        train_by_ctx.setdefault(ev[0], set()).add(ev[1])
    relevant_by_ctx = {}
    for ev in test_events:
        relevant_by_ctx.setdefault(ev[0], set()).add(ev[1])
    if not relevant_by_ctx:
        raise ValueError("no test contexts to evaluate")

    report = MetricReport()
    max_k = max(ks)
    for name, scorer in scorers.items():
        sums = {("recall", k): 0.0 for k in ks}
        sums.update({("ndcg", k): 0.0 for k in ks})
        for ctx in relevant_by_ctx:
            relevant = relevant_by_ctx[ctx]
            exclude = train_by_ctx.get(ctx, set())
            scores = scorer(ctx, item_keys)
            recommended = rank_top_k(scores, item_keys, exclude, max_k)
            for k in ks:
                sums[("recall", k)] += recall_at_k(recommended[:k], relevant)
                sums[("ndcg", k)] += ndcg_at_k(recommended, relevant, k)
        n = len(relevant_by_ctx)
        for k in ks:
            report.rows.append((f"recall@{k}", name, sums[("recall", k)] / n))
        for k in ks:
            report.rows.append((f"ndcg@{k}", name, sums[("ndcg", k)] / n))
    return report
