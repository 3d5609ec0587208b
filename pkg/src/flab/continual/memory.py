"""Fixed-budget exemplar memory with slot redistribution.

The budget K is split over the C classes seen so far as floor(K/C)
per class, with the K mod C leftover slots going one each to the
earliest-seen classes. Selection within a class is either seeded
uniform sampling or greedy herding toward the class feature mean.
"""

from __future__ import annotations

import logging

import numpy as np

from flab.errors import ConfigError

logger = logging.getLogger("flab.continual")


def slot_quota(budget, num_classes):
    """Per-rank exemplar quotas; rank = order in which classes appeared."""
    if budget < 0 or num_classes < 1:
        raise ConfigError(f"bad quota arguments K={budget}, C={num_classes}")
    base, extra = divmod(budget, num_classes)
    return np.array([base + (1 if r < extra else 0) for r in range(num_classes)],
                    dtype=np.int64)


def herding_order(features, count):
    """Greedy indices whose running mean tracks the full feature mean.

    Step k picks the candidate minimizing ||mu - mean(selected + x)||;
    exact ties go to the lowest remaining index.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ConfigError(f"herding needs (n, d) features, got {features.shape}")
    n = len(features)
    count = min(count, n)
    mu = features.mean(axis=0)
    chosen = []
    total = np.zeros(features.shape[1])
    remaining = list(range(n))
    for k in range(1, count + 1):
        cand = features[remaining]
        dists = np.linalg.norm(mu[None, :] - (total[None, :] + cand) / k, axis=1)
        pick = remaining[int(np.argmin(dists))]
        chosen.append(pick)
        remaining.remove(pick)
        total += features[pick]
    return chosen


class ExemplarMemory:
    """Budgeted per-class example store.

    per_class lists keep selection order. Under herding that order is
    the greedy rank, so a shrinking quota truncates from the tail;
    under random selection eviction is a seeded uniform subsample.
    """

    def __init__(self, budget):
        if budget < 0:
            raise ConfigError(f"memory budget must be >= 0, got {budget}")
        self.budget = int(budget)
        self.per_class = {}
        self.first_seen = {}
        self._order = []  # class ids by first-seen rank

    def __len__(self):
        return sum(len(v) for v in self.per_class.values())

    @property
    def classes(self):
        return list(self._order)

    def register(self, class_ids, exposure_index):
        for c in sorted(class_ids):
            if c not in self.first_seen:
                self.first_seen[c] = exposure_index
                self._order.append(c)
                self.per_class[c] = []

    def quotas(self):
        if not self._order:
            return {}
        q = slot_quota(self.budget, len(self._order))
        return {c: int(q[r]) for r, c in enumerate(self._order)}

    def all_examples(self):
        out = []
        for c in self._order:
            out.extend(self.per_class[c])
        return out

    def sizes(self):
        return {c: len(self.per_class[c]) for c in self._order}

    def _check_budget(self):
        total = len(self)
        if total > self.budget:
            raise ConfigError(f"memory overflow: {total} > {self.budget}")

    def update_random(self, new_data, rng, exposure_index):
        """Requota all classes; evict/fill by seeded uniform choice."""
        self.register(new_data.keys(), exposure_index)
        q = self.quotas()
        for c in self._order:
            kept = self.per_class[c]
            if len(kept) > q[c]:
                keep_idx = sorted(rng.choice(len(kept), size=q[c], replace=False))
                self.per_class[c] = [kept[i] for i in keep_idx]
        for c in sorted(new_data):
            need = q[c] - len(self.per_class[c])
            pool = new_data[c]
            if need <= 0 or not pool:
                if need > 0:
                    logger.warning("class %d has no samples to fill %d slots", c, need)
                continue
            take = min(need, len(pool))
            idx = sorted(rng.choice(len(pool), size=take, replace=False))
            self.per_class[c].extend(pool[i] for i in idx)
        self._check_budget()

    def update_herding(self, new_data, feature_fn, exposure_index):
        """Requota; select within each class by herding over features.

        feature_fn maps a list of examples to an (n, d) feature matrix
        from the frozen current model. Classes without new data keep
        their herding order and just truncate if over quota.
        """
        self.register(new_data.keys(), exposure_index)
        q = self.quotas()
        for c in self._order:
            candidates = list(self.per_class[c]) + list(new_data.get(c, []))
            if not candidates:
                if q[c] > 0:
                    logger.warning("class %d has no samples to fill %d slots", c, q[c])
                continue
            if c in new_data and new_data[c]:
                feats = feature_fn(candidates)
                order = herding_order(feats, q[c])
                self.per_class[c] = [candidates[i] for i in order]
            else:
                self.per_class[c] = candidates[:q[c]]
        self._check_budget()

    def reherd(self, feature_fn):
        """Re-rank every class's stored examples with fresh features."""
        for c in self._order:
            kept = self.per_class[c]
            if len(kept) > 1:
                order = herding_order(feature_fn(kept), len(kept))
                self.per_class[c] = [kept[i] for i in order]
