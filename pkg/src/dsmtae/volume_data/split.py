from __future__ import annotations

import math
from collections import defaultdict

import numpy as np

from ..exceptions import ParameterError
from .types import DatasetSplit

DEFAULT_AGE_BINS = (0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, math.inf)


def age_bin_index(age, edges):
    """Index of the half-open bin ``(edges[i], edges[i+1]]`` holding ``age``.

    Ages at or below the first edge fall into bin 0, ages past the last
    edge into the final bin.
    """
    i = int(np.searchsorted(edges, age, side="left")) - 1
    return min(max(i, 0), len(edges) - 2)


def make_split(samples, val_fraction=0.2, age_bins=DEFAULT_AGE_BINS, rng_seed=0) -> DatasetSplit:
    """Split subjects into train/validation, stratified by (age bin, sex).

    The validation total is ``round(val_fraction * N)`` and is apportioned
    across cells by largest remainder, so each cell receives the floor or
    ceiling of its exact share. Ties are broken by a seeded shuffle.
    ``samples`` only needs ``subject_id``, ``age`` and ``sex`` attributes.
    """
    samples = list(samples)
    if not samples:
        raise ParameterError("cannot split an empty sample list")
    if not 0.0 <= val_fraction < 1.0:
        raise ParameterError(f"val_fraction must lie in [0, 1), got {val_fraction}")
    edges = np.asarray(age_bins, dtype=np.float64)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ParameterError("age_bins must be a strictly increasing list of at least two edges")
    ids = [s.subject_id for s in samples]
    if len(set(ids)) != len(ids):
        raise ParameterError("subject ids must be unique")

    cells = defaultdict(list)
    for s in samples:
        if s.sex not in (0, 1) or not s.age > 0:
            raise ParameterError(f"invalid labels for subject {s.subject_id!r}")
        cells[(age_bin_index(s.age, edges), s.sex)].append(s.subject_id)

    rng = np.random.default_rng(rng_seed)
    keys = sorted(cells)
    exact = {k: val_fraction * len(cells[k]) for k in keys}
    quota = {k: math.floor(exact[k]) for k in keys}
    remaining = int(round(val_fraction * len(samples))) - sum(quota.values())
    tiebreak = rng.permutation(len(keys))
    order = sorted(range(len(keys)), key=lambda i: (-(exact[keys[i]] - quota[keys[i]]), tiebreak[i]))
    for i in order[:max(remaining, 0)]:
        quota[keys[i]] += 1

    train_ids, val_ids = [], []
    for k in keys:
        members = cells[k]
        perm = rng.permutation(len(members))
        chosen = {members[i] for i in perm[:quota[k]]}
        for sid in members:
            (val_ids if sid in chosen else train_ids).append(sid)

    order_of = {sid: i for i, sid in enumerate(ids)}
    train_ids.sort(key=order_of.__getitem__)
    val_ids.sort(key=order_of.__getitem__)
    return DatasetSplit(train_ids=train_ids, val_ids=val_ids, age_bins=[float(e) for e in edges])
