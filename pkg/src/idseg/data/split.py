from __future__ import annotations

import math
import zlib
from collections import defaultdict
from typing import Iterable, Sequence

import numpy as np

from .types import SampleMeta, Split, SplitAssignment

DEFAULT_RATIOS = (0.70, 0.10, 0.20)


def check_ratios(ratios: Sequence[float]) -> tuple[float, float, float]:
    if len(ratios) != 3:
        raise ValueError(f"need (train, val, test) ratios, got {ratios!r}")
    r = tuple(float(x) for x in ratios)
    if any(not (0.0 <= x <= 1.0) for x in r):
        raise ValueError(f"ratios must lie in [0, 1], got {r}")
    if abs(sum(r) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(r)}")
    return r  # type: ignore[return-value]


def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    """Largest-remainder apportionment of `n` items over (train, val, test).

    Every count lies within one item of ``n * ratio``. When n >= 3, any split
    with a positive ratio that would come out empty takes one item from the
    largest split, so small strata still populate train, val and test.
    """
    r = check_ratios(ratios)
    quotas = [n * x for x in r]
    sizes = [math.floor(q + 1e-9) for q in quotas]
    # ties go to the earlier split (train, then val, then test)
    order = sorted(range(3), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    if n >= 3:
        for i in range(3):
            if r[i] > 0 and sizes[i] == 0:
                j = max(range(3), key=lambda k: sizes[k])
                sizes[j] -= 1
                sizes[i] += 1
    return tuple(sizes)  # type: ignore[return-value]


def _assign(ids: list[str], ratios, rng: np.random.Generator) -> dict[str, Split]:
    ids = sorted(ids)
    perm = rng.permutation(len(ids))
    n_train, n_val, _ = split_sizes(len(ids), ratios)
    out = {}
    for rank, idx in enumerate(perm):
        if rank < n_train:
            out[ids[idx]] = Split.TRAIN
        elif rank < n_train + n_val:
            out[ids[idx]] = Split.VAL
        else:
            out[ids[idx]] = Split.TEST
    return out


def split_dataset(
    samples: Iterable[SampleMeta],
    ratios: Sequence[float] = DEFAULT_RATIOS,
    seed: int = 0,
    stratify: bool = True,
) -> SplitAssignment:
    """Assign every sample to train/val/test.

    With ``stratify`` the split runs independently inside each
    (country_card, capture_source) stratum. Results depend only on the set of
    source ids, the ratios and the seed, never on input order.
    """
    ratios = check_ratios(ratios)
    samples = list(samples)
    if not samples:
        raise ValueError("cannot split an empty sample list")
    ids = [s.source_id for s in samples]
    if len(set(ids)) != len(ids):
        raise ValueError("source_id values must be unique")

    strata: dict[tuple, list[str]] = defaultdict(list)
    for s in samples:
        strata[s.stratum if stratify else ("all",)].append(s.source_id)

    assignment: dict[str, Split] = {}
    for key, members in strata.items():
        tag = "/".join(str(getattr(v, "value", v)) for v in key)
        if len(members) < 3:
            raise ValueError(
                f"stratum {tag} has {len(members)} samples; at least 3 are needed to fill all splits"
            )
        ss = np.random.SeedSequence([seed, zlib.crc32(tag.encode())])
        assignment.update(_assign(members, ratios, np.random.default_rng(ss)))
    # keep the caller's order for readability
    return SplitAssignment(ratios, seed, {i: assignment[i] for i in ids})


def apply_split(samples: Sequence[SampleMeta], split: SplitAssignment) -> list[SampleMeta]:
    return [s.with_split(split.assignment[s.source_id]) for s in samples]
