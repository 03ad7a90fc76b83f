"""Trait pattern spaces over an ordered tuple of lineages.

A binary pattern records presence (1) or absence (0) of a trait on each
lineage of a tree slice; position ``i`` of the tuple (1-based) is stored in
bit ``i - 1`` of a machine integer, so a slice of ``w`` lineages indexes a
dense vector of length ``2**w``.  Index 0 is the all-absent pattern, which
is excluded from the state space; dense vectors keep slot 0 at exactly 0.

Observed patterns additionally allow '?' (not recorded), stored as -1 in
int8 arrays and rendered as '?' in strings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

MISSING = -1


@lru_cache(maxsize=32)
def weight_table(width: int) -> np.ndarray:
    """Popcount of every pattern index below ``2**width`` (uint8)."""
    idx = np.arange(1 << width, dtype=np.uint64)
    return np.bitwise_count(idx).astype(np.uint8)


def weight(pattern) -> int:
    """Number of lineages displaying the trait ('?' entries do not count)."""
    arr = as_pattern(pattern)
    return int(np.sum(arr == 1))


def hamming(p, q) -> int:
    """Number of positions at which two patterns differ."""
    a, b = as_pattern(p), as_pattern(q)
    if a.shape != b.shape:
        raise ValueError("patterns have different lengths")
    return int(np.sum(a != b))


def pattern_to_index(pattern) -> int:
    """Binary pattern (tuple/array/string) -> dense vector index."""
    arr = as_pattern(pattern)
    if np.any(arr == MISSING):
        raise ValueError("pattern contains '?'; only binary patterns have an index")
    return int(np.sum((arr == 1) * (1 << np.arange(arr.size, dtype=np.uint64))))


def index_to_pattern(index: int, width: int) -> np.ndarray:
    """Dense vector index -> binary int8 pattern of length ``width``."""
    if not 0 <= index < (1 << width):
        raise ValueError(f"index {index} out of range for width {width}")
    return ((index >> np.arange(width)) & 1).astype(np.int8)


def as_pattern(pattern) -> np.ndarray:
    """Coerce a pattern given as string/sequence/array to an int8 array."""
    if isinstance(pattern, str):
        table = {"0": 0, "1": 1, "?": MISSING}
        try:
            return np.array([table[c] for c in pattern], dtype=np.int8)
        except KeyError as exc:
            raise ValueError(f"bad pattern character {exc.args[0]!r}") from None
    arr = np.asarray(pattern, dtype=np.int8)
    if arr.ndim != 1:
        raise ValueError("pattern must be one-dimensional")
    if not np.all(np.isin(arr, (0, 1, MISSING))):
        raise ValueError("pattern entries must be 0, 1 or ?")
    return arr


def format_pattern(pattern) -> str:
    arr = as_pattern(pattern)
    return "".join("?" if v == MISSING else str(int(v)) for v in arr)


def neighbors_down(index: int, width: int) -> list[int]:
    """Patterns reachable by removing one trait copy (all-absent excluded)."""
    out = []
    for b in range(width):
        if index >> b & 1:
            q = index & ~(1 << b)
            if q:
                out.append(q)
    return out


def neighbors_up(index: int, width: int) -> list[int]:
    """Patterns reachable by adding one trait copy."""
    return [index | (1 << b) for b in range(width) if not index >> b & 1]


def branch_expand(vec: np.ndarray, position: int) -> np.ndarray:
    """Push a dense pattern vector through a lineage branching event.

    The lineage at 1-based ``position`` splits in two; each source pattern
    maps to the single target pattern whose two offspring entries copy the
    parent entry, and targets whose offspring entries disagree get mass 0.
    Total mass is preserved exactly.
    """
    vec = np.asarray(vec, dtype=np.float64)
    width = vec.size.bit_length() - 1
    if vec.size != 1 << width:
        raise ValueError("vector length must be a power of two")
    if not 1 <= position <= width:
        raise ValueError(f"split position {position} outside 1..{width}")
    j = position - 1
    m = np.arange(1 << width, dtype=np.int64)
    low = m & ((1 << j) - 1)
    bit = (m >> j) & 1
    high = m >> (j + 1)
    target = low | (bit << j) | (bit << (j + 1)) | (high << (j + 2))
    out = np.zeros(2 << width, dtype=np.float64)
    out[target] = vec
    return out


def compatible_binary_patterns(pattern) -> list[int]:
    """Indices of binary completions of an observed pattern ('?' free).

    The all-absent completion is excluded (it is outside the state space).
    """
    arr = as_pattern(pattern)
    base = 0
    free = 0
    for i, v in enumerate(arr):
        if v == 1:
            base |= 1 << i
        elif v == MISSING:
            free |= 1 << i
    out = []
    sub = free
    while True:
        if base | sub:
            out.append(base | sub)
        if sub == 0:
            break
        sub = (sub - 1) & free
    return sorted(out)


# ---------------------------------------------------------------------------
# Registration rules

@dataclass(frozen=True)
class RegistrationRule:
    """Which observed patterns an experimenter would have recorded.

    The rule is a conjunction of primitive conditions on an observed
    pattern q over L taxa:

    - ``min_present``: at least this many entries equal to 1;
    - ``max_present``: at most this many entries equal to 1;
    - ``require_present``: positions (0-based) where q may not be 0;
    - ``max_potential``: at most this many entries in {1, ?}.

    The default keeps everything.  Applying a rule twice changes nothing.
    """

    min_present: int = 0
    max_present: int | None = None
    require_present: tuple[int, ...] = field(default=())
    max_potential: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "require_present",
                           tuple(sorted(set(int(i) for i in self.require_present))))
        if self.min_present < 0:
            raise ValueError("min_present must be >= 0")
        if self.max_present is not None and self.max_present < self.min_present:
            raise ValueError("max_present below min_present")

    def registered(self, pattern) -> bool:
        arr = as_pattern(pattern)
        n1 = int(np.sum(arr == 1))
        if n1 < self.min_present:
            return False
        if self.max_present is not None and n1 > self.max_present:
            return False
        for i in self.require_present:
            if i >= arr.size or arr[i] == 0:
                return False
        if self.max_potential is not None:
            if int(np.sum(arr != 0)) > self.max_potential:
                return False
        return True

    @property
    def trivial(self) -> bool:
        return (self.min_present == 0 and self.max_present is None
                and not self.require_present and self.max_potential is None)


DEFAULT_RULE = RegistrationRule(min_present=1)


def remap_rule(rule: RegistrationRule, posmap) -> RegistrationRule:
    """Rewrite positional conditions for a reordered pattern.

    ``posmap[k]`` is the new position of old position k.  Count-based
    conditions are order-free and pass through unchanged.
    """
    if not rule.require_present:
        return rule
    from dataclasses import replace
    return replace(rule,
                   require_present=tuple(posmap[p] for p in rule.require_present))


def register(counts, rule: RegistrationRule) -> dict:
    """Drop unregistered patterns from a pattern -> count mapping."""
    out = {}
    for pat, n in counts.items():
        if rule.registered(pat):
            out[pat] = out.get(pat, 0) + int(n)
    return out


def registration_weights(rule: RegistrationRule, xi: np.ndarray) -> np.ndarray:
    """Probability each binary pattern is observed as a registered pattern.

    Entry p of the result is the probability that masking pattern p
    entrywise (position i recorded with probability ``xi[i]``, else '?')
    lands in the registered set.  Slot 0 is fixed at 0.  The expected
    registered mass is then the dot product with the dense mean vector.
    """
    xi = np.asarray(xi, dtype=np.float64)
    width = xi.size
    if np.any((xi < 0) | (xi > 1)):
        raise ValueError("xi entries must lie in [0, 1]")
    n = 1 << width
    idx = np.arange(n, dtype=np.int64)

    if rule.trivial:
        w = np.ones(n)
        w[0] = 0.0
        return w

    simple = (rule.max_present is None and rule.max_potential is None
              and not rule.require_present and rule.min_present <= 1)
    if simple:
        # P(at least one present entry recorded) has a product closed form.
        miss = np.ones(n)
        for b in range(width):
            has = (idx >> b & 1).astype(bool)
            miss[has] *= 1.0 - xi[b]
        w = 1.0 - miss
        w[0] = 0.0
        return w

    # General case: per-pattern DP over positions tracking the number of
    # recorded 1s (capped) and recorded 0s (capped), with positions from
    # require_present restricted to outcomes that keep q nonzero there.
    if rule.max_present is not None:
        cap1 = rule.max_present + 1
    else:
        cap1 = rule.min_present
    cap0 = 0
    if rule.max_potential is not None:
        cap0 = max(0, width - rule.max_potential)
    req = set(rule.require_present)

    state = np.zeros((n, cap1 + 1, cap0 + 1))
    state[:, 0, 0] = 1.0
    for b in range(width):
        has = (idx >> b & 1).astype(bool)
        new = np.empty_like(state)
        # entries displaying the trait: recording bumps the 1-count
        shifted = np.minimum(np.arange(cap1 + 1) + 1, cap1)
        bumped1 = np.zeros_like(state[has])
        np.add.at(bumped1, (slice(None), shifted), state[has])
        new[has] = xi[b] * bumped1 + (1.0 - xi[b]) * state[has]
        # absent entries: recording bumps the 0-count, and is forbidden at
        # positions the rule requires to be potentially present
        shifted0 = np.minimum(np.arange(cap0 + 1) + 1, cap0)
        bumped0 = np.zeros_like(state[~has])
        np.add.at(bumped0, (slice(None), slice(None), shifted0), state[~has])
        p_rec = 0.0 if b in req else xi[b]
        new[~has] = p_rec * bumped0 + (1.0 - xi[b]) * state[~has]
        state = new

    ok1 = np.zeros(cap1 + 1, dtype=bool)
    for k in range(cap1 + 1):
        n1_ok = k >= rule.min_present
        if rule.max_present is not None:
            n1_ok = n1_ok and k <= rule.max_present
        ok1[k] = n1_ok
    ok0 = np.ones(cap0 + 1, dtype=bool)
    if rule.max_potential is not None:
        ok0[:] = False
        ok0[cap0] = True
    w = np.einsum("nij,i,j->n", state, ok1.astype(float), ok0.astype(float))
    w[0] = 0.0
    return np.clip(w, 0.0, 1.0)
