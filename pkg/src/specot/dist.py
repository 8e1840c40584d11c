"""Probability bookkeeping for drafter/target token distributions.

Everything downstream works with a target distribution ``p`` over a token
vocabulary, a drafter distribution ``q`` over the same vocabulary, and a
draft count ``n``: the drafter proposes ``n`` tokens drawn i.i.d. from
``q`` and the verifier must emit exactly one token distributed as ``p``.
This module holds the two container types plus the handful of mass
computations (temperature softmax, top-k truncation, set and tuple
probabilities) that every solver shares.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# Drafter entries at or below this are treated as exact zeros; they can
# never be proposed, so they take no part in the solvers.
Q_SUPPORT_FLOOR = 1e-300

_SUM_TOL = 1e-9


def _as_readonly(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ProbDist:
    """A vector of token masses, optionally a sub-probability slice.

    ``mass[i]`` is the probability of token ``i``.  A full distribution
    must sum to 1 within 1e-9; a slice flagged ``sub_probability`` (the
    target restricted to the drafter's top-k support) may sum to less.
    """

    mass: np.ndarray
    sub_probability: bool = False

    def __post_init__(self) -> None:
        m = _as_readonly(self.mass)
        object.__setattr__(self, "mass", m)
        if m.ndim != 1 or m.size == 0:
            raise ValueError("mass must be a non-empty 1-d vector")
        if not np.all(np.isfinite(m)):
            raise ValueError("mass entries must be finite")
        if np.any(m < -1e-12):
            raise ValueError("mass entries must be nonnegative")
        if np.any(m < 0.0):
            clipped = np.clip(m, 0.0, None)
            object.__setattr__(self, "mass", _as_readonly(clipped))
        total = float(math.fsum(self.mass.tolist()))
        if self.sub_probability:
            if total > 1.0 + _SUM_TOL:
                raise ValueError(f"sub-probability mass sums to {total} > 1")
        elif abs(total - 1.0) > _SUM_TOL:
            raise ValueError(f"mass sums to {total}, expected 1 within {_SUM_TOL}")

    @property
    def size(self) -> int:
        return int(self.mass.size)

    @property
    def support_size(self) -> int:
        return int(np.count_nonzero(self.mass > 0.0))

    def __getitem__(self, i: int) -> float:
        return float(self.mass[i])


@dataclass(frozen=True)
class ProblemInstance:
    """One verification problem: target ``p``, drafter ``q``, draft count ``n``.

    ``p`` is always the full-length target (sums to 1).  ``q`` is zero
    outside ``active_vocab`` and sums to 1 over it; after top-k truncation
    ``active_vocab`` shrinks and ``q`` is renormalised, while ``p`` keeps
    its original entries.  Target mass sitting outside ``active_vocab``
    can never be proposed and is recovered through residual resampling.
    """

    p: ProbDist
    q: ProbDist
    n: int
    tau: float
    active_vocab: np.ndarray = field(init=False)
    full_vocab_size: int = field(init=False)

    def __post_init__(self) -> None:
        if self.p.size != self.q.size:
            raise ValueError("p and q must share one vocabulary")
        if self.n < 1:
            raise ValueError("draft count n must be >= 1")
        if not (0.0 < self.tau < 1.0):
            raise ValueError("tau must lie in (0, 1)")
        active = np.flatnonzero(self.q.mass > Q_SUPPORT_FLOOR)
        if active.size == 0:
            raise ValueError("drafter distribution has empty support")
        active = _as_readonly(active).astype(np.int64)
        active.setflags(write=False)
        object.__setattr__(self, "active_vocab", active)
        object.__setattr__(self, "full_vocab_size", self.p.size)

    @property
    def active_mask(self) -> np.ndarray:
        mask = np.zeros(self.full_vocab_size, dtype=bool)
        mask[self.active_vocab] = True
        return mask

    def sliced_target(self) -> ProbDist:
        """The target restricted to ``active_vocab``, as a sub-probability."""
        sliced = np.zeros(self.full_vocab_size)
        sliced[self.active_vocab] = self.p.mass[self.active_vocab]
        return ProbDist(sliced, sub_probability=True)


def make_instance(
    p: Sequence[float] | np.ndarray | ProbDist,
    q: Sequence[float] | np.ndarray | ProbDist,
    n: int,
    tau: float = 1e-3,
) -> ProblemInstance:
    """Build an instance from raw mass vectors, renormalising q over its support."""
    p_dist = p if isinstance(p, ProbDist) else ProbDist(np.asarray(p, dtype=np.float64))
    q_arr = q.mass if isinstance(q, ProbDist) else np.asarray(q, dtype=np.float64)
    q_arr = np.array(q_arr, dtype=np.float64)
    if np.any(~np.isfinite(q_arr)) or np.any(q_arr < -1e-12):
        raise ValueError("q entries must be finite and nonnegative")
    q_arr = np.clip(q_arr, 0.0, None)
    q_arr[q_arr <= Q_SUPPORT_FLOOR] = 0.0
    total = math.fsum(q_arr.tolist())
    if total <= 0.0:
        raise ValueError("q has no support")
    q_dist = ProbDist(q_arr / total)
    return ProblemInstance(p=p_dist, q=q_dist, n=int(n), tau=float(tau))


def apply_temperature(logits: Sequence[float] | np.ndarray, temperature: float = 1.0) -> ProbDist:
    """Softmax of ``logits / temperature`` as a ProbDist.

    Shift-invariant: adding any constant to the logits leaves the result
    unchanged, so arbitrarily large logits are safe.
    """
    if temperature <= 0.0 or not math.isfinite(temperature):
        raise ValueError("temperature must be a positive finite number")
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise ValueError("logits must be a non-empty 1-d vector")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    z = z / temperature
    z = z - z.max()
    w = np.exp(z)
    return ProbDist(w / math.fsum(w.tolist()))


def top_k_truncate(instance: ProblemInstance, k: int) -> ProblemInstance:
    """Restrict the drafter to its k highest-mass tokens.

    Ties are broken toward the lower token id.  The drafter is
    renormalised over the survivors; the target is left untouched, so its
    off-support mass flows through residual resampling.  ``k`` larger
    than the current support is clamped with a warning.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    support = instance.active_vocab
    if k > support.size:
        warnings.warn(
            f"top-k {k} exceeds drafter support {support.size}; clamping",
            stacklevel=2,
        )
        k = support.size
    q = instance.q.mass
    # sort by (-q, id): highest mass first, lower id wins ties
    order = sorted(support.tolist(), key=lambda i: (-q[i], i))
    keep = sorted(order[:k])
    q_new = np.zeros(instance.full_vocab_size)
    q_new[keep] = q[keep]
    q_new /= math.fsum(q_new[keep].tolist())
    return ProblemInstance(
        p=instance.p, q=ProbDist(q_new), n=instance.n, tau=instance.tau
    )


def set_mass(q: ProbDist | np.ndarray, tokens: Iterable[int], n: int) -> float:
    """Probability that all ``n`` i.i.d. drafts land inside ``tokens``.

    Equals ``(sum_{i in tokens} q(i)) ** n``; the sum over every ordered
    n-tuple drawn from ``tokens``.
    """
    arr = q.mass if isinstance(q, ProbDist) else np.asarray(q, dtype=np.float64)
    idx = np.fromiter(tokens, dtype=np.int64) if not isinstance(tokens, np.ndarray) else tokens
    if idx.size == 0:
        return 0.0
    return float(math.fsum(arr[idx].tolist())) ** int(n)


def tuple_mass(q: ProbDist | np.ndarray, omega: Sequence[int]) -> float:
    """Probability of drawing the ordered draft tuple ``omega`` i.i.d. from q."""
    arr = q.mass if isinstance(q, ProbDist) else np.asarray(q, dtype=np.float64)
    out = 1.0
    for t in omega:
        out *= float(arr[t])
    return out


def multiset_key(omega: Sequence[int]) -> tuple[int, ...]:
    """Canonical (sorted) key for a draft tuple; order never matters downstream."""
    return tuple(sorted(int(t) for t in omega))


def multiset_mass(q: ProbDist | np.ndarray, multiset: Sequence[int]) -> float:
    """Total q-mass of all ordered tuples that sort to ``multiset``."""
    arr = q.mass if isinstance(q, ProbDist) else np.asarray(q, dtype=np.float64)
    counts: dict[int, int] = {}
    for t in multiset:
        counts[int(t)] = counts.get(int(t), 0) + 1
    n = len(multiset)
    coeff = math.factorial(n)
    prod = 1.0
    for tok, c in counts.items():
        coeff //= math.factorial(c)
        prod *= float(arr[tok]) ** c
    return coeff * prod


def enumerate_multisets(tokens: Sequence[int], n: int) -> list[tuple[int, ...]]:
    """All size-n multisets over ``tokens`` as sorted tuples."""
    from itertools import combinations_with_replacement

    return list(combinations_with_replacement(sorted(int(t) for t in tokens), n))


# ---------------------------------------------------------------------------
# instance file format

def instance_to_dict(instance: ProblemInstance) -> dict:
    return {
        "p": [float(x) for x in instance.p.mass],
        "q": [float(x) for x in instance.q.mass],
        "n": instance.n,
        "tau": instance.tau,
        "p_is_logits": False,
        "q_is_logits": False,
    }


def instance_from_dict(spec: dict) -> ProblemInstance:
    """Decode the instance file format.

    Required keys: ``p``, ``q`` (mass vectors or logits), ``n``.  Optional:
    ``tau`` (default 1e-3), ``top_k``, ``temperature`` (applied to any side
    arriving as logits, default 1.0), ``p_is_logits``, ``q_is_logits``.
    """
    if "p" not in spec or "q" not in spec or "n" not in spec:
        raise ValueError("instance requires 'p', 'q' and 'n'")
    temperature = float(spec.get("temperature", 1.0))
    p_raw = np.asarray(spec["p"], dtype=np.float64)
    q_raw = np.asarray(spec["q"], dtype=np.float64)
    p = apply_temperature(p_raw, temperature) if spec.get("p_is_logits") else ProbDist(p_raw)
    if spec.get("q_is_logits"):
        q = apply_temperature(q_raw, temperature)
    else:
        q = ProbDist(q_raw)
    inst = make_instance(p, q, int(spec["n"]), float(spec.get("tau", 1e-3)))
    top_k = spec.get("top_k")
    if top_k is not None:
        inst = top_k_truncate(inst, int(top_k))
    return inst


def load_instance(path: str) -> ProblemInstance:
    with open(path, "r", encoding="utf-8") as fh:
        return instance_from_dict(json.load(fh))


def save_instance(instance: ProblemInstance, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(instance_to_dict(instance), fh, indent=2)
        fh.write("\n")
