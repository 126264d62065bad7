"""Stateless differentially private information retrieval.

Each query downloads a set of ``k`` distinct cell indices that always looks
like a uniform draw. With probability ``1 - alpha`` the target index is
forced into the set and the target block is returned; with probability
``alpha`` the whole set is uniform and the query reports a miss. Privacy
holds per query and composes trivially because no state survives between
queries.

Transcript distribution (the whole analysis rests on these two cases):

    queried in t:      (1 - alpha) / C(n-1, k-1) + alpha / C(n, k)
    queried not in t:  alpha / C(n, k)

so the worst per-transcript ratio between two queries is exactly
``(1 - alpha) * n / (alpha * k) + 1``.

Two set-size rules are exposed. The default divides by ``alpha`` so the
requested budget is actually met (the achieved ratio above never exceeds
``e**epsilon``); the ``"pseudocode"`` variant omits the ``alpha`` factor and
is kept for comparison runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

from .blockstore.array import ServerArray
from .errors import ParameterError

__all__ = [
    "DpIrParams",
    "IrResult",
    "achieved_epsilon",
    "compute_k",
    "epsilon_for",
    "ir_query",
    "ir_transcript_prob",
    "membership_prob",
    "sample_download_set",
]


def compute_k(n: int, alpha: float, epsilon: float, variant: str = "proof") -> int:
    """Smallest download-set size meeting the requested budget.

    ``proof`` (default): ceil((1-alpha) * n / (alpha * (e^eps - 1))), clamped
    to [1, n]; guarantees ``epsilon_for(n, alpha, k) <= epsilon`` whenever the
    clamp does not hit n. ``pseudocode``: same without the alpha divisor.
    """
    _check_alpha(alpha)
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if epsilon <= 0:
        raise ParameterError(
            "epsilon must be > 0: no partial download achieves a zero budget"
        )
    denom = math.expm1(epsilon)
    if variant == "proof":
        denom *= alpha
    elif variant != "pseudocode":
        raise ParameterError(f"unknown variant {variant!r}")
    quotient = (1 - alpha) * n / denom
    # Guard the ceiling against float noise when the quotient is an integer
    # mathematically (e.g. epsilon = ln 5 makes e^eps - 1 = 3.9999...96).
    raw = math.ceil(quotient * (1 - 1e-12))
    return max(1, min(n, raw))


def epsilon_for(n: int, alpha, k: int) -> float:
    """Budget actually implied by a set size: ln(1 + (1-alpha)*n / (alpha*k))."""
    return math.log1p((1 - alpha) * n / (alpha * k))


@dataclass(frozen=True)
class DpIrParams:
    """Parameters of one deployment.

    ``alpha`` may be a float or an exact ``Fraction``; probability
    computations use it exactly as given. ``epsilon`` defaults to the budget
    implied by ``k``. ``honest_error`` keeps the miss branch a miss even when
    ``k == n`` (the default); switching it off lets full-download deployments
    answer from the downloaded set instead.
    """

    n: int
    alpha: object  # float or Fraction in (0, 1)
    k: int
    epsilon: float | None = None
    honest_error: bool = True

    def __post_init__(self):
        if self.n < 1:
            raise ParameterError(f"n must be >= 1, got {self.n}")
        _check_alpha(self.alpha)
        if not 1 <= self.k <= self.n:
            raise ParameterError(f"k must be in [1, {self.n}], got {self.k}")
        implied = epsilon_for(self.n, float(self.alpha), self.k)
        if self.epsilon is None:
            object.__setattr__(self, "epsilon", implied)
        elif self.k < self.n and implied > self.epsilon + 1e-12:
            raise ParameterError(
                f"k={self.k} only achieves epsilon={implied:.6f} "
                f"> requested {self.epsilon:.6f}"
            )

    @classmethod
    def for_budget(
        cls, n: int, alpha, epsilon: float, variant: str = "proof", honest_error: bool = True
    ) -> "DpIrParams":
        k = compute_k(n, float(alpha), epsilon, variant)
        return cls(n=n, alpha=alpha, k=k, epsilon=epsilon, honest_error=honest_error)

    @property
    def alpha_fraction(self) -> Fraction:
        return Fraction(self.alpha)


def achieved_epsilon(params: DpIrParams) -> float:
    """Budget the deployed set size actually leaks.

    Full download (``k == n``) makes the transcript a constant, so it reports
    0 rather than the formula value.
    """
    if params.k == params.n:
        return 0.0
    return epsilon_for(params.n, float(params.alpha), params.k)


@dataclass(frozen=True)
class IrResult:
    """Outcome of one query: the download set and the block (None on miss)."""

    transcript: tuple[int, ...]
    block: bytes | None

    @property
    def hit(self) -> bool:
        return self.block is not None


def sample_download_set(params: DpIrParams, index: int, rng) -> tuple[bool, tuple[int, ...]]:
    """Draw one transcript for ``index``.

    Returns ``(answered, indices)`` with indices sorted ascending, so set
    identity rather than sampling order is what the server observes.
    """
    n, k = params.n, params.k
    if not 1 <= index <= n:
        raise ParameterError(f"index {index} out of range [1, {n}]")
    answered = rng.random() > params.alpha
    if answered:
        # Uniform (k-1)-subset of [n] \ {index}: sample 0-based from a range
        # one element short and shift values at or above the hole.
        rest = rng.sample(range(n - 1), k - 1)
        chosen = [index] + [j + 2 if j >= index - 1 else j + 1 for j in rest]
    else:
        chosen = [j + 1 for j in rng.sample(range(n), k)]
    chosen.sort()
    return answered, tuple(chosen)


def ir_query(params: DpIrParams, index: int, store: ServerArray, rng, cipher=None) -> IrResult:
    """Run one retrieval against ``store``.

    The store is read-only for this scheme; the block comes back plaintext
    (records are public in the stateless setting) unless ``cipher`` is given.
    """
    answered, transcript = sample_download_set(params, index, rng)
    fetched = {}
    for addr in transcript:
        fetched[addr] = store.download(addr)
    if not answered and params.k == params.n and not params.honest_error:
        answered = True
    if not answered:
        return IrResult(transcript, None)
    cell = fetched[index]
    block = cipher.decrypt(cell) if cipher is not None else cell
    return IrResult(transcript, block)


def ir_transcript_prob(params: DpIrParams, queried: int, transcript: Iterable[int]) -> Fraction:
    """Exact probability that querying ``queried`` emits ``transcript``."""
    n, k = params.n, params.k
    members = frozenset(transcript)
    if len(members) != k or not all(1 <= i <= n for i in members):
        raise ParameterError(f"transcript must be {k} distinct indices in [1, {n}]")
    if not 1 <= queried <= n:
        raise ParameterError(f"queried index {queried} out of range [1, {n}]")
    alpha = params.alpha_fraction
    miss_term = alpha / math.comb(n, k)
    if queried in members:
        return (1 - alpha) / math.comb(n - 1, k - 1) + miss_term
    return miss_term


def membership_prob(params: DpIrParams, queried: int, member: int) -> Fraction:
    """Exact Pr[member in transcript | query = queried]."""
    n, k = params.n, params.k
    alpha = params.alpha_fraction
    base = alpha * Fraction(k, n)
    if member == queried:
        return (1 - alpha) + base
    return (1 - alpha) * Fraction(k - 1, n - 1) + base


def _check_alpha(alpha) -> None:
    if not 0 < alpha < 1:
        raise ParameterError(f"alpha must be in (0, 1), got {alpha}")
