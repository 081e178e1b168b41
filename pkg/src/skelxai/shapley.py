"""Model-agnostic Shapley attribution over groups of input features.

Players are boolean masks over the stacked ``[4, C, T, V]`` input. A
coalition's value is the class logit averaged over background samples, with
players inside the coalition taking the explained sample's values and the
rest taking the background sample's values. Coalitions are encoded as int
bitmasks (bit ``i`` = player ``i``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data.streams import STREAMS, FeatureStreams
from .explanation import ExplanationMap
from .model.network import GcnModel

F_MAX = 14
GRANULARITIES = ("keypoint", "stream", "keypoint_stream")


@dataclass
class PlayerScheme:
    granularity: str
    masks: np.ndarray  # bool [F, 4, C, T, V]
    labels: list

    def __post_init__(self):
        cover = self.masks.sum(axis=0)
        if not np.all(cover == 1):
            raise ValueError("player masks must partition the input")

    @property
    def F(self) -> int:
        return len(self.masks)


def make_scheme(granularity: str, shape) -> PlayerScheme:
    """Player masks for an input of shape ``[4, C, T, V]``."""
    if granularity not in GRANULARITIES:
        raise ValueError(f"unknown scheme {granularity!r}; choose from {GRANULARITIES}")
    S, C, T, V = shape
    if granularity == "keypoint":
        masks = np.zeros((V, S, C, T, V), dtype=bool)
        for v in range(V):
            masks[v, ..., v] = True
        labels = list(range(V))
    elif granularity == "stream":
        masks = np.zeros((S, S, C, T, V), dtype=bool)
        for s in range(S):
            masks[s, s] = True
        labels = list(STREAMS[:S])
    else:
        masks = np.zeros((V * S, S, C, T, V), dtype=bool)
        labels = []
        for v in range(V):
            for s in range(S):
                masks[v * S + s, s, ..., v] = True
                labels.append(f"{v}:{STREAMS[s]}")
    return PlayerScheme(granularity, masks, labels)


@dataclass
class BackgroundSet:
    samples: np.ndarray  # [n, 4, C, T, V]
    subsample_size: int
    seed: int = 1234

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if len(self.samples) < 1:
            raise ValueError("background set is empty")
        if not 1 <= self.subsample_size <= len(self.samples):
            raise ValueError("subsample size must lie in [1, n]")

    @property
    def n(self) -> int:
        return len(self.samples)

    @classmethod
    def draw(cls, pool: np.ndarray, n: int = 100, subsample_size: int = 20, seed: int = 1234) -> "BackgroundSet":
        """Sample ``n`` references without replacement from a training pool."""
        rng = np.random.default_rng([seed, 0xB6])
        n = min(n, len(pool))
        idx = np.sort(rng.choice(len(pool), size=n, replace=False))
        return cls(np.asarray(pool)[idx], min(subsample_size, n), seed)

    def subsamples(self) -> list[np.ndarray]:
        """Disjoint subsamples of ``subsample_size`` covering a shuffled copy of the set.

        A trailing remainder smaller than ``subsample_size`` forms its own subsample.
        """
        order = np.random.default_rng([self.seed, 0x5B]).permutation(self.n)
        k = self.subsample_size
        return [self.samples[order[i:i + k]] for i in range(0, self.n, k)]


@dataclass
class ShapResult:
    phi: np.ndarray
    phi0: float
    fx: float
    class_index: int
    estimator: str
    granularity: str
    labels: list
    num_permutations: int = 0
    seed: int | None = None
    background_n: int = 0
    meta: dict = field(default_factory=dict)

    def efficiency_gap(self) -> float:
        return float(abs(self.phi.sum() + self.phi0 - self.fx))


def _as_array(x):
    return x.stacked() if isinstance(x, FeatureStreams) else np.asarray(x, dtype=np.float64)


def _coalition_mask(scheme: PlayerScheme, coalition: int) -> np.ndarray:
    members = [i for i in range(scheme.F) if coalition >> i & 1]
    if not members:
        return np.zeros(scheme.masks.shape[1:], dtype=bool)
    return scheme.masks[members].any(axis=0)


def coalition_values(model: GcnModel, x, scheme: PlayerScheme, background, class_index: int,
                     coalitions, batch: int = 2048) -> np.ndarray:
    """Value of each coalition bitmask: mean background logit of ``class_index``."""
    x = _as_array(x)
    bg = np.asarray(background)
    if bg.ndim != 5 or len(bg) == 0:
        raise ValueError("background must be a non-empty [n, 4, C, T, V] array")
    coalitions = list(coalitions)
    nb = len(bg)
    per = max(1, batch // nb)
    out = np.empty(len(coalitions))
    for start in range(0, len(coalitions), per):
        chunk = coalitions[start:start + per]
        masks = np.stack([_coalition_mask(scheme, c) for c in chunk])  # [k, 4, C, T, V]
        comp = np.where(masks[:, None], x[None, None], bg[None])  # [k, nb, 4, C, T, V]
        logits = model.logits(comp.reshape((-1,) + x.shape))[:, class_index]
        out[start:start + len(chunk)] = logits.reshape(len(chunk), nb).mean(axis=1)
    return out


def masked_predict(model: GcnModel, x, coalition, background, class_index: int,
                   scheme: PlayerScheme | None = None) -> float:
    """Coalition value for a set (or bitmask) of players; keypoint players by default."""
    x = _as_array(x)
    if isinstance(background, BackgroundSet):
        background = background.samples
    if len(background) == 0:
        raise ValueError("background set is empty")
    scheme = scheme or make_scheme("keypoint", x.shape)
    if not isinstance(coalition, (int, np.integer)):
        members = list(coalition)
        if any(not 0 <= i < scheme.F for i in members):
            raise ValueError("coalition references unknown players")
        coalition = sum(1 << int(i) for i in set(members))
    return float(coalition_values(model, x, scheme, background, class_index, [int(coalition)])[0])


def _shapley_weights(F: int) -> np.ndarray:
    return np.array([math.factorial(s) * math.factorial(F - s - 1) / math.factorial(F) for s in range(F)])


def exact_shapley(model: GcnModel, x, scheme: PlayerScheme, background, class_index: int,
                  f_max: int = F_MAX) -> ShapResult:
    """Full enumeration of all ``2^F`` coalitions with the combinatorial weights."""
    F = scheme.F
    if F > f_max:
        raise ValueError(f"{F} players exceed the exact limit of {f_max}; use sampled_shapley")
    bg = background.samples if isinstance(background, BackgroundSet) else np.asarray(background)
    n = 1 << F
    values = coalition_values(model, x, scheme, bg, class_index, range(n))
    return shapley_from_values(values, F, class_index, scheme, len(bg))


def shapley_from_values(values: np.ndarray, F: int, class_index: int = 0,
                        scheme: PlayerScheme | None = None, background_n: int = 0) -> ShapResult:
    """Exact Shapley values from a table of all ``2^F`` coalition values."""
    n = 1 << F
    idx = np.arange(n)
    sizes = np.array([bin(i).count("1") for i in range(n)])
    w = _shapley_weights(F)
    phi = np.empty(F)
    for i in range(F):
        without = idx[(idx >> i & 1) == 0]
        phi[i] = np.sum(w[sizes[without]] * (values[without | (1 << i)] - values[without]))
    return ShapResult(
        phi, float(values[0]), float(values[n - 1]), class_index, "exact",
        scheme.granularity if scheme else "", scheme.labels if scheme else list(range(F)),
        background_n=background_n,
    )


def permutations(F: int, M: int, seed: int, antithetic: bool = True) -> list[np.ndarray]:
    """``M`` player orderings; with ``antithetic`` each draw is followed by its reverse."""
    if M < 1:
        raise ValueError("need at least one permutation")
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < M:
        p = rng.permutation(F)
        out.append(p)
        if antithetic and len(out) < M:
            out.append(p[::-1].copy())
    return out


def sampled_shapley(model: GcnModel, x, scheme: PlayerScheme, background, class_index: int,
                    M: int = 200, seed: int = 1234, antithetic: bool = True) -> ShapResult:
    """Permutation estimator; each distinct coalition is evaluated once."""
    bg = background.samples if isinstance(background, BackgroundSet) else np.asarray(background)
    F = scheme.F
    perms = permutations(F, M, seed, antithetic)
    full = (1 << F) - 1
    needed = {0, full}
    for p in perms:
        c = 0
        for i in p:
            c |= 1 << int(i)
            needed.add(c)
    order = sorted(needed)
    vals = dict(zip(order, coalition_values(model, x, scheme, bg, class_index, order)))
    phi = np.zeros(F)
    for p in perms:
        c = 0
        prev = vals[0]
        for i in p:
            c |= 1 << int(i)
            cur = vals[c]
            phi[i] += cur - prev
            prev = cur
    phi /= len(perms)
    return ShapResult(
        phi, float(vals[0]), float(vals[full]), class_index, "permutation", scheme.granularity,
        scheme.labels, num_permutations=len(perms), seed=seed, background_n=len(bg),
        meta={"antithetic": antithetic, "coalitions_evaluated": len(order)},
    )


def aggregate_subsampled(results: list[ShapResult]) -> ShapResult:
    """Average per-subsample results for the same sample, scheme and class."""
    if not results:
        raise ValueError("nothing to aggregate")
    first = results[0]
    for r in results[1:]:
        if (r.granularity, len(r.phi), r.class_index, r.estimator) != (
                first.granularity, len(first.phi), first.class_index, first.estimator):
            raise ValueError("results disagree on scheme, class or estimator")
    return ShapResult(
        np.mean([r.phi for r in results], axis=0),
        float(np.mean([r.phi0 for r in results])),
        float(np.mean([r.fx for r in results])),
        first.class_index, first.estimator, first.granularity, first.labels,
        first.num_permutations, first.seed, sum(r.background_n for r in results),
        meta={"subsamples": len(results)},
    )


def explain(model: GcnModel, x, class_index: int, scheme: PlayerScheme, background: BackgroundSet,
            estimator: str = "permutation", M: int = 200, seed: int = 1234) -> ShapResult:
    """Run the estimator once per background subsample and aggregate."""
    runs = []
    for bg in background.subsamples():
        if estimator == "exact":
            runs.append(exact_shapley(model, x, scheme, bg, class_index))
        elif estimator == "permutation":
            runs.append(sampled_shapley(model, x, scheme, bg, class_index, M, seed))
        else:
            raise ValueError(f"unknown estimator {estimator!r}")
    res = aggregate_subsampled(runs)
    res.seed = seed if estimator == "permutation" else None
    return res


def shap_to_keypoint_scores(result: ShapResult, scheme: PlayerScheme, sample_id: str = "") -> ExplanationMap:
    """Signed per-keypoint scores; keypoint-stream players are summed over streams."""
    if scheme.granularity == "stream":
        raise ValueError("stream-level players carry no keypoint resolution")
    if scheme.granularity == "keypoint":
        scores = result.phi.copy()
    else:
        scores = result.phi.reshape(-1, len(STREAMS)).sum(axis=1)
    return ExplanationMap(
        scores[None], "shap", "input", result.class_index, sample_id, meta=export_meta(result)
    )


def shap_to_player_map(result: ShapResult, sample_id: str = "") -> ExplanationMap:
    """Player-level map (one column per player, labeled), for any scheme."""
    return ExplanationMap(result.phi[None], "shap", "input", result.class_index, sample_id,
                          labels=list(result.labels), meta=export_meta(result))


def export_meta(result: ShapResult) -> dict:
    return {
        "estimator": result.estimator,
        "M": result.num_permutations,
        "background_n": result.background_n,
        "seed": "" if result.seed is None else result.seed,
        "scale": "logit",
        "phi0": result.phi0,
        "fx": result.fx,
        "scheme": result.granularity,
    }
