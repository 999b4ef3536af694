"""Exact correlation functions of randomly initialized deep linear networks.

A correlation function here is the expectation of a product of m derivative
tensors of the network output, with the derivative indices contracted in
pairs. For a linear net f(x) = n^{-L/2} W_L ... W_1 W_0 x with unit gaussian
entries the expectation expands, by the Isserlis pairing theorem applied per
weight matrix, into a sum over diagrams: one perfect matching of the factors
per weight type, where contracted derivative pairs force their edge into the
matching of the type they differentiate. Each diagram contributes

    n^{l - L m / 2} * (product of input contractions along type-0 edges),

with l the number of loops of the diagram's double-line expansion (L vertex
levels per factor; a type-0 edge joins level 1, a type-L edge joins level L,
a middle type joins two adjacent levels). The module enumerates these
diagrams exactly, evaluates the resulting polynomial in 1/n, places the
cluster-counting exponent prediction s_C = n_e + n_o/2 - m/2 next to it, and
Monte-Carlo-checks both on finite nets sampled through netcore.

Factors are numbered 1..m throughout, matching the subscripts in the
formulas above. Vector inputs are supported at L = 1; deeper nets take
scalar inputs, where the double-line loop count is what replaces the plain
cycle count of the shallow case.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .netcore import NetConfig, backward, forward, init_weights

__all__ = [
    "ContractionSpec",
    "DiagramInfo",
    "DiagramTerm",
    "DiagramCount",
    "ScalingReport",
    "enumerate_pairings",
    "conjecture_exponent",
    "exact_correlation",
    "double_line_loops",
    "feynman_components",
    "render_monomial",
    "mc_scaling_check",
]

MAX_FACTORS = 8
MAX_PAIRING_ELEMENTS = 12
MAX_DIAGRAMS = 2_000_000


def enumerate_pairings(k: int) -> list[tuple[tuple[int, int], ...]]:
    """All unordered pairings of the elements 0..2k-1; there are (2k-1)!!."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if 2 * k > MAX_PAIRING_ELEMENTS:
        raise ValueError(f"refusing to pair more than {MAX_PAIRING_ELEMENTS} elements")
    return _pairings_of(tuple(range(2 * k)))


def _pairings_of(items: tuple[int, ...]) -> list[tuple[tuple[int, int], ...]]:
    if not items:
        return [()]
    first, rest = items[0], items[1:]
    out = []
    for i, partner in enumerate(rest):
        remaining = rest[:i] + rest[i + 1 :]
        for tail in _pairings_of(remaining):
            out.append(((first, partner),) + tail)
    return out


@dataclass(frozen=True)
class ContractionSpec:
    """m derivative-tensor factors with pairwise-contracted indices.

    contractions lists one (i, j) entry per contracted index pair, with
    factors numbered 1..m; a factor's derivative order is the number of
    entries naming it. inputs holds one vector (or scalar) per factor.
    """

    m: int
    contractions: tuple[tuple[int, int], ...] = ()
    inputs: tuple = ()

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("need at least one factor")
        pairs = tuple((int(i), int(j)) for i, j in self.contractions)
        object.__setattr__(self, "contractions", pairs)
        for i, j in pairs:
            if not (1 <= i <= self.m and 1 <= j <= self.m):
                raise ValueError(f"contraction ({i}, {j}) names a factor outside 1..{self.m}")
        arrays = tuple(np.atleast_1d(np.asarray(x, dtype=float)) for x in self.inputs)
        object.__setattr__(self, "inputs", arrays)
        if len(arrays) != self.m:
            raise ValueError(f"need {self.m} inputs, got {len(arrays)}")
        if len({x.shape for x in arrays}) > 1:
            raise ValueError("inputs must share a dimension")

    @property
    def input_dim(self) -> int:
        return self.inputs[0].size

    @property
    def scalar_inputs(self) -> bool:
        return self.input_dim == 1

    @property
    def derivative_counts(self) -> tuple[int, ...]:
        counts = [0] * self.m
        for i, j in self.contractions:
            counts[i - 1] += 1
            counts[j - 1] += 1
        return tuple(counts)

    def input_labels(self) -> tuple[int, ...]:
        """Factor -> 1-based index of the first factor with the same input."""
        labels = []
        for idx, x in enumerate(self.inputs):
            for prev in range(idx):
                if np.array_equal(self.inputs[prev], x):
                    labels.append(labels[prev])
                    break
            else:
                labels.append(idx + 1)
        return tuple(labels)

    def cluster_components(self) -> list[tuple[int, ...]]:
        """Connected components of the factor graph drawn by contractions."""
        parent = list(range(self.m))

        def find(a: int) -> int:
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for i, j in self.contractions:
            ra, rb = find(i - 1), find(j - 1)
            if ra != rb:
                parent[ra] = rb
        groups: dict[int, list[int]] = {}
        for v in range(self.m):
            groups.setdefault(find(v), []).append(v + 1)
        return [tuple(g) for g in sorted(groups.values())]


def conjecture_exponent(spec: ContractionSpec) -> float:
    """s_C = n_e + n_o/2 - m/2 from the parities of the cluster components."""
    sizes = [len(c) for c in spec.cluster_components()]
    n_even = sum(1 for s in sizes if s % 2 == 0)
    n_odd = len(sizes) - n_even
    return n_even + n_odd / 2 - spec.m / 2


@dataclass(frozen=True)
class DiagramInfo:
    """One admissible diagram: its matchings, loop count, and input monomial."""

    edges_by_type: tuple[tuple[tuple[int, int], ...], ...]
    loops: int
    monomial: tuple


@dataclass(frozen=True)
class DiagramTerm:
    power_of_inv_n: int
    coefficient: int
    monomial: tuple


@dataclass(frozen=True)
class DiagramCount:
    """The exact expansion: per-diagram records plus the collected polynomial."""

    spec: ContractionSpec
    depth: int
    diagrams: tuple[DiagramInfo, ...]
    terms: tuple[DiagramTerm, ...]

    @property
    def leading_exponent(self) -> float | None:
        """Power of n of the dominant term; None for the zero polynomial."""
        if not self.terms:
            return None
        return -min(term.power_of_inv_n for term in self.terms)

    def monomial_value(self, monomial: tuple) -> float:
        reps = {label: self.spec.inputs[label - 1] for label in self.spec.input_labels()}
        value = 1.0
        for entry in monomial:
            if isinstance(entry, tuple):
                value *= float(reps[entry[0]] @ reps[entry[1]])
            else:
                value *= float(reps[entry][0])
        return value

    def evaluate(self, n: int) -> float:
        if n < 1:
            raise ValueError("width must be positive")
        return sum(
            term.coefficient * float(n) ** (-term.power_of_inv_n) * self.monomial_value(term.monomial)
            for term in self.terms
        )


def double_line_loops(
    edges_by_type: tuple[tuple[tuple[int, int], ...], ...], m: int, depth: int
) -> int:
    """Loop count of the double-line expansion of one diagram.

    Every factor spawns `depth` index levels; a type-0 edge identifies the
    level-1 indices of its endpoints, a type-L edge the level-L indices, and
    a middle type l the indices at levels l and l + 1. Each level vertex
    ends with degree two, so loops are the connected components.
    """
    parent = list(range(depth * m))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a: int, b: int) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb

    def vid(level_row: int, factor: int) -> int:
        return level_row * m + (factor - 1)

    for t, edges in enumerate(edges_by_type):
        for p, q in edges:
            if t == 0:
                union(vid(0, p), vid(0, q))
            elif t == depth:
                union(vid(depth - 1, p), vid(depth - 1, q))
            else:
                union(vid(t - 1, p), vid(t - 1, q))
                union(vid(t, p), vid(t, q))
    return len({find(v) for v in range(depth * m)})


def feynman_components(
    edges_by_type: tuple[tuple[tuple[int, int], ...], ...], m: int
) -> list[tuple[int, ...]]:
    """Connected components of the factor graph drawn by all matchings."""
    parent = list(range(m))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for edges in edges_by_type:
        for p, q in edges:
            ra, rb = find(p - 1), find(q - 1)
            if ra != rb:
                parent[ra] = rb
    groups: dict[int, list[int]] = {}
    for v in range(m):
        groups.setdefault(find(v), []).append(v + 1)
    return [tuple(g) for g in sorted(groups.values())]


def render_monomial(monomial: tuple) -> str:
    """Human-readable input monomial: "x1.x2*x3.x4" or "x1*x2" for scalars."""
    if not monomial:
        return "1"
    parts = []
    for entry in monomial:
        if isinstance(entry, tuple):
            parts.append(f"x{entry[0]}.x{entry[1]}")
        else:
            parts.append(f"x{entry}")
    return "*".join(parts)


def _monomial_key(m0_edges: tuple[tuple[int, int], ...], labels: tuple[int, ...], scalar: bool) -> tuple:
    if scalar:
        flat = []
        for p, q in m0_edges:
            flat.extend((labels[p - 1], labels[q - 1]))
        return tuple(sorted(flat))
    pairs = []
    for p, q in m0_edges:
        a, b = labels[p - 1], labels[q - 1]
        pairs.append((min(a, b), max(a, b)))
    return tuple(sorted(pairs))


def exact_correlation(spec: ContractionSpec, L: int) -> DiagramCount:
    """Enumerate every admissible diagram and collect the 1/n polynomial.

    Each contraction edge is assigned one of the L+1 weight types (no factor
    may repeat a type: the network is multilinear in its weight matrices);
    per type, the factors not consumed by an assigned edge are paired in all
    possible ways. Odd m admits no pairing and gives the zero polynomial.
    """
    if L < 1:
        raise ValueError("depth must be at least 1")
    if spec.m > MAX_FACTORS:
        raise ValueError(f"at most {MAX_FACTORS} factors are supported")
    if L > 1 and not spec.scalar_inputs:
        raise ValueError("vector inputs are supported at L = 1 only; deeper nets take scalars")
    labels = spec.input_labels()
    scalar = spec.scalar_inputs
    diagrams: list[DiagramInfo] = []
    poly: dict[tuple[int, tuple], int] = {}

    if spec.m % 2 == 1:
        return DiagramCount(spec=spec, depth=L, diagrams=(), terms=())

    edges = spec.contractions
    for assignment in itertools.product(range(L + 1), repeat=len(edges)):
        seen: set[tuple[int, int]] = set()
        valid = True
        for (i, j), t in zip(edges, assignment):
            if i == j or (i, t) in seen or (j, t) in seen:
                valid = False  # a factor differentiates each weight at most once
                break
            seen.add((i, t))
            seen.add((j, t))
        if not valid:
            continue
        forced: list[list[tuple[int, int]]] = [[] for _ in range(L + 1)]
        for (i, j), t in zip(edges, assignment):
            forced[t].append((min(i, j), max(i, j)))
        residual_pairings: list[list[tuple[tuple[int, int], ...]]] = []
        count = 1
        for t in range(L + 1):
            taken = {v for e in forced[t] for v in e}
            rest = tuple(v for v in range(1, spec.m + 1) if v not in taken)
            if len(rest) % 2 == 1:
                count = 0
                break
            pairings = _pairings_of(rest)
            residual_pairings.append(pairings)
            count *= len(pairings)
        if count == 0:
            continue
        if count > MAX_DIAGRAMS:
            raise ValueError(f"diagram enumeration exceeds {MAX_DIAGRAMS} diagrams")
        for combo in itertools.product(*residual_pairings):
            full = tuple(
                tuple(sorted(forced[t] + list(combo[t]))) for t in range(L + 1)
            )
            loops = double_line_loops(full, spec.m, L)
            monomial = _monomial_key(full[0], labels, scalar)
            diagrams.append(DiagramInfo(edges_by_type=full, loops=loops, monomial=monomial))
            key = (L * spec.m // 2 - loops, monomial)
            poly[key] = poly.get(key, 0) + 1

    terms = tuple(
        DiagramTerm(power_of_inv_n=p, coefficient=c, monomial=mono)
        for (p, mono), c in sorted(poly.items())
    )
    return DiagramCount(spec=spec, depth=L, diagrams=tuple(diagrams), terms=terms)


# -- Monte Carlo ---------------------------------------------------------------
#
# The estimator draws finite linear nets through netcore (ntk
# parameterization, unit weight variance, so stored entries are N(0,1) and
# the forward pass carries prod_l n_l^{-1/2}). That normalization divides by
# sqrt(n_0) once more than the expansion above assumes, so inputs are fed in
# scaled by sqrt(n_0), which makes the sampled f agree with
# n^{-L/2} W_L ... W_0 x identically in the weights.


def _grad_blocks(config: NetConfig, weights: list[np.ndarray], x: np.ndarray) -> list[np.ndarray]:
    trace = forward(config, weights, x)
    return backward(config, weights, trace, output_index=0).grads


def _block_dot(a: list[np.ndarray], b: list[np.ndarray]) -> float:
    return float(sum(np.vdot(u, v) for u, v in zip(a, b)))


def _hessian_vec(
    config: NetConfig, weights: list[np.ndarray], v: list[np.ndarray], x: np.ndarray
) -> list[np.ndarray]:
    """H(x) v for the multilinear chain: substitute v into one block at a
    time, backpropagate, and drop the substituted block's own gradient."""
    out = [np.zeros_like(w) for w in weights]
    for p in range(len(weights)):
        sub = list(weights)
        sub[p] = v[p]
        grads = _grad_blocks(config, sub, x)
        for q in range(len(weights)):
            if q != p:
                out[q] += grads[q]
    return out


def _chain_components(spec: ContractionSpec) -> list[tuple[str, tuple[int, ...]]]:
    """Classify cluster components as evaluable pieces.

    Supported shapes: isolated factors (plain outputs), contracted pairs
    (gradient dots), and open chains whose interior factors carry exactly
    two contractions (iterated Hessian-vector products). Anything else has
    no vector-pipeline evaluation here and is rejected.
    """
    degree = spec.derivative_counts
    adjacency: dict[int, list[int]] = {v: [] for v in range(1, spec.m + 1)}
    for i, j in spec.contractions:
        if i == j:
            raise ValueError("self-contractions vanish identically and have no MC form")
        adjacency[i].append(j)
        adjacency[j].append(i)
    components = []
    for comp in spec.cluster_components():
        if len(comp) == 1:
            v = comp[0]
            if degree[v - 1] != 0:
                raise ValueError("an isolated factor cannot carry derivatives")
            components.append(("point", comp))
            continue
        ends = [v for v in comp if degree[v - 1] == 1]
        middles = [v for v in comp if degree[v - 1] == 2]
        if len(ends) != 2 or len(ends) + len(middles) != len(comp):
            raise ValueError(
                "Monte Carlo supports chain-shaped clusters only "
                "(two rank-1 endpoints, rank-2 interior factors)"
            )
        order = [ends[0]]
        prev = None
        while True:
            nxt = [u for u in adjacency[order[-1]] if u != prev]
            if len(adjacency[order[-1]]) > len(set(adjacency[order[-1]])):
                raise ValueError("parallel contractions form a loop, not a chain")
            prev = order[-1]
            order.append(nxt[0])
            if degree[order[-1] - 1] == 1:
                break
        if len(order) != len(comp):
            raise ValueError("cluster is not a single chain")
        components.append(("chain", tuple(order)))
    return components


@dataclass(frozen=True)
class ScalingReport:
    """Per-width Monte Carlo estimates next to the exact values.

    slope_mean fits log |mean| against log width; slope_variance does the
    same for the replicate variance. exacts is None when the polynomial
    engine does not cover the requested geometry.
    """

    widths: tuple[int, ...]
    means: tuple[float, ...]
    std_errs: tuple[float, ...]
    variances: tuple[float, ...]
    exacts: tuple[float, ...] | None
    slope_mean: float
    slope_variance: float


def _fit_slope(widths: tuple[int, ...], values: np.ndarray) -> float:
    mask = np.abs(values) > 0
    if mask.sum() < 2:
        return math.nan
    x = np.log(np.asarray(widths, dtype=float)[mask])
    y = np.log(np.abs(values[mask]))
    return float(np.polyfit(x, y, 1)[0])


def mc_scaling_check(
    spec: ContractionSpec,
    L: int,
    widths: list[int],
    replicates: int = 2000,
    seed: int = 0,
) -> ScalingReport:
    """Estimate the correlation on finite nets and fit its width scaling."""
    if len(widths) < 3:
        raise ValueError("need at least three widths to fit a slope")
    if L < 1:
        raise ValueError("depth must be at least 1")
    if replicates < 2:
        raise ValueError("need at least two replicates")
    components = _chain_components(spec)
    d = spec.input_dim
    scaled = [x * math.sqrt(d) for x in spec.inputs]
    try:
        exact = exact_correlation(spec, L)
    except ValueError:
        exact = None

    means, ses, variances, exacts = [], [], [], []
    for w_idx, n in enumerate(widths):
        config = NetConfig(
            widths=(d,) + (int(n),) * L + (1,),
            activation="linear",
            parameterization="ntk",
            sigma_w2=1.0,
        )
        samples = np.empty(replicates)
        for r in range(replicates):
            weights = init_weights(config, seed=seed + 7919 * w_idx + r)
            value = 1.0
            for kind, comp in components:
                if kind == "point":
                    value *= float(forward(config, weights, scaled[comp[0] - 1]).output[0])
                else:
                    v = _grad_blocks(config, weights, scaled[comp[0] - 1])
                    for mid in comp[1:-1]:
                        v = _hessian_vec(config, weights, v, scaled[mid - 1])
                    value *= _block_dot(v, _grad_blocks(config, weights, scaled[comp[-1] - 1]))
            samples[r] = value
        means.append(float(samples.mean()))
        variances.append(float(samples.var(ddof=1)))
        ses.append(math.sqrt(variances[-1] / replicates))
        if exact is not None:
            exacts.append(exact.evaluate(n))

    return ScalingReport(
        widths=tuple(int(n) for n in widths),
        means=tuple(means),
        std_errs=tuple(ses),
        variances=tuple(variances),
        exacts=tuple(exacts) if exact is not None else None,
        slope_mean=_fit_slope(tuple(widths), np.array(means)),
        slope_variance=_fit_slope(tuple(widths), np.array(variances)),
    )
