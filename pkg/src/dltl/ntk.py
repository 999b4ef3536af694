"""Tangent-kernel machinery: empirical and limiting NTKs, exact linearized
training, and the two-layer convergence monitor.

The empirical tangent kernel of a network is the gram matrix of per-example
parameter gradients; at infinite width (ntk parameterization) it converges to
a deterministic limit assembled from the NNGP covariance recursion,

    Theta_0(x, x') = sum_{l=1..L+1} q_l(x, x') prod_{l'=l..L} chi_l'(x, x').

Under square loss the linearized model admits a closed-form solution at any
time t (matrix exponential of the train gram), and when the initial model is
the NNGP gaussian process the trained model stays a GP whose mean and
covariance are explicit; the t -> infinity GP agrees with the exact bayesian
posterior when only the last layer is trained and differs otherwise. The Du
two-layer relu setting gets a discrete GD monitor recording the loss, the
gram's smallest eigenvalue, and weight displacements against their
theoretical envelopes.

Datasets are column matrices throughout, matching netcore.forward: X has
shape (n_0, m) with one example per column.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .meanfield import GH_NODES, gauss_ev2, length_map
from .netcore import Activation, NetConfig, backward, forward

__all__ = [
    "KernelGram",
    "KernelRecursionState",
    "LinearizedSolution",
    "LinearizedPrediction",
    "AlignmentReport",
    "DuTrajectory",
    "empirical_ntk",
    "nngp_recursion",
    "nngp_gram",
    "limiting_ntk",
    "linearize",
    "linearized_train",
    "bayes_posterior",
    "h_infinity_gram",
    "du_convergence_monitor",
    "alignment",
]

KERNEL_TAGS = ("empirical_ntk", "limiting_ntk", "nngp", "h_infinity", "h_t")

SYMMETRY_TOL = 1e-10
EIG_FLOOR = -1e-8
# Grams are considered invertible when the smallest eigenvalue clears this.
SINGULAR_TOL = 1e-10


@dataclass(frozen=True)
class KernelGram:
    """A kernel evaluated on a dataset: symmetric PSD within tolerance.

    tag names which kernel the matrix is (one of KERNEL_TAGS); t carries the
    training time for time-indexed kernels and is None for static ones.
    """

    matrix: np.ndarray
    tag: str
    t: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "matrix", np.asarray(self.matrix, dtype=float))
        if self.tag not in KERNEL_TAGS:
            raise ValueError(f"unknown kernel tag {self.tag!r}")
        k = self.matrix
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise ValueError(f"kernel gram must be square, got shape {k.shape}")
        asym = float(np.max(np.abs(k - k.T), initial=0.0))
        if asym > SYMMETRY_TOL:
            raise ValueError(f"kernel gram asymmetry {asym:.3e} exceeds {SYMMETRY_TOL}")
        eigs = np.linalg.eigvalsh(k)
        if eigs.size and eigs[0] < EIG_FLOOR:
            raise ValueError(f"kernel gram has eigenvalue {eigs[0]:.3e} below {EIG_FLOOR}")

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def lambda_min(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])


@dataclass(frozen=True)
class KernelRecursionState:
    """Per-layer NNGP covariances and derivative multipliers for one pair.

    Arrays are indexed by layer: q11[i], q12[i], q22[i] hold
    q_{i+1}(x,x), q_{i+1}(x,x'), q_{i+1}(x',x') for i = 0..L, and chi[i]
    holds chi_{i+1}(x,x') for i = 0..L-1.
    """

    q11: np.ndarray
    q12: np.ndarray
    q22: np.ndarray
    chi: np.ndarray

    def __post_init__(self):
        for name in ("q11", "q12", "q22", "chi"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (self.q11.shape == self.q12.shape == self.q22.shape):
            raise ValueError("q arrays must share a shape")
        if self.chi.shape != (self.q11.size - 1,):
            raise ValueError("need exactly one chi per hidden-to-output step")
        bound = np.sqrt(self.q11 * self.q22) + 1e-10
        if np.any(np.abs(self.q12) > bound):
            raise ValueError("cross covariance exceeds the Cauchy-Schwarz bound")

    @property
    def depth(self) -> int:
        return self.q11.size - 1

    def ntk_value(self) -> float:
        """Theta_0(x, x') assembled from the recursion."""
        total = 0.0
        for l in range(self.q11.size):
            total += self.q12[l] * float(np.prod(self.chi[l:]))
        return total

    def nngp_value(self) -> float:
        """q_{L+1}(x, x'), the NNGP covariance of the outputs."""
        return float(self.q12[-1])


# -- two-dimensional gaussian moments -----------------------------------------
#
# The recursion needs E phi(u) phi(v) and E phi'(u) phi'(v) for a centered
# gaussian pair. Smooth activations go through the tensor Gauss-Hermite rule;
# for the piecewise-linear kinds that rule stalls near 1e-3 (the integrand
# kinks along two lines through the origin), so those are integrated in polar
# coordinates instead: the radial factor is a gamma integral, and on each
# angular arc where both factors are single pieces the integrand is a smooth
# trig expression handled by Gauss-Legendre exactly.

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)


def _piecewise_slopes(act: Activation) -> tuple[float, float] | None:
    if act.kind == "linear":
        return (1.0, 1.0)
    if act.kind == "relu":
        return (1.0, 0.0)
    if act.kind == "leaky_relu":
        return (1.0, float(act.alpha))
    return None


def _half_plane_arc(center1: float, center2: float) -> tuple[float, float]:
    """Intersection of two half-circle arcs given by their center angles.

    Each half-plane {w : w . e(c) > 0} cuts the unit circle in the arc
    (c - pi/2, c + pi/2); two such arcs always intersect in a single arc.
    """
    d = math.remainder(center2 - center1, 2 * math.pi)
    lo = max(-math.pi / 2, d - math.pi / 2)
    hi = min(math.pi / 2, d + math.pi / 2)
    return center1 + lo, center1 + hi


def _polar_pair_moments(c: float, q11: float, q22: float, slopes: tuple[float, float]) -> tuple[float, float]:
    """(E phi(u) phi(v), E phi'(u) phi'(v)) for piecewise-linear phi.

    With u = sqrt(q11) r cos(a), v = sqrt(q22) r sin(a + d) where
    sin(d) = c, the radial integral is exact and each sign quadrant
    contributes its slopes times an arc integral of cos(a) sin(a + d).
    """
    c = min(1.0, max(-1.0, c))
    d = math.asin(c)
    # u > 0 on the arc centered at 0; v > 0 on the arc centered at pi/2 - d.
    centers_u = {1.0: 0.0, -1.0: math.pi}
    centers_v = {1.0: math.pi / 2 - d, -1.0: 3 * math.pi / 2 - d}
    m_phi = 0.0
    m_deriv = 0.0
    for su, slope_u in ((1.0, slopes[0]), (-1.0, slopes[1])):
        for sv, slope_v in ((1.0, slopes[0]), (-1.0, slopes[1])):
            lo, hi = _half_plane_arc(centers_u[su], centers_v[sv])
            if hi <= lo:
                continue
            m_deriv += slope_u * slope_v * (hi - lo) / (2 * math.pi)
            half = 0.5 * (hi - lo)
            mid = 0.5 * (hi + lo)
            a = mid + half * _GL_NODES
            arc = half * float(_GL_WEIGHTS @ (np.cos(a) * np.sin(a + d)))
            m_phi += slope_u * slope_v * arc / math.pi
    return math.sqrt(q11 * q22) * m_phi, m_deriv


def _pair_moments(
    c: float, q11: float, q22: float, sigma_w2: float, act: Activation, nodes: int
) -> tuple[float, float]:
    """(sigma_w^2 E phi phi, sigma_w^2 E phi' phi') for one gaussian pair."""
    slopes = _piecewise_slopes(act)
    if slopes is not None:
        m_phi, m_deriv = _polar_pair_moments(c, q11, q22, slopes)
        return sigma_w2 * m_phi, sigma_w2 * m_deriv
    m_phi = gauss_ev2(act, act, c, q11, q22, nodes=nodes)
    m_deriv = gauss_ev2(act.deriv, act.deriv, c, q11, q22, nodes=nodes)
    return sigma_w2 * m_phi, sigma_w2 * m_deriv


def nngp_recursion(
    x: np.ndarray, x_prime: np.ndarray, config: NetConfig, nodes: int = GH_NODES
) -> KernelRecursionState:
    """Run the covariance recursion for one input pair.

    q_1 = (sigma_w^2 / n_0) x^T x', then
    q_{l+1} = sigma_w^2 E phi(u) phi(v) and chi_l = sigma_w^2 E phi'(u) phi'(v)
    with (u, v) ~ N(0, Sigma_l). Diagonal entries advance through
    meanfield.length_map so q_l(x, x) matches its iterates exactly.
    """
    x = np.asarray(x, dtype=float).ravel()
    xp = np.asarray(x_prime, dtype=float).ravel()
    if x.shape != xp.shape:
        raise ValueError("inputs must share a dimension")
    n0 = config.widths[0]
    if x.size != n0:
        raise ValueError(f"inputs have dimension {x.size}, config expects {n0}")
    sw2 = config.sigma_w2
    act = config.activation
    scale = sw2 / n0
    q11 = [scale * float(x @ x)]
    q12 = [scale * float(x @ xp)]
    q22 = [scale * float(xp @ xp)]
    chi = []
    for _ in range(config.depth):
        denom = math.sqrt(q11[-1] * q22[-1])
        c = q12[-1] / denom if denom > 0 else 0.0
        c = min(1.0, max(-1.0, c))
        q_cross, chi_l = _pair_moments(c, q11[-1], q22[-1], sw2, act, nodes)
        chi.append(chi_l)
        q12.append(q_cross)
        q11.append(length_map(q11[-1], sw2, act, nodes=nodes).q_next)
        q22.append(length_map(q22[-1], sw2, act, nodes=nodes).q_next)
    return KernelRecursionState(q11=np.array(q11), q12=np.array(q12), q22=np.array(q22), chi=np.array(chi))


def _as_columns(x: np.ndarray, n0: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] != n0:
        raise ValueError(f"dataset must have shape ({n0}, m), got {x.shape}")
    return x


def _pair_kernels(
    x_left: np.ndarray, x_right: np.ndarray, config: NetConfig, nodes: int
) -> tuple[np.ndarray, np.ndarray]:
    """(Theta_0, q_{L+1}) cross matrices between two column datasets."""
    xl = _as_columns(x_left, config.widths[0])
    xr = _as_columns(x_right, config.widths[0])
    theta = np.empty((xl.shape[1], xr.shape[1]))
    nngp = np.empty_like(theta)
    for i in range(xl.shape[1]):
        for j in range(xr.shape[1]):
            state = nngp_recursion(xl[:, i], xr[:, j], config, nodes=nodes)
            theta[i, j] = state.ntk_value()
            nngp[i, j] = state.nngp_value()
    return theta, nngp


def _square_kernels(x: np.ndarray, config: NetConfig, nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """(Theta_0, q_{L+1}) grams on one dataset, computed on i <= j only."""
    x = _as_columns(x, config.widths[0])
    m = x.shape[1]
    theta = np.empty((m, m))
    nngp = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            state = nngp_recursion(x[:, i], x[:, j], config, nodes=nodes)
            theta[i, j] = theta[j, i] = state.ntk_value()
            nngp[i, j] = nngp[j, i] = state.nngp_value()
    return theta, nngp


def nngp_gram(x: np.ndarray, config: NetConfig, nodes: int = GH_NODES) -> KernelGram:
    """q_{L+1} evaluated on a column dataset."""
    _, nngp = _square_kernels(x, config, nodes)
    return KernelGram(nngp, tag="nngp")


def limiting_ntk(
    x: np.ndarray,
    config: NetConfig,
    nodes: int = GH_NODES,
    last_layer_only: bool = False,
    outputs: int | None = None,
) -> KernelGram:
    """Deterministic limit kernel Theta_0 on a column dataset.

    last_layer_only freezes everything below the output layer, which
    collapses the kernel to q_{L+1}. Multi-output kernels are diagonal:
    passing outputs=k returns the scalar gram kron identity, indexed with
    the example major and the output component minor.
    """
    if config.parameterization != "ntk":
        raise ValueError("the limit kernel is defined for the ntk parameterization")
    theta, nngp = _square_kernels(x, config, nodes)
    gram = nngp if last_layer_only else theta
    if outputs is not None:
        if outputs < 1:
            raise ValueError("outputs must be a positive count")
        gram = np.kron(gram, np.eye(outputs))
    return KernelGram(gram, tag="limiting_ntk")


# -- empirical kernel ----------------------------------------------------------


def _gradient_features(config: NetConfig, weights: list[np.ndarray], x: np.ndarray) -> np.ndarray:
    """Per-example, per-output parameter gradients, flattened.

    Rows are ordered example major, output component minor, matching the
    kron layout of the multi-output limit kernel.
    """
    x = _as_columns(x, config.widths[0])
    m = x.shape[1]
    k = config.widths[-1]
    n_params = sum(w.size for w in weights)
    feats = np.empty((m * k, n_params))
    for i in range(m):
        trace = forward(config, weights, x[:, i])
        for a in range(k):
            bt = backward(config, weights, trace, output_index=a)
            feats[i * k + a] = np.concatenate([g.ravel() for g in bt.grads])
    return feats


def empirical_ntk(
    config: NetConfig,
    weights: list[np.ndarray],
    x: np.ndarray,
    t_tag: float | None = None,
) -> KernelGram:
    """Gram of exact per-example parameter gradients.

    Scalar-output nets give an m x m gram; k outputs give the full
    (m k) x (m k) block gram in the example-major layout.
    """
    feats = _gradient_features(config, weights, x)
    return KernelGram(feats @ feats.T, tag="empirical_ntk", t=t_tag)


# -- exact linearized training -------------------------------------------------


@dataclass(frozen=True)
class LinearizedSolution:
    """Everything the closed-form square-loss solution needs at query time.

    gram is the train-set kernel (empirical or limiting), eigvals/eigvecs its
    eigendecomposition, f0_train the initial outputs, y the labels, eta the
    learning rate, and m the train size appearing in exp(-eta Theta t / m).
    """

    gram: KernelGram
    eigvals: np.ndarray
    eigvecs: np.ndarray
    f0_train: np.ndarray
    y: np.ndarray
    eta: float
    m: int
    config: NetConfig
    weights: list[np.ndarray] = field(repr=False)
    x_train: np.ndarray = field(repr=False)
    kernel: str = "limiting"
    nodes: int = GH_NODES

    def __post_init__(self):
        recon = (self.eigvecs * self.eigvals) @ self.eigvecs.T
        err = float(np.max(np.abs(recon - self.gram.matrix)))
        if err > 1e-8:
            raise ValueError(f"eigendecomposition misses the gram by {err:.3e}")

    def exp_factor(self, t: float) -> np.ndarray:
        """E_t = exp(-eta Theta t / m) on the train set."""
        decay = np.exp(-self.eta * self.eigvals * t / self.m)
        return (self.eigvecs * decay) @ self.eigvecs.T

    def solve_factor(self, t: float) -> np.ndarray:
        """B_t = Theta^{-1} (I - E_t), evaluated spectrally."""
        lam = self.eigvals
        coeff = -np.expm1(-self.eta * lam * t / self.m) / lam
        return (self.eigvecs * coeff) @ self.eigvecs.T


@dataclass(frozen=True)
class LinearizedPrediction:
    """Point prediction and, for kernel-limit solutions, the GP moments."""

    t: float
    f_lin: np.ndarray
    gp_mean: np.ndarray | None = None
    gp_cov: np.ndarray | None = None


def linearize(
    config: NetConfig,
    weights: list[np.ndarray],
    x_train: np.ndarray,
    y: np.ndarray,
    eta: float,
    kernel: str = "limiting",
    nodes: int = GH_NODES,
) -> LinearizedSolution:
    """Prepare the closed-form solution for one training set.

    kernel selects the train gram: "empirical" (gradient features of the
    given weights), "limiting" (Theta_0), or "last_layer" (q_{L+1}, the
    kernel of output-layer-only training). The gram must be invertible;
    a smallest eigenvalue at or below 1e-10 is an error.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    if kernel not in ("empirical", "limiting", "last_layer"):
        raise ValueError(f"unknown kernel choice {kernel!r}")
    x_train = _as_columns(x_train, config.widths[0])
    m = x_train.shape[1]
    k = config.widths[-1]
    y = np.asarray(y, dtype=float).ravel()
    if y.size != m * k:
        raise ValueError(f"need {m * k} label entries, got {y.size}")
    if kernel == "empirical":
        gram = empirical_ntk(config, weights, x_train, t_tag=0.0)
    else:
        gram = limiting_ntk(
            x_train,
            config,
            nodes=nodes,
            last_layer_only=(kernel == "last_layer"),
            outputs=k if k > 1 else None,
        )
    eigvals, eigvecs = np.linalg.eigh(gram.matrix)
    if eigvals[0] <= SINGULAR_TOL:
        raise ValueError(
            f"train gram is singular: lambda_min = {eigvals[0]:.3e} <= {SINGULAR_TOL}"
        )
    f0 = forward(config, weights, x_train).output.T.ravel()
    return LinearizedSolution(
        gram=gram,
        eigvals=eigvals,
        eigvecs=eigvecs,
        f0_train=f0,
        y=y,
        eta=eta,
        m=m,
        config=config,
        weights=[w.copy() for w in weights],
        x_train=x_train.copy(),
        kernel=kernel,
        nodes=nodes,
    )


def linearized_train(
    sol: LinearizedSolution, x_query: np.ndarray, t: float
) -> LinearizedPrediction:
    """Evaluate the linearized model at time t on query columns.

    f_lin,t(x) = f_0(x) - Theta(x, X) Theta^{-1} (I - E_t) (f_0(X) - y),
    E_t = exp(-eta Theta t / m); t = inf gives the fully trained model.
    Solutions built on a limit kernel also return the GP moments mu_lin,t
    and q_lin,t of the trained infinite-width model (scalar output only).
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    config = sol.config
    x_query = _as_columns(x_query, config.widths[0])
    k = config.widths[-1]
    f0_query = forward(config, sol.weights, x_query).output.T.ravel()
    b_t = sol.solve_factor(t)
    if sol.kernel == "empirical":
        q_feats = _gradient_features(config, sol.weights, x_query)
        t_feats = _gradient_features(config, sol.weights, sol.x_train)
        theta_cross = q_feats @ t_feats.T
        f_lin = f0_query + theta_cross @ b_t @ (sol.y - sol.f0_train)
        return LinearizedPrediction(t=t, f_lin=f_lin)

    theta_cross, nngp_cross = _pair_kernels(x_query, sol.x_train, config, sol.nodes)
    if sol.kernel == "last_layer":
        theta_cross = nngp_cross
    if k > 1:
        theta_big = np.kron(theta_cross, np.eye(k))
        f_lin = f0_query + theta_big @ b_t @ (sol.y - sol.f0_train)
        return LinearizedPrediction(t=t, f_lin=f_lin)

    f_lin = f0_query + theta_cross @ b_t @ (sol.y - sol.f0_train)
    gp_mean = theta_cross @ b_t @ sol.y
    _, nngp_train = _square_kernels(sol.x_train, config, sol.nodes)
    _, nngp_query = _square_kernels(x_query, config, sol.nodes)
    cross_term = theta_cross @ b_t @ nngp_cross.T
    gp_cov = (
        nngp_query
        - cross_term
        - cross_term.T
        + theta_cross @ b_t @ nngp_train @ b_t @ theta_cross.T
    )
    return LinearizedPrediction(t=t, f_lin=f_lin, gp_mean=gp_mean, gp_cov=gp_cov)


def bayes_posterior(
    q_gram: KernelGram | None,
    x_train: np.ndarray,
    y: np.ndarray,
    x_query: np.ndarray,
    config: NetConfig,
    nodes: int = GH_NODES,
) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free GP regression under the NNGP prior q_{L+1}.

    mean = q(x, X) q(X, X)^{-1} y and
    cov = q(x, x') - q(x, X) q(X, X)^{-1} q(X, x'). q_gram may carry a
    precomputed train gram; None computes it from config.
    """
    x_train = _as_columns(x_train, config.widths[0])
    y = np.asarray(y, dtype=float).ravel()
    if y.size != x_train.shape[1]:
        raise ValueError("bayes_posterior handles scalar outputs, one label per column")
    if q_gram is None:
        q_gram = nngp_gram(x_train, config, nodes=nodes)
    if q_gram.size != x_train.shape[1]:
        raise ValueError("train gram size does not match the dataset")
    eigvals, eigvecs = np.linalg.eigh(q_gram.matrix)
    if eigvals[0] <= SINGULAR_TOL:
        raise ValueError(
            f"prior gram is singular: lambda_min = {eigvals[0]:.3e} <= {SINGULAR_TOL}"
        )
    inv = (eigvecs / eigvals) @ eigvecs.T
    _, q_cross = _pair_kernels(x_query, x_train, config, nodes)
    _, q_query = _square_kernels(x_query, config, nodes)
    mean = q_cross @ inv @ y
    cov = q_query - q_cross @ inv @ q_cross.T
    return mean, cov


# -- the Du two-layer setting --------------------------------------------------


def h_infinity_gram(
    x: np.ndarray, method: str = "angle", mc_samples: int = 200_000, seed: int = 0
) -> KernelGram:
    """Expected gram H^inf_kl = E_w 1[w.x_k > 0] 1[w.x_l > 0] x_k^T x_l.

    method "angle" uses the closed-form arc measure
    x_k^T x_l (pi - theta_kl) / (2 pi); "mc" averages indicator products
    over w ~ N(0, I) and serves as the oracle for the closed form.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError("expected a (d, m) column dataset")
    grams = x.T @ x
    if method == "angle":
        norms = np.sqrt(np.diag(grams))
        outer = np.outer(norms, norms)
        with np.errstate(invalid="ignore", divide="ignore"):
            cosines = np.where(outer > 0, grams / np.where(outer > 0, outer, 1.0), 0.0)
        theta = np.arccos(np.clip(cosines, -1.0, 1.0))
        h = grams * (math.pi - theta) / (2 * math.pi)
    elif method == "mc":
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((mc_samples, x.shape[0]))
        masks = (w @ x > 0).astype(float)
        h = grams * (masks.T @ masks) / mc_samples
    else:
        raise ValueError(f"unknown method {method!r}")
    h = 0.5 * (h + h.T)
    return KernelGram(h, tag="h_infinity")


@dataclass(frozen=True)
class DuTrajectory:
    """GD trajectories of the two-layer relu net with trained input weights.

    All arrays are indexed by the recorded step; t = step * eta. loss is
    the squared error ||y - f_t(X)||^2 whose theoretical envelope is
    exp(-lambda_0 t) loss(0), h_drift is ||H(t) - H(0)||_F.
    """

    t: np.ndarray
    loss: np.ndarray
    lambda_min_h: np.ndarray
    max_displacement: np.ndarray
    h_drift: np.ndarray
    h_infinity: KernelGram
    lambda0: float
    r_prime: float


def du_convergence_monitor(
    x: np.ndarray,
    y: np.ndarray,
    n: int,
    eta: float,
    T: float,
    seed: int = 0,
) -> DuTrajectory:
    """Full-batch GD on f(x) = (1/sqrt(n)) sum_i a_i relu(w_i . x).

    Inputs must lie in the unit ball and labels in (-1, 1). Signs a_i are
    drawn uniform from {-1, +1} and frozen; only the input weights move,
    minimizing (1/2) ||f(X) - y||^2. The monitor records the loss, the
    smallest eigenvalue of H(t) (strict-> indicators, matching the
    gradient), the largest per-neuron displacement, and the gram drift,
    stepping until t = steps * eta reaches T. Divergence is recorded, not
    raised.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError("expected a (d, m) column dataset")
    y = np.asarray(y, dtype=float).ravel()
    d, m = x.shape
    if y.size != m:
        raise ValueError("one label per column")
    norms = np.linalg.norm(x, axis=0)
    if np.any(norms > 1 + 1e-12):
        raise ValueError("inputs must lie in the unit ball")
    if np.any(np.abs(y) >= 1):
        raise ValueError("labels must lie strictly inside (-1, 1)")
    if eta <= 0 or T <= 0:
        raise ValueError("eta and T must be positive")

    h_inf = h_infinity_gram(x, method="angle")
    lambda0 = h_inf.lambda_min()

    rng = np.random.default_rng(seed)
    w = rng.standard_normal((n, d))
    w0 = w.copy()
    a = rng.integers(0, 2, size=n) * 2.0 - 1.0
    grams = x.T @ x

    steps = int(math.ceil(T / eta))
    t_grid = np.arange(steps + 1) * eta
    loss = np.empty(steps + 1)
    lam_min = np.empty(steps + 1)
    disp = np.empty(steps + 1)
    drift = np.empty(steps + 1)
    h0 = None

    for k in range(steps + 1):
        pre = w @ x
        masks = pre > 0
        f = (a @ np.where(masks, pre, 0.0)) / math.sqrt(n)
        resid = f - y
        h_t = grams * (masks.T.astype(float) @ masks.astype(float)) / n
        if h0 is None:
            h0 = h_t
        loss[k] = float(resid @ resid)
        lam_min[k] = float(np.linalg.eigvalsh(h_t)[0])
        disp[k] = float(np.max(np.linalg.norm(w - w0, axis=1)))
        drift[k] = float(np.linalg.norm(h_t - h0))
        if k == steps:
            break
        grad = (a[:, None] * (masks * resid)) @ x.T / math.sqrt(n)
        w -= eta * grad

    r_prime = (2.0 / lambda0) * math.sqrt(m / n) * math.sqrt(loss[0])
    return DuTrajectory(
        t=t_grid,
        loss=loss,
        lambda_min_h=lam_min,
        max_displacement=disp,
        h_drift=drift,
        h_infinity=h_inf,
        lambda0=lambda0,
        r_prime=r_prime,
    )


# -- kernel-label alignment ----------------------------------------------------


@dataclass(frozen=True)
class AlignmentReport:
    """Spectral decomposition of the residual against a fixed kernel.

    Gradient flow u' = -H (u - y) decays each eigencomponent p_k at rate
    lambda_k, so the predicted squared error is
    curve(t) = sum_k exp(-2 lambda_k t) p_k^2 on the stored grid.
    """

    eigvals: np.ndarray
    eigvecs: np.ndarray
    projections: np.ndarray
    t: np.ndarray
    curve: np.ndarray

    def time_to_fraction(self, fraction: float) -> float:
        """First grid time where the curve drops to fraction of curve[0]."""
        if not 0 < fraction < 1:
            raise ValueError("fraction must lie in (0, 1)")
        target = fraction * self.curve[0]
        hit = np.nonzero(self.curve <= target)[0]
        return float(self.t[hit[0]]) if hit.size else math.inf


def alignment(
    h_inf: KernelGram,
    y: np.ndarray,
    u0: np.ndarray,
    t_grid: np.ndarray | None = None,
    points: int = 200,
) -> AlignmentReport:
    """Decompose y - u0 in the kernel eigenbasis and predict the loss curve.

    The default grid is log-spaced from well before the fastest mode turns
    over to well after the slowest positive mode has died.
    """
    k = h_inf.matrix
    y = np.asarray(y, dtype=float).ravel()
    u0 = np.asarray(u0, dtype=float).ravel()
    if y.shape != u0.shape or y.size != k.shape[0]:
        raise ValueError("y and u0 must match the gram size")
    eigvals, eigvecs = np.linalg.eigh(k)
    resid = y - u0
    projections = eigvecs.T @ resid
    total = float(projections @ projections)
    if abs(total - float(resid @ resid)) > 1e-8 * max(1.0, float(resid @ resid)):
        raise ValueError("projection energies do not add up to the residual norm")
    if t_grid is None:
        lam_max = float(eigvals[-1])
        if lam_max <= 0:
            raise ValueError("kernel has no positive eigenvalue, nothing decays")
        positive = eigvals[eigvals > 1e-12 * lam_max]
        lam_min = float(positive[0])
        t_grid = np.logspace(
            math.log10(0.01 / lam_max), math.log10(20.0 / lam_min), points
        )
    else:
        t_grid = np.asarray(t_grid, dtype=float)
    curve = np.exp(-2.0 * np.outer(t_grid, eigvals)) @ (projections**2)
    return AlignmentReport(
        eigvals=eigvals,
        eigvecs=eigvecs,
        projections=projections,
        t=t_grid,
        curve=curve,
    )
