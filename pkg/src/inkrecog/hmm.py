"""HMM engine: scaled forward-backward, Baum-Welch, Viterbi, mixtures.

Models are immutable during inference.  Forward/backward work on per-frame
normalized quantities so sequences of arbitrary length stay in range; Viterbi
runs fully in the log domain.  Emissions are either discrete symbol tables or
diagonal-covariance Gaussian mixtures.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    EmissionMismatchError,
    InvariantError,
    NoDecodableSequencesError,
    NotGaussianError,
    ZeroProbabilityError,
)
from .features import FeatureSequence

log = logging.getLogger(__name__)

TOPOLOGY_ERGODIC = "ergodic"
TOPOLOGY_LTR = "ltr"


@dataclass(frozen=True)
class DiscreteEmission:
    probs: np.ndarray  # (N, M)

    def __post_init__(self):
        p = np.ascontiguousarray(self.probs, dtype=np.float64)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def n_symbols(self) -> int:
        return self.probs.shape[1]

    def log_prob_matrix(self, obs: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            logp = np.log(self.probs)
        return logp[:, obs].T  # (T, N)


@dataclass(frozen=True)
class GaussianMixtureEmission:
    weights: np.ndarray    # (N, K)
    means: np.ndarray      # (N, K, D)
    variances: np.ndarray  # (N, K, D), diagonal

    def __post_init__(self):
        for name in ("weights", "means", "variances"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.means.shape[2]

    @property
    def n_components(self) -> int:
        return self.means.shape[1]

    def log_component_densities(self, obs: np.ndarray) -> np.ndarray:
        """(T, N, K) log of weight * gaussian density."""
        n, k, d = self.means.shape
        # expand the diagonal quadratic form into matmuls so no (T,N,K,D)
        # temporary is materialized
        inv = (1.0 / self.variances).reshape(n * k, d)
        mean_inv = (self.means.reshape(n * k, d) * inv)
        quad = ((obs * obs) @ inv.T - 2.0 * (obs @ mean_inv.T)
                + (mean_inv * self.means.reshape(n * k, d)).sum(axis=1))
        log_norm = -0.5 * np.sum(np.log(2 * np.pi * self.variances), axis=2)
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return (logw + log_norm)[None] - 0.5 * quad.reshape(-1, n, k)

    def log_prob_matrix(self, obs: np.ndarray) -> np.ndarray:
        comp = self.log_component_densities(obs)
        m = comp.max(axis=2, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        return (m[..., 0] + np.log(np.sum(np.exp(comp - m), axis=2)))


Emission = DiscreteEmission | GaussianMixtureEmission


@dataclass(frozen=True)
class HmmModel:
    pi: np.ndarray
    trans: np.ndarray
    emission: Emission
    topology: str = TOPOLOGY_ERGODIC
    # per-state probability of leaving the model after a frame; all rows of
    # trans plus exit sum to 1.  Zero everywhere for standalone models.
    exit: np.ndarray | None = None

    def __post_init__(self):
        pi = np.ascontiguousarray(self.pi, dtype=np.float64)
        A = np.ascontiguousarray(self.trans, dtype=np.float64)
        ex = (np.zeros(len(pi)) if self.exit is None
              else np.ascontiguousarray(self.exit, dtype=np.float64))
        for arr in (pi, A, ex):
            arr.setflags(write=False)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "trans", A)
        object.__setattr__(self, "exit", ex)

    @property
    def n_states(self) -> int:
        return len(self.pi)

    def validate(self, atol: float = 1e-9):
        n = self.n_states
        if self.trans.shape != (n, n):
            raise InvariantError("transition matrix shape mismatch")
        if abs(self.pi.sum() - 1.0) > atol:
            raise InvariantError("pi does not sum to 1")
        rowsum = self.trans.sum(axis=1) + self.exit
        if np.abs(rowsum - 1.0).max() > atol:
            raise InvariantError("transition rows (plus exit) do not sum to 1")
        if self.topology == TOPOLOGY_LTR:
            bad = self.trans.copy()
            idx = np.arange(n)
            bad[idx, idx] = 0.0
            bad[idx[:-1], idx[:-1] + 1] = 0.0
            if np.any(bad != 0):
                raise InvariantError("left-to-right model has a skip transition")
        if isinstance(self.emission, DiscreteEmission):
            if np.abs(self.emission.probs.sum(axis=1) - 1.0).max() > atol:
                raise InvariantError("emission rows do not sum to 1")
        else:
            if np.abs(self.emission.weights.sum(axis=1) - 1.0).max() > atol:
                raise InvariantError("mixture weights do not sum to 1")
            if np.any(self.emission.variances <= 0):
                raise InvariantError("non-positive variance")
        return self


@dataclass(frozen=True)
class TrainConfig:
    theta: float = 1e-4
    max_iterations: int = 48
    variance_floor: float = 1e-3
    target_components: int = 48

    def __post_init__(self):
        if self.theta <= 0 or self.max_iterations <= 0 \
                or self.variance_floor <= 0 or self.target_components <= 0:
            raise InvariantError("train config values must be positive")


@dataclass(frozen=True)
class ForwardResult:
    alpha: np.ndarray       # (T, N) per-frame normalized
    log_scales: np.ndarray  # (T,), log P = log_scales.sum()
    log_likelihood: float


@dataclass(frozen=True)
class TrellisPosteriors:
    log_likelihood: float
    gamma: np.ndarray  # (T, N)
    xi: np.ndarray     # (T-1, N, N)
    alpha: np.ndarray
    beta: np.ndarray
    log_scales: np.ndarray


@dataclass(frozen=True)
class ViterbiResult:
    path: np.ndarray       # (T,) state indices
    log_prob: float
    backpointers: np.ndarray  # (T, N)


def _as_observations(model: HmmModel, obs):
    """Coerce obs to the array form matching the emission model."""
    if isinstance(model.emission, DiscreteEmission):
        if isinstance(obs, FeatureSequence):
            raise EmissionMismatchError("discrete model given continuous features")
        arr = np.asarray(obs)
        if arr.ndim != 1 or not np.issubdtype(arr.dtype, np.integer):
            raise EmissionMismatchError("discrete model needs a 1-D symbol array")
        if len(arr) < 1:
            raise EmissionMismatchError("empty observation sequence")
        if arr.min() < 0 or arr.max() >= model.emission.n_symbols:
            raise EmissionMismatchError(
                f"symbol out of range [0, {model.emission.n_symbols})")
        return arr
    frames = obs.frames if isinstance(obs, FeatureSequence) else np.asarray(obs, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != model.emission.dim:
        raise EmissionMismatchError(
            f"continuous model expects (T, {model.emission.dim}) features")
    if len(frames) < 1:
        raise EmissionMismatchError("empty observation sequence")
    return frames


def log_emission_matrix(model: HmmModel, obs) -> np.ndarray:
    return model.emission.log_prob_matrix(_as_observations(model, obs))


def _forward_recursion(pi, trans, bnorm):
    T, n = bnorm.shape
    alpha = np.empty((T, n))
    r = np.empty(T)
    cur = pi * bnorm[0]
    for t in range(T):
        if t > 0:
            cur = np.dot(alpha[t - 1], trans) * bnorm[t]
        s = cur.sum()
        r[t] = s
        if s <= 0.0:
            return alpha, r, t  # bad frame; caller raises
        alpha[t] = cur / s
    return alpha, r, -1


def _backward_recursion(trans, bnorm, rdiv, beta_last):
    T, n = bnorm.shape
    beta = np.empty((T, n))
    beta[T - 1] = beta_last
    for t in range(T - 2, -1, -1):
        beta[t] = np.dot(trans, bnorm[t + 1] * beta[t + 1]) / rdiv[t + 1]
    return beta


try:
    from numba import njit as _njit

    _forward_recursion = _njit(cache=True)(_forward_recursion)
    _backward_recursion = _njit(cache=True)(_backward_recursion)
except ImportError:  # pragma: no cover - exercised only without numba
    pass


def _scaled_forward(model: HmmModel, logb: np.ndarray):
    T, n = logb.shape
    m = logb.max(axis=1)
    if not np.isfinite(m).all():
        t = int(np.flatnonzero(~np.isfinite(m))[0])
        raise ZeroProbabilityError(f"all emissions zero at frame {t}", frame=t)
    # Gaussian emissions are never truly zero; clamp the shifted log
    # densities so extreme mismatches underflow to a tiny value instead of
    # 0.0 (structural zeros live in pi/trans, never in the emission matrix).
    bnorm = np.exp(np.maximum(logb - m[:, None], -700.0))
    alpha, r, bad = _forward_recursion(model.pi, model.trans, bnorm)
    if bad >= 0:
        raise ZeroProbabilityError(f"zero forward mass at frame {bad}",
                                   frame=int(bad))
    log_scales = np.log(r) + m
    return alpha, log_scales, bnorm


def forward(model: HmmModel, obs) -> ForwardResult:
    """Scaled forward pass; log_likelihood = sum of per-frame log scales."""
    logb = log_emission_matrix(model, obs)
    alpha, log_scales, _ = _scaled_forward(model, logb)
    return ForwardResult(alpha=alpha, log_scales=log_scales,
                         log_likelihood=float(log_scales.sum()))


def backward(model: HmmModel, obs) -> np.ndarray:
    """Scaled backward table, compatible with forward's scaling.

    With these tables sum_i alpha[t,i] * beta[t,i] == 1 at every t, and the
    unscaled P(O) is recovered by multiplying exp(sum of log scales).
    """
    logb = log_emission_matrix(model, obs)
    _, log_scales, bnorm = _scaled_forward(model, logb)
    return _scaled_backward(model, bnorm, log_scales, logb.max(axis=1))


def _scaled_backward(model, bnorm, log_scales, m, terminal=None):
    T, n = bnorm.shape
    beta_last = np.ones(n) if terminal is None else np.asarray(terminal, float)
    rdiv = np.exp(log_scales - m)
    return _backward_recursion(model.trans, bnorm, rdiv, beta_last)


def posteriors(model: HmmModel, obs,
               terminal: np.ndarray | None = None) -> TrellisPosteriors:
    """State and transition posteriors (gamma, xi) from forward-backward.

    `terminal`, when given, weights the final-frame backward column so that
    only paths ending in the weighted states carry mass (used for embedded
    training of concatenated models).
    """
    logb = log_emission_matrix(model, obs)
    alpha, log_scales, bnorm = _scaled_forward(model, logb)
    beta = _scaled_backward(model, bnorm, log_scales, logb.max(axis=1),
                            terminal=terminal)
    T, n = alpha.shape
    gamma = alpha * beta
    tail = gamma.sum(axis=1, keepdims=True)
    if np.any(tail <= 0):
        t = int(np.flatnonzero(tail[:, 0] <= 0)[0])
        raise ZeroProbabilityError(f"zero posterior mass at frame {t}", frame=t)
    gamma /= tail
    if terminal is not None:
        end_mass = float(alpha[-1] @ terminal)
        if end_mass <= 0:
            raise ZeroProbabilityError("no admissible terminal state",
                                       frame=T - 1)
        log_scales = log_scales.copy()
        log_scales[-1] += math.log(end_mass)
    if T > 1:
        xi = (alpha[:-1, :, None] * model.trans[None]
              * (bnorm[1:] * beta[1:])[:, None, :])
        xi /= xi.sum(axis=(1, 2), keepdims=True)
    else:
        xi = np.empty((0, n, n))
    return TrellisPosteriors(log_likelihood=float(log_scales.sum()),
                             gamma=gamma, xi=xi, alpha=alpha, beta=beta,
                             log_scales=log_scales)


def training_posteriors(model: HmmModel, obs,
                        terminal: np.ndarray | None = None):
    """Forward-backward reduced to what reestimation needs.

    Returns (log_likelihood, gamma, xi_sum) where xi_sum is the transition
    posterior already summed over time.  Equivalent to summing
    posteriors(...).xi but never materializes the T x n x n table, which
    dominates the cost for long sequences over concatenated models.
    """
    logb = log_emission_matrix(model, obs)
    alpha, log_scales, bnorm = _scaled_forward(model, logb)
    beta = _scaled_backward(model, bnorm, log_scales, logb.max(axis=1),
                            terminal=terminal)
    T, n = alpha.shape
    gamma = alpha * beta
    tail = gamma.sum(axis=1, keepdims=True)
    if np.any(tail <= 0):
        t = int(np.flatnonzero(tail[:, 0] <= 0)[0])
        raise ZeroProbabilityError(f"zero posterior mass at frame {t}", frame=t)
    gamma /= tail
    ll = float(log_scales.sum())
    if terminal is not None:
        end_mass = float(alpha[-1] @ terminal)
        if end_mass <= 0:
            raise ZeroProbabilityError("no admissible terminal state",
                                       frame=T - 1)
        ll += math.log(end_mass)
    if T > 1:
        w = bnorm[1:] * beta[1:]
        u = alpha[:-1]
        z = ((u @ model.trans) * w).sum(axis=1)
        xi_sum = model.trans * ((u / z[:, None]).T @ w)
    else:
        xi_sum = np.zeros((n, n))
    return ll, gamma, xi_sum


def _batch_log_likelihood(model: HmmModel, batch) -> float:
    return sum(forward(model, obs).log_likelihood for obs in batch)


def reestimate(model: HmmModel, batch: list,
               variance_floor: float = 1e-3) -> tuple[HmmModel, float]:
    """One Baum-Welch iteration over the batch.

    Sufficient statistics are summed across sequences before normalizing.
    Undecodable sequences are skipped with a warning.  Returns the updated
    model and the total batch log-likelihood under it.
    """
    if not batch:
        raise NoDecodableSequencesError("empty batch")
    n = model.n_states
    discrete = isinstance(model.emission, DiscreteEmission)
    has_exit = bool(np.any(model.exit > 0))

    pi_acc = np.zeros(n)
    a_num = np.zeros((n, n))
    a_den = np.zeros(n)
    exit_num = np.zeros(n)
    if discrete:
        b_num = np.zeros((n, model.emission.n_symbols))
        b_den = np.zeros(n)
    else:
        k = model.emission.n_components
        d = model.emission.dim
        w_acc = np.zeros((n, k))
        mean_acc = np.zeros((n, k, d))
        sq_acc = np.zeros((n, k, d))

    used = 0
    for idx, obs in enumerate(batch):
        try:
            _, gamma, xi_sum = training_posteriors(model, obs)
        except ZeroProbabilityError as exc:
            log.warning("sequence %d skipped: %s", idx, exc)
            continue
        used += 1
        pi_acc += gamma[0]
        if len(gamma) > 1:
            a_num += xi_sum
            a_den += gamma[:-1].sum(axis=0)
        exit_num += gamma[-1]
        arr = _as_observations(model, obs)
        if discrete:
            b_den += gamma.sum(axis=0)
            np.add.at(b_num.T, arr, gamma)
        else:
            comp = model.emission.log_component_densities(arr)  # (T,N,K)
            m = comp.max(axis=2, keepdims=True)
            m = np.where(np.isfinite(m), m, 0.0)
            resp = np.exp(comp - m)
            tot = resp.sum(axis=2, keepdims=True)
            tot[tot == 0] = 1.0
            resp = resp / tot * gamma[:, :, None]  # (T,N,K)
            w_acc += resp.sum(axis=0)
            mean_acc += np.einsum("tnk,td->nkd", resp, arr)
            sq_acc += np.einsum("tnk,td->nkd", resp, arr * arr)

    if used == 0:
        raise NoDecodableSequencesError("no sequence could be decoded")

    new_pi = pi_acc / pi_acc.sum()
    new_a = model.trans.copy()
    new_exit = model.exit.copy()
    for i in range(n):
        den = a_den[i] + (exit_num[i] if has_exit else 0.0)
        if den <= 0:
            continue
        new_a[i] = a_num[i] / den
        if has_exit:
            new_exit[i] = exit_num[i] / den

    if discrete:
        probs = model.emission.probs.copy()
        mass = b_den > 0
        probs[mass] = b_num[mass] / b_den[mass, None]
        emission = DiscreteEmission(probs)
    else:
        floor = variance_floor
        weights = model.emission.weights.copy()
        means = model.emission.means.copy()
        variances = model.emission.variances.copy()
        state_mass = w_acc.sum(axis=1)
        for j in range(n):
            if state_mass[j] <= 0:
                continue
            weights[j] = w_acc[j] / state_mass[j]
            live = w_acc[j] > 1e-12
            means[j, live] = mean_acc[j, live] / w_acc[j, live, None]
            var = sq_acc[j, live] / w_acc[j, live, None] - means[j, live] ** 2
            variances[j, live] = np.maximum(var, floor)
        emission = GaussianMixtureEmission(weights, means, variances)

    new_model = HmmModel(pi=new_pi, trans=new_a, emission=emission,
                         topology=model.topology,
                         exit=new_exit if has_exit else None)
    return new_model, _batch_log_likelihood(new_model, batch)


def train(model: HmmModel, batch: list, cfg: TrainConfig | None = None
          ) -> tuple[HmmModel, list[float]]:
    """Iterate Baum-Welch until the log-likelihood gain drops below theta."""
    cfg = cfg or TrainConfig()
    history: list[float] = []
    prev_ll = _batch_log_likelihood(model, batch)
    for _ in range(cfg.max_iterations):
        model, ll = reestimate(model, batch, variance_floor=cfg.variance_floor)
        history.append(ll)
        if ll - prev_ll < cfg.theta:
            break
        prev_ll = ll
    return model, history


def viterbi(model: HmmModel, obs) -> ViterbiResult:
    """Most probable state path, log domain, ties to the lowest state index."""
    logb = log_emission_matrix(model, obs)
    T, n = logb.shape
    with np.errstate(divide="ignore"):
        log_pi = np.log(model.pi)
        log_a = np.log(model.trans)
    delta = log_pi + logb[0]
    psi = np.zeros((T, n), dtype=np.intp)
    for t in range(1, T):
        scores = delta[:, None] + log_a
        psi[t] = np.argmax(scores, axis=0)
        delta = scores[psi[t], np.arange(n)] + logb[t]
    best_last = int(np.argmax(delta))
    log_prob = float(delta[best_last])
    if not np.isfinite(log_prob):
        raise ZeroProbabilityError("no path with nonzero probability")
    path = np.empty(T, dtype=np.intp)
    path[T - 1] = best_last
    for t in range(T - 2, -1, -1):
        path[t] = psi[t + 1][path[t + 1]]
    return ViterbiResult(path=path, log_prob=log_prob, backpointers=psi)


def split_mixtures(model: HmmModel, target_components: int | None = None,
                   perturbation: float = 0.2) -> HmmModel:
    """Split each state's heaviest Gaussian into two (means +/- 0.2 sigma)."""
    if not isinstance(model.emission, GaussianMixtureEmission):
        raise NotGaussianError("mixture splitting needs Gaussian emissions")
    target = target_components or 48
    em = model.emission
    n, k, d = em.means.shape
    if k >= target:
        return model
    weights = np.zeros((n, k + 1))
    means = np.zeros((n, k + 1, d))
    variances = np.zeros((n, k + 1, d))
    for j in range(n):
        heavy = int(np.argmax(em.weights[j]))
        sigma = np.sqrt(em.variances[j, heavy])
        weights[j, :k] = em.weights[j]
        means[j, :k] = em.means[j]
        variances[j, :k] = em.variances[j]
        weights[j, heavy] = em.weights[j, heavy] / 2.0
        weights[j, k] = weights[j, heavy]
        means[j, heavy] = em.means[j, heavy] - perturbation * sigma
        means[j, k] = em.means[j, heavy] + 2 * perturbation * sigma
        variances[j, k] = em.variances[j, heavy]
    return replace(model, emission=GaussianMixtureEmission(weights, means, variances))


def sample(model: HmmModel, T: int, seed: int) -> tuple[np.ndarray, object]:
    """Draw a state path and observations; deterministic for a given seed."""
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = np.random.default_rng(seed)
    n = model.n_states
    states = np.empty(T, dtype=np.intp)
    # sample within the model; any exit mass is renormalized away
    trans = model.trans / model.trans.sum(axis=1, keepdims=True)
    states[0] = rng.choice(n, p=model.pi)
    for t in range(1, T):
        states[t] = rng.choice(n, p=trans[states[t - 1]])
    em = model.emission
    if isinstance(em, DiscreteEmission):
        obs = np.array([rng.choice(em.n_symbols, p=em.probs[s]) for s in states])
        return states, obs
    frames = np.empty((T, em.dim))
    for t, s in enumerate(states):
        comp = rng.choice(em.n_components, p=em.weights[s])
        frames[t] = rng.normal(em.means[s, comp], np.sqrt(em.variances[s, comp]))
    return states, FeatureSequence(frames=frames, source="online")


# ---------------------------------------------------------------------------
# serialization

def model_to_json(model: HmmModel) -> str:
    doc = {
        "version": 1,
        "type": "discrete" if isinstance(model.emission, DiscreteEmission) else "gmm",
        "topology": model.topology,
        "pi": model.pi.tolist(),
        "A": model.trans.tolist(),
    }
    if np.any(model.exit > 0):
        doc["exit"] = model.exit.tolist()
    if isinstance(model.emission, DiscreteEmission):
        doc["emissions"] = model.emission.probs.tolist()
    else:
        doc["emissions"] = [
            {"weights": model.emission.weights[j].tolist(),
             "means": model.emission.means[j].tolist(),
             "variances": model.emission.variances[j].tolist()}
            for j in range(model.n_states)
        ]
    return json.dumps(doc)


def model_from_json(text: str) -> HmmModel:
    doc = json.loads(text)
    if doc.get("version") != 1:
        raise InvariantError(f"unsupported model version {doc.get('version')!r}")
    exit_ = np.array(doc["exit"]) if "exit" in doc else None
    if doc["type"] == "discrete":
        emission = DiscreteEmission(np.array(doc["emissions"]))
    else:
        emission = GaussianMixtureEmission(
            weights=np.array([e["weights"] for e in doc["emissions"]]),
            means=np.array([e["means"] for e in doc["emissions"]]),
            variances=np.array([e["variances"] for e in doc["emissions"]]),
        )
    return HmmModel(pi=np.array(doc["pi"]), trans=np.array(doc["A"]),
                    emission=emission, topology=doc["topology"], exit=exit_)
