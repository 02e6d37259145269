"""Incremental first-order oracles.

Three oracles share one interface (attributes ``n, mu, L, dim``, method
``query(i, x) -> (value, gradient)`` and a :class:`Transcript`):

* :class:`StaticIFO` answers from a fixed :class:`~ifobound.problems.FiniteSumProblem`.
* :class:`ResistingState` is the adaptive single-function adversary; it picks
  the rotation of the chain quadratic lazily so that the minimizer stays far
  from everything the algorithm has seen.
* :class:`ResistingIFO` runs one independent resisting state per component of
  the separable hard instance.

Component indices are 0-based throughout.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CapacityError, ContractViolation
from .numkernel import (
    IN_SPAN_TOL,
    OrthonormalFamily,
    as_point,
    gram_schmidt_extend,
    q_embed,
)
from .problems import (
    TAIL_MASS,
    FiniteSumProblem,
    NesterovFunction,
    SeparableChainComponent,
    chain_value_grad,
    rate_from_kappa,
    rho_for_norm,
    tail_dim,
)

DEFAULT_SLACK = 1e-6


# --------------------------------------------------------------------------
# transcripts


def _canonical_bytes(v) -> bytes:
    # +0.0 folds -0.0 into +0.0; everything else is compared bit for bit
    return (np.ascontiguousarray(v, dtype=np.float64) + 0.0).tobytes()


def answer_digest(i: int, x, value: float, grad) -> str:
    h = hashlib.blake2b(digest_size=16)
    h.update(int(i).to_bytes(8, "little", signed=True))
    h.update(_canonical_bytes(x))
    h.update(_canonical_bytes([value]))
    h.update(_canonical_bytes(grad))
    return h.hexdigest()


@dataclass(frozen=True)
class TranscriptEntry:
    call_index: int
    i: int
    x_norm: float
    value: float
    g_norm: float
    digest: str
    x: np.ndarray | None = None
    grad: np.ndarray | None = None


class Transcript:
    """Append-only record of oracle calls.

    Every entry stores a digest of ``(i, x, value, gradient)`` so transcripts
    can be compared bit for bit without keeping the vectors; pass
    ``keep_vectors=True`` to keep them as well.
    """

    def __init__(self, n: int, keep_vectors: bool = False):
        self.n = n
        self.keep_vectors = keep_vectors
        self._entries: list[TranscriptEntry] = []
        self._counts = [0] * n

    def append(self, i: int, x, value: float, grad) -> None:
        keep = self.keep_vectors
        self._entries.append(TranscriptEntry(
            call_index=len(self._entries), i=i,
            x_norm=float(np.linalg.norm(x)), value=float(value),
            g_norm=float(np.linalg.norm(grad)),
            digest=answer_digest(i, x, value, grad),
            x=np.array(x, copy=True) if keep else None,
            grad=np.array(grad, copy=True) if keep else None,
        ))
        self._counts[i] += 1

    @property
    def entries(self) -> tuple:
        return tuple(self._entries)

    @property
    def total_calls(self) -> int:
        return len(self._entries)

    @property
    def counts(self) -> tuple:
        return tuple(self._counts)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def first_divergence(self, other: "Transcript") -> int | None:
        """Index of the first differing call, or ``None`` if identical."""
        for k, (a, b) in enumerate(zip(self._entries, other._entries)):
            if a.digest != b.digest:
                return k
        if len(self) != len(other):
            return min(len(self), len(other))
        return None

    def to_csv(self, path, sidecar: bool = True) -> None:
        """Write ``call_index,i,x_norm,value,g_norm`` rows (1-based ``i``).

        With ``sidecar`` and kept vectors, full queries and gradients go to
        ``<path>.npz``.
        """
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["call_index", "i", "x_norm", "value", "g_norm"])
            for e in self._entries:
                w.writerow([e.call_index, e.i + 1, repr(e.x_norm), repr(e.value), repr(e.g_norm)])
        if sidecar and self.keep_vectors and self._entries:
            np.savez_compressed(
                path.with_suffix(path.suffix + ".npz"),
                i=np.array([e.i for e in self._entries]),
                x=np.stack([e.x for e in self._entries]),
                grad=np.stack([e.grad for e in self._entries]),
            )


# --------------------------------------------------------------------------
# static oracle


class StaticIFO:
    """IFO backed by a fixed finite-sum problem."""

    deterministic_answers = True

    def __init__(self, problem: FiniteSumProblem, keep_vectors: bool = False):
        self.problem = problem
        self.n, self.mu, self.L, self.dim = problem.n, problem.mu, problem.L, problem.dim
        self.transcript = Transcript(problem.n, keep_vectors=keep_vectors)

    @property
    def calls(self) -> int:
        return self.transcript.total_calls

    def query(self, i: int, x):
        return ifo_query(self.problem, self.transcript, i, x)


def ifo_query(problem: FiniteSumProblem, transcript: Transcript, i: int, x):
    """Return ``(g_i(x), g_i'(x))`` and log the call."""
    if not 0 <= i < problem.n:
        raise ContractViolation(f"component index {i} out of range for n={problem.n}")
    x = as_point(x)
    if x.shape[0] != problem.dim:
        raise ContractViolation(f"expected a point of dim {problem.dim}, got {x.shape[0]}")
    value, grad = problem.component(i, x)
    transcript.append(i, x, value, grad)
    return value, grad


# --------------------------------------------------------------------------
# single-function resisting oracle


def complete_basis(S: OrthonormalFamily) -> np.ndarray:
    """Orthogonal ``(dim, dim)`` matrix whose leading columns are ``S``.

    Remaining columns are the canonical vectors orthogonalized against what is
    already there, in index order.
    """
    dim, m = S.dim, S.size
    B = np.zeros((dim, dim))
    B[:, :m] = S.members
    for j in range(dim):
        if m == dim:
            break
        r = -B[:, :m] @ B[j, :m]
        r[j] += 1.0
        r -= B[:, :m] @ (B[:, :m].T @ r)
        nr = np.linalg.norm(r)
        if nr <= IN_SPAN_TOL:
            continue
        B[:, m] = r / nr
        m += 1
    if m != dim:
        raise ContractViolation("basis completion failed to reach full rank")
    return B


class ResistingState:
    """Adaptive adversary for one chain quadratic ``N_{mu,L}``.

    Each query grows the orthonormal family ``S`` by the query point and then
    by a fresh canonical direction, and answers with ``N(Sbar^T x)`` and
    ``Sbar N'(Sbar^T x)``. Only ``S`` matters for the answers; the completion
    ``Sbar`` is fixed at :meth:`finalize`.

    ``reserve`` coordinates are kept free of the family so the minimizer's
    tail stays representable; running into it raises :class:`CapacityError`.
    """

    def __init__(self, mu: float, L: float, rho: float, dim: int,
                 reserve: int | None = None, tail_mass: float = TAIL_MASS):
        self.fn = NesterovFunction(mu, L, rho, dim, tail_mass=tail_mass)
        self.S = OrthonormalFamily.empty(dim)
        self.k = 0
        self.cursor = 0
        self.sizes: list[int] = []
        self.reserve = tail_dim(self.fn.q, tail_mass) if reserve is None else reserve

    @classmethod
    def from_gamma(cls, mu: float, L: float, gamma: float, dim: int, **kw) -> "ResistingState":
        return cls(mu, L, rho_for_norm(gamma, rate_from_kappa(L / mu)), dim, **kw)

    @property
    def dim(self) -> int:
        return self.fn.dim

    @property
    def q(self) -> float:
        return self.fn.q

    @property
    def gamma(self) -> float:
        """Norm of the l2 minimizer ``(rho q^i)``."""
        q = self.fn.q
        return self.fn.rho * q / math.sqrt(1.0 - q * q)

    def _fresh(self, S: OrthonormalFamily) -> OrthonormalFamily:
        dim = S.dim
        while self.cursor < dim:
            e = np.zeros(dim)
            e[self.cursor] = 1.0
            self.cursor += 1
            grown = gram_schmidt_extend(S, e)
            if grown.size > S.size:
                return grown
        raise CapacityError(
            f"no fresh direction left in dim={dim} after {self.k} queries; "
            f"use dim >= 2*queries + 2 + {self.reserve}"
        )

    def absorb(self, x) -> np.ndarray:
        """Grow the family for query ``x`` and return its padded coefficients ``Sbar^T x``."""
        x = as_point(x)
        if x.shape[0] != self.dim:
            raise ContractViolation(f"expected a point of dim {self.dim}, got {x.shape[0]}")
        S = self._fresh(gram_schmidt_extend(self.S, x))
        if S.size + self.reserve > self.dim:
            raise CapacityError(
                f"family size {S.size} after {self.k + 1} queries leaves fewer than "
                f"{self.reserve} tail coordinates in dim={self.dim}; "
                f"use dim >= {2 * (self.k + 1) + 2 + self.reserve}"
            )
        self.S = S
        self.k += 1
        self.sizes.append(S.size)
        c = np.zeros(self.dim)
        c[: S.size] = S.members.T @ x
        return c

    def lift(self, gc: np.ndarray) -> np.ndarray:
        """Map a coefficient-space gradient back to the ambient space through ``S``."""
        return self.S.members @ gc[: self.S.size]

    def query(self, x):
        return resist_query(self, x)

    def finalize(self, x_K, slack: float = DEFAULT_SLACK) -> "Certificate":
        return resist_finalize(self, x_K, slack=slack)

    def _materialize(self, x_K):
        """Concrete basis and minimizer, mirrored if that moves ``x*`` away from ``x_K``."""
        x_K = as_point(x_K)
        m = self.S.size
        B = complete_basis(self.S)
        x_c = self.fn.truncated_minimizer() if self.fn.rho > 0 else np.zeros(self.dim)
        x_star = B @ x_c
        # reflecting through Span(S) keeps every past answer and can only help
        Bm = B.copy()
        Bm[:, m:] *= -1.0
        x_star_m = Bm @ x_c
        if np.linalg.norm(x_star_m - x_K) > np.linalg.norm(x_star - x_K):
            B, x_star = Bm, x_star_m
        span_dist = float(np.linalg.norm(x_c[m:]))
        return B, x_c, x_star, span_dist


def resist_query(state: ResistingState, x):
    """Answer ``(N(Sbar^T x), Sbar N'(Sbar^T x))`` and advance the adversary."""
    c = state.absorb(x)
    fn = state.fn
    v, gc = chain_value_grad(c, fn.spread, fn.rho)
    v += 0.5 * fn.mu * (c @ c)
    gc += fn.mu * c
    return v, state.lift(gc)


class RotatedNesterov:
    """``x -> N(B^T x)`` for an orthogonal ``B``; the finalized single-function objective."""

    def __init__(self, fn: NesterovFunction, basis: np.ndarray):
        self.fn, self.basis = fn, basis

    def value_grad(self, x):
        c = self.basis.T @ as_point(x)
        v, gc = chain_value_grad(c, self.fn.spread, self.fn.rho)
        return v + 0.5 * self.fn.mu * (c @ c), self.basis @ (gc + self.fn.mu * c)

    def value(self, x) -> float:
        return self.value_grad(x)[0]

    def grad(self, x) -> np.ndarray:
        return self.value_grad(x)[1]


class SingleResistingIFO:
    """IFO view (``n = 1``) of a single resisting state.

    Answers drop the ridge ``mu/2 ||x||^2``, which the solvers add
    themselves, so ``query(0, x)`` returns the ridge-free part of
    ``N(Sbar^T x)`` and its gradient.
    """

    deterministic_answers = True

    def __init__(self, mu: float, L: float, gamma: float, dim: int,
                 keep_vectors: bool = False, tail_mass: float = TAIL_MASS):
        self.state = ResistingState.from_gamma(mu, L, gamma, dim, tail_mass=tail_mass)
        self.n, self.mu, self.L, self.dim = 1, mu, L, dim
        self.transcript = Transcript(1, keep_vectors=keep_vectors)

    @property
    def calls(self) -> int:
        return self.transcript.total_calls

    def query(self, i: int, x):
        if i != 0:
            raise ContractViolation(f"component index {i} out of range for n=1")
        x = as_point(x)
        c = self.state.absorb(x)
        v, gc = chain_value_grad(c, self.state.fn.spread, self.state.fn.rho)
        g = self.state.lift(gc)
        self.transcript.append(0, x, v, g)
        return v, g

    def finalize(self, x_K, slack: float = DEFAULT_SLACK) -> "Certificate":
        cert = resist_finalize(self.state, x_K, slack=slack)
        cert.transcript = self.transcript
        return cert


# --------------------------------------------------------------------------
# certificates


@dataclass
class Certificate:
    """Machine-checked comparison of an algorithm output against the lower bound.

    ``log_bound`` is the natural log of the relative bound (``q^{2t}``), so it
    stays meaningful after ``q^{2t}`` underflows.
    """

    kind: str
    problem: object
    x_star: np.ndarray
    gamma: float
    x_K: np.ndarray
    K: int
    n: int
    q: float
    observed_error: float
    log_bound: float
    bound_kind: str
    span_distance: float
    span_check: bool
    slack: float = DEFAULT_SLACK
    per_component: list = field(default_factory=list)
    log_aggregate_bound: float | None = None
    transcript: Transcript | None = None
    replay_verified: bool | None = None
    status: str = ""

    def __post_init__(self):
        if not self.status:
            self.status = "pass" if self.holds else "fail"

    @property
    def observed_rel_error(self) -> float:
        return self.observed_error / self.gamma if self.gamma > 0 else math.inf

    @property
    def bound(self) -> float:
        """Relative bound as a float (0.0 once it underflows)."""
        return math.exp(self.log_bound)

    @property
    def holds(self) -> bool:
        obs = self.observed_rel_error
        if obs <= 0.0:
            return False
        return math.log(obs) >= self.log_bound + math.log1p(-self.slack)

    @property
    def passed(self) -> bool | None:
        """``True``/``False`` for asserted certificates, ``None`` when not asserted."""
        if self.status == "pass":
            return True
        if self.status == "fail":
            return False
        return None

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind, "K": self.K, "n": self.n, "q": self.q, "gamma": self.gamma,
            "observed_error": self.observed_error,
            "observed_rel_error": self.observed_rel_error,
            "log_observed_rel_error": math.log(self.observed_rel_error)
            if self.observed_rel_error > 0 else -math.inf,
            "log_bound": self.log_bound, "bound": self.bound, "bound_kind": self.bound_kind,
            "span_distance": self.span_distance, "span_check": self.span_check,
            "slack": self.slack, "status": self.status,
            "replay_verified": self.replay_verified, "holds": self.holds,
            "log_aggregate_bound": self.log_aggregate_bound,
        }
        if self.transcript is not None:
            d["calls_per_component"] = list(self.transcript.counts)
        if self.per_component:
            d["per_component"] = [dict(pc) for pc in self.per_component]
        return d


NOT_ASSERTED = "not-asserted"
RANDOMIZED_REASON = ("the lower bound is only established for deterministic algorithms; "
                     "the observed error is measured but not asserted")


def assert_certificate(certificate: Certificate, deterministic: bool) -> bool | None:
    """Assert the bound for a deterministic run, or mark the certificate not asserted.

    Returns ``certificate.passed``: ``True``/``False`` for deterministic
    algorithms and ``None`` (status ``"not-asserted"``) for randomized ones.
    """
    if deterministic:
        certificate.status = "pass" if certificate.holds else "fail"
    else:
        certificate.status = NOT_ASSERTED
    return certificate.passed


def resist_finalize(state: ResistingState, x_K, slack: float = DEFAULT_SLACK) -> Certificate:
    """Fix the completion, materialize the worst-case quadratic and certify ``x_K``."""
    B, x_c, x_star, span_dist = state._materialize(x_K)
    K, q = state.k, state.q
    gamma = float(np.linalg.norm(x_star))
    obs = float(np.linalg.norm(x_star - np.asarray(x_K, dtype=np.float64)))
    if K == 0:
        log_bound, kind = 0.0, "trivial"
    else:
        log_bound, kind = 2 * K * math.log(q), "single"
    # distance from x* to the explored span versus ||x*|| q^{2K}
    span_need = gamma * math.exp(log_bound)
    span_check = span_dist >= span_need * (1.0 - slack) - state.fn.truncation_slack()
    return Certificate(
        kind="single", problem=RotatedNesterov(state.fn, B), x_star=x_star, gamma=gamma,
        x_K=np.array(x_K, dtype=np.float64), K=K, n=1, q=q, observed_error=obs,
        log_bound=log_bound, bound_kind=kind, span_distance=span_dist, span_check=span_check,
        slack=slack,
    )


# --------------------------------------------------------------------------
# n-component resisting IFO


class ResistingIFO:
    """IFO adversary for the separable hard instance.

    Component ``i`` only ever sees ``Q_i^T x`` and is served by its own
    :class:`ResistingState` with constants ``(n mu, L - mu + n mu)``. Answers
    are the ridge-free parts ``h_i``, i.e. the IFO returns
    ``(h_i(Q_i^T x), Q_i h_i'(Q_i^T x))``.

    ``budget`` is the number of calls the algorithm will make. When it is
    below ``n`` the adversary commits every queried component to a zero
    minimizer, which lets :meth:`finalize` put the whole norm on a component
    the algorithm never saw.
    """

    deterministic_answers = True

    def __init__(self, n: int, mu: float, L: float, gamma: float, component_dim: int,
                 budget: int | None = None, keep_vectors: bool = True,
                 tail_mass: float = TAIL_MASS):
        if n < 1:
            raise ContractViolation(f"n must be positive, got {n}")
        if not L > mu > 0:
            raise ContractViolation(f"need L > mu > 0, got mu={mu}, L={L}")
        if gamma <= 0:
            raise ContractViolation(f"gamma must be positive, got {gamma}")
        self.n, self.mu, self.L, self.gamma = n, mu, L, gamma
        self.component_dim = component_dim
        self.dim = n * component_dim
        self.budget = budget
        self.tail_mass = tail_mass
        self.mu_c, self.L_c = n * mu, L - mu + n * mu
        self.q = rate_from_kappa(self.L_c / self.mu_c)
        self.rho_default = rho_for_norm(gamma / math.sqrt(n), self.q)
        self.policy = "zero" if budget is not None and budget < n else "spread"
        # validates the tail guard up front
        NesterovFunction(self.mu_c, self.L_c, self.rho_default, component_dim, tail_mass=tail_mass)
        self.states: list[ResistingState | None] = [None] * n
        self.transcript = Transcript(n, keep_vectors=keep_vectors)

    @property
    def kappa(self) -> float:
        return self.L / self.mu

    @property
    def calls(self) -> int:
        return self.transcript.total_calls

    def _state(self, i: int, rho: float | None = None) -> ResistingState:
        if self.states[i] is None:
            if rho is None:
                rho = 0.0 if self.policy == "zero" else self.rho_default
            self.states[i] = ResistingState(self.mu_c, self.L_c, rho, self.component_dim,
                                            tail_mass=self.tail_mass)
        return self.states[i]

    def query(self, i: int, x):
        return resisting_ifo_query(self, i, x)

    def finalize(self, x_K, slack: float = DEFAULT_SLACK) -> Certificate:
        return resisting_ifo_finalize(self, x_K, slack=slack)


def resisting_ifo_query(adv: ResistingIFO, i: int, x):
    """Route ``Q_i^T x`` to component ``i``'s adversary and return ``(h_i, grad h_i)``."""
    if not 0 <= i < adv.n:
        raise ContractViolation(f"component index {i} out of range for n={adv.n}")
    if adv.budget is not None and adv.calls >= adv.budget:
        raise ContractViolation(f"declared budget of {adv.budget} calls exceeded")
    x = as_point(x)
    if x.shape[0] != adv.dim:
        raise ContractViolation(f"expected a point of dim {adv.dim}, got {x.shape[0]}")
    state = adv._state(i)
    c = state.absorb(x[i :: adv.n])
    v, gc = chain_value_grad(c, state.fn.spread, state.fn.rho)
    g = q_embed(i, adv.n, state.lift(gc))
    adv.transcript.append(i, x, v, g)
    return v, g


def resisting_ifo_finalize(adv: ResistingIFO, x_K, slack: float = DEFAULT_SLACK) -> Certificate:
    """Materialize the worst-case finite sum and certify ``x_K`` against it."""
    x_K = as_point(x_K)
    n, D, q = adv.n, adv.component_dim, adv.q
    counts = adv.transcript.counts
    K = adv.transcript.total_calls
    unqueried = [i for i in range(n) if counts[i] == 0]

    # per-component minimizer norms
    if K >= n or not unqueried:
        gammas = [adv.gamma / math.sqrt(n)] * n
        bound_kind = "thm"
    elif adv.policy == "zero":
        gammas = [0.0] * n
        gammas[unqueried[0]] = adv.gamma
        bound_kind = "unqueried"
    else:
        # queried components already committed to gamma/sqrt(n); the rest of
        # the norm goes to the lowest unqueried component
        gammas = [adv.gamma / math.sqrt(n) if counts[i] else 0.0 for i in range(n)]
        queried = n - len(unqueried)
        gammas[unqueried[0]] = adv.gamma * math.sqrt((n - queried) / n)
        bound_kind = "unqueried-partial"

    comps, x_star = [], np.zeros(adv.dim)
    per_component, log_terms, truncation = [], [], []
    for i in range(n):
        state = adv.states[i]
        if state is None:
            state = ResistingState(adv.mu_c, adv.L_c, rho_for_norm(gammas[i], q), D,
                                   tail_mass=adv.tail_mass)
        B, x_c, xs_i, span_dist = state._materialize(x_K[i::n])
        comps.append(SeparableChainComponent(i, n, adv.L - adv.mu, state.fn.rho, D, basis=B))
        truncation.append(state.fn.truncation_slack())
        x_star += q_embed(i, n, xs_i)
        g_i = state.gamma
        entry = {
            "component": i, "calls": counts[i], "gamma": g_i,
            "span_distance": span_dist,
            "error": float(np.linalg.norm(xs_i - x_K[i::n])),
            "log_bound": (math.log(g_i) + 2 * counts[i] * math.log(q)) if g_i > 0 else -math.inf,
        }
        per_component.append(entry)
        if g_i > 0:
            log_terms.append(2.0 * entry["log_bound"])

    gamma_actual = float(np.linalg.norm(x_star))
    log_aggregate = 0.5 * _logsumexp(log_terms) - math.log(adv.gamma)
    if bound_kind == "thm":
        log_bound = 2.0 * K / n * math.log(q)
    elif bound_kind == "unqueried":
        log_bound = 0.0
    else:
        log_bound = log_aggregate

    span_dist = math.sqrt(sum(pc["span_distance"] ** 2 for pc in per_component))
    trunc = math.sqrt(sum(t * t for t in truncation))
    span_check = span_dist >= adv.gamma * math.exp(log_aggregate) * (1.0 - slack) - trunc

    problem = FiniteSumProblem(
        mu=adv.mu, L=adv.L, dim=adv.dim, components=tuple(comps), x_star=x_star,
        name="resist-finalized",
        meta={"q_component": q, "dim_per_component": D, "gamma": adv.gamma},
    )
    return Certificate(
        kind="finite-sum", problem=problem, x_star=x_star, gamma=gamma_actual, x_K=x_K.copy(),
        K=K, n=n, q=q, observed_error=float(np.linalg.norm(x_star - x_K)),
        log_bound=log_bound, bound_kind=bound_kind, span_distance=span_dist,
        span_check=span_check, slack=slack, per_component=per_component,
        log_aggregate_bound=log_aggregate, transcript=adv.transcript,
    )


def _logsumexp(values) -> float:
    if not values:
        return -math.inf
    m = max(values)
    if m == -math.inf:
        return m
    return m + math.log(sum(math.exp(v - m) for v in values))


# --------------------------------------------------------------------------
# replay


@dataclass(frozen=True)
class ReplayResult:
    ok: bool
    first_divergence: int | None = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


def transcript_replay_check(algorithm, certificate: Certificate) -> ReplayResult:
    """Re-run ``algorithm`` on the finalized problem and compare transcripts bit for bit.

    ``algorithm`` is a callable ``oracle -> RunTrace``. The check passes when
    every call (index, query, value, gradient) and the returned ``x_K`` are
    reproduced exactly. Signed zeros are identified.
    """
    if certificate.transcript is None or not isinstance(certificate.problem, FiniteSumProblem):
        raise ContractViolation("certificate carries no finite-sum problem/transcript to replay")
    oracle = StaticIFO(certificate.problem)
    trace = algorithm(oracle)
    k = certificate.transcript.first_divergence(oracle.transcript)
    if k is not None:
        result = ReplayResult(False, k, f"transcripts diverge at call {k}")
    elif _canonical_bytes(trace.x_final) != _canonical_bytes(certificate.x_K):
        result = ReplayResult(False, len(oracle.transcript), "final iterate differs")
    else:
        result = ReplayResult(True)
    certificate.replay_verified = result.ok
    return result
