"""Closed-form rates and complexity calculators."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractViolation
from .numkernel import extreme_eigs_sym
from .problems import rate_from_kappa


def _check_kappa(kappa: float) -> None:
    if not kappa >= 1:
        raise ContractViolation(f"kappa must be >= 1, got {kappa}")


def component_kappa(kappa: float, n: int) -> float:
    return 1.0 + (kappa - 1.0) / n


def rate_q(kappa: float, n: int = 1) -> float:
    """Lower-bound rate ``(sqrt(kc) - 1)/(sqrt(kc) + 1)`` with ``kc = 1 + (kappa-1)/n``."""
    _check_kappa(kappa)
    if n < 1:
        raise ContractViolation(f"n must be >= 1, got {n}")
    if n == 1:
        return rate_from_kappa(kappa)
    t = (kappa - 1.0) / n
    return t / (1.0 + math.sqrt(1.0 + t)) ** 2


def log_rate_q(kappa: float, n: int = 1) -> float:
    """``log q`` without cancellation, using ``sqrt(kc) - 1 = (kc - 1)/(sqrt(kc) + 1)``."""
    _check_kappa(kappa)
    if n < 1:
        raise ContractViolation(f"n must be >= 1, got {n}")
    t = (kappa - 1.0) / n
    if t == 0:
        return -math.inf
    return math.log(t) - 2.0 * math.log1p(math.sqrt(1.0 + t))


@dataclass(frozen=True)
class BoundValue:
    """A bound carried as its natural log, with the float value when representable."""

    log: float

    @property
    def value(self) -> float:
        return math.exp(self.log) if self.log > -745.0 else 0.0


def lower_bound_curve(gamma: float, kappa: float, n: int, K: int) -> BoundValue:
    """``gamma`` for ``K < n``, else ``gamma q^{2K/n}``."""
    if K < 0:
        raise ContractViolation(f"K must be >= 0, got {K}")
    if gamma <= 0:
        raise ContractViolation(f"gamma must be positive, got {gamma}")
    if K < n:
        return BoundValue(math.log(gamma))
    lq = log_rate_q(kappa, n)
    return BoundValue(math.log(gamma) + 2.0 * K / n * lq if lq != -math.inf else -math.inf)


def lower_bound_calls(n: int, kappa: float, eps: float):
    """Calls needed before the bound allows relative error ``eps``.

    Returns ``(K_exact, K_closed)``: ``K_exact`` is the smallest ``K >= n``
    with ``q^{2K/n} <= eps``; ``K_closed = max(n, ceil(sqrt(n (kappa-1)) ln(1/eps) / 4))``
    follows from ``ln(1/q) < 2/sqrt(kc - 1)`` and never exceeds ``K_exact``.
    """
    if not 0 < eps < 1:
        raise ContractViolation(f"eps must lie in (0, 1), got {eps}")
    _check_kappa(kappa)
    if kappa == 1:
        return n, n
    L = math.log(1.0 / eps)
    k_exact = max(n, math.ceil(n * L / (-2.0 * log_rate_q(kappa, n))))
    k_closed = max(n, math.ceil(math.sqrt(n * (kappa - 1.0)) * L / 4.0))
    return k_exact, k_closed


def magic_bound_margin(x: float) -> float:
    """``log((sqrt(x)-1)/(sqrt(x)+1)) + 2/sqrt(x-1)``; positive for every ``x > 1``."""
    if not x > 1:
        raise ContractViolation(f"x must exceed 1, got {x}")
    return 2.0 / math.sqrt(x - 1.0) - 2.0 * math.atanh(1.0 / math.sqrt(x))


def gamma_asdca(kappa: float, n: int) -> float:
    _check_kappa(kappa)
    if n < 1:
        raise ContractViolation(f"n must be >= 1, got {n}")
    return 1.0 + math.sqrt((kappa - 1.0) / n)


def gamma_sag(L: float, mu_f: float, n: int) -> float:
    if L <= 0 or mu_f <= 0 or n < 1:
        raise ContractViolation("gamma_sag needs L > 0, mu_f > 0, n >= 1")
    return 1.0 + L / (mu_f * n)


def gamma_agm(L_f: float, mu_f: float) -> float:
    if L_f <= 0 or mu_f <= 0:
        raise ContractViolation("gamma_agm needs L_f > 0 and mu_f > 0")
    return math.sqrt(L_f / mu_f)


def empirical_spectrum(dataset, loss_scale: float = 0.5, tol: float = 1e-10):
    """Extreme eigenvalues of ``mu I + (2 loss_scale / n) A^T A``.

    With the default ``loss_scale = 1/2`` this is ``mu I + Sigma_hat``.
    Returns ``(mu_f, L_f, kappa_f_hat)``.
    """
    A = np.asarray(dataset.A, dtype=np.float64)
    if A.shape[0] == 0:
        raise ContractViolation("dataset is empty")
    n, d = A.shape
    w = 2.0 * loss_scale / n

    def apply(v):
        return dataset.mu * v + w * (A.T @ (A @ v))

    lo, hi = extreme_eigs_sym(apply, d, tol=tol)
    return lo, hi, hi / lo


@dataclass(frozen=True)
class ConcentrationCheck:
    satisfied: bool
    lhs: float
    rhs: float
    z: float
    deviation_factor: float
    note: str = ("sample-size condition uses log(d/delta); the deviation z uses log(2/delta)"
                 "; both evaluated as written")


def concentration_check(d: int, n: int, delta: float, c: float = 1.0, C: float = 1.0,
                        kappa_f: float = 1.0) -> ConcentrationCheck:
    """Evaluate ``c^2 d/n + C^2 log(d/delta)/n <= 1/(8 kappa_f^2)``.

    Also reports ``z = c sqrt(d/n) + C sqrt(log(2/delta)/n)`` and ``max(z, z^2)``.
    """
    if d <= 0 or n <= 0 or c <= 0 or C <= 0 or kappa_f <= 0:
        raise ContractViolation("concentration_check needs positive d, n, c, C, kappa_f")
    if not 0 < delta < 1:
        raise ContractViolation(f"delta must lie in (0, 1), got {delta}")
    lhs = c * c * d / n + C * C * math.log(d / delta) / n
    rhs = 1.0 / (8.0 * kappa_f * kappa_f)
    z = c * math.sqrt(d / n) + C * math.sqrt(math.log(2.0 / delta) / n)
    return ConcentrationCheck(lhs <= rhs, lhs, rhs, z, max(z, z * z))


@dataclass(frozen=True)
class RateReport:
    kappa: float
    n: int
    kappa_c: float
    q: float
    gamma: float
    log_q: float
    eps: float
    K_exact: int
    K_closed: int

    def to_dict(self) -> dict:
        return asdict(self)


def rate_report(kappa: float, n: int, gamma: float = 1.0, eps: float = 1e-6) -> RateReport:
    k_exact, k_closed = lower_bound_calls(n, kappa, eps)
    return RateReport(kappa=kappa, n=n, kappa_c=component_kappa(kappa, n), q=rate_q(kappa, n),
                      gamma=gamma, log_q=log_rate_q(kappa, n), eps=eps,
                      K_exact=k_exact, K_closed=k_closed)


REGIME_SMALL = "kappa=O(n)"
REGIME_LARGE = "kappa>>n"


@dataclass(frozen=True)
class ComplexityReport:
    n: int
    mu: float
    L: float
    mu_f: float
    L_f: float
    kappa: float
    kappa_f: float
    gamma_asdca: float
    gamma_sag: float
    gamma_agm: float
    regime: str
    ordering: tuple
    concentration: ConcentrationCheck | None = None
    notes: tuple = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ordering"] = list(self.ordering)
        d["notes"] = list(self.notes)
        return d

    def table(self) -> str:
        """Fixed-width table with one row per method, mirroring the regime layout."""
        rows = [("ASDCA, SPDC", self.gamma_asdca), ("SAG", self.gamma_sag), ("AGM", self.gamma_agm)]
        head = f"{'Algorithm':<14}{'Gamma':>12}  regime: {self.regime}"
        lines = [head, "-" * len(head)]
        lines += [f"{name:<14}{g:>12.4f}  ~ {g:.3g} * log(1/eps) passes" for name, g in rows]
        lines.append(f"kappa = {self.kappa:.4g}, kappa_f = {self.kappa_f:.4g}, "
                     f"mu_f = {self.mu_f:.4g}, L_f = {self.L_f:.4g}")
        return "\n".join(lines)


def regime_table(n: int, mu: float, L: float, mu_f: float, L_f: float,
                 concentration: ConcentrationCheck | None = None) -> ComplexityReport:
    """Batch-complexity prefactors for ASDCA/SPDC, SAG and AGM.

    The regime label uses ``kappa <= 4n`` for ``kappa=O(n)``; it is a label
    only. ``ordering`` lists methods from smallest to largest prefactor.
    """
    kappa = L / mu
    ga, gs, gm = gamma_asdca(kappa, n), gamma_sag(L, mu_f, n), gamma_agm(L_f, mu_f)
    regime = REGIME_SMALL if kappa <= 4 * n else REGIME_LARGE
    ordering = tuple(name for name, _ in sorted(
        [("ASDCA", ga), ("SAG", gs), ("AGM", gm)], key=lambda t: t[1]))
    notes = []
    if n == 1:
        notes.append("n = 1: prefactors reported without an ordering claim")
    if not (mu <= mu_f * (1 + 1e-12) and mu_f <= L_f and L_f <= L * (1 + 1e-12)):
        notes.append("constants violate mu <= mu_f <= L_f <= L")
    return ComplexityReport(n=n, mu=mu, L=L, mu_f=mu_f, L_f=L_f, kappa=kappa,
                            kappa_f=L_f / mu_f, gamma_asdca=ga, gamma_sag=gs, gamma_agm=gm,
                            regime=regime, ordering=ordering if n > 1 else (),
                            concentration=concentration, notes=tuple(notes))
