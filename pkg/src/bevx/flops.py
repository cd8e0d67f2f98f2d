"""Analytic multi-head attention cost model.

Costs are counted in multiply-accumulates (one MAC per "FLOP"); softmax,
normalization and MLP work is outside the model. All arithmetic is exact
(Python integers and fractions).
"""

from dataclasses import dataclass
from fractions import Fraction


@dataclass(frozen=True)
class AttentionDims:
    n_q: int
    n_k: int
    n_v: int
    d_q: int
    d_k: int
    d_v: int

    def __post_init__(self):
        for name, value in vars(self).items():
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value}")


def ma_flops_general(d):
    """Query/output projections, key and value projections, score and
    aggregation products."""
    return (d.n_q * d.n_k * (d.d_q + d.d_k) + 2 * d.n_q * d.d_q ** 2
            + d.n_k * d.d_k ** 2 + d.n_v * d.d_v ** 2)


def ma_flops_simplified(n_q, n_k, d):
    """Cost when keys and values share a token count and every width is ``d``."""
    return 2 * n_q * n_k * d + 2 * d * d * (n_q + n_k)


@dataclass(frozen=True)
class ScaleGroupPlan:
    """(query fraction of H_M*W_M, key fraction of H_I*W_I) per attention stage."""

    groups: tuple
    d: int = 32

    def __post_init__(self):
        groups = tuple((Fraction(q), Fraction(k)) for q, k in self.groups)
        if not groups or any(q <= 0 or k <= 0 for q, k in groups):
            raise ValueError("scale-group fractions must be positive")
        if self.d < 1:
            raise ValueError("width must be positive")
        object.__setattr__(self, "groups", groups)

    def dominant_coefficient(self):
        """Coefficient c in c * H_M W_M H_I W_I * D of the token-product term."""
        return sum((2 * q * k for q, k in self.groups), Fraction(0))


CROSS_SCALE_PLAN = ScaleGroupPlan(((Fraction(1, 8), Fraction(1, 2)),
                                   (Fraction(1, 4), Fraction(1, 4)),
                                   (Fraction(1, 2), Fraction(1, 8))))
ALIGNED_PLAN = ScaleGroupPlan(((Fraction(1, 8), Fraction(1, 8)),
                               (Fraction(1, 4), Fraction(1, 4)),
                               (Fraction(1, 2), Fraction(1, 2))))


@dataclass(frozen=True)
class PlanCost:
    groups: tuple  # (n_q, n_k, flops) per group
    total: int
    dominant: Fraction  # token-product term alone
    rounded: bool  # some fraction did not give an integer token count


def plan_flops(plan, h_m, w_m, h_i, w_i):
    bev, img = h_m * w_m, h_i * w_i
    rows, rounded, total = [], False, 0
    for q, k in plan.groups:
        nq_exact, nk_exact = q * bev, k * img
        nq, nk = round(nq_exact), round(nk_exact)
        rounded |= nq != nq_exact or nk != nk_exact
        cost = ma_flops_simplified(nq, nk, plan.d)
        rows.append((nq, nk, cost))
        total += cost
    dominant = plan.dominant_coefficient() * bev * img * plan.d
    return PlanCost(tuple(rows), total, dominant, rounded)


def saving_ratio(plan_a, plan_b, sizes, mode="dominant"):
    """Fraction of plan_b's cost that plan_a saves, ``1 - cost_a / cost_b``.

    ``mode="dominant"`` keeps only the token-product term (the regime where
    the width is small next to the token counts); ``"full"`` uses the whole
    simplified cost. Returns a Fraction.
    """
    h_m, w_m, h_i, w_i = sizes
    ca = plan_flops(plan_a, h_m, w_m, h_i, w_i)
    cb = plan_flops(plan_b, h_m, w_m, h_i, w_i)
    if mode == "dominant":
        num, den = ca.dominant, cb.dominant
    elif mode == "full":
        num, den = Fraction(ca.total), Fraction(cb.total)
    else:
        raise ValueError(f"mode must be 'dominant' or 'full', got {mode!r}")
    if den == 0:
        raise ZeroDivisionError("reference plan has zero cost")
    return 1 - Fraction(num) / den
