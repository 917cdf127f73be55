"""Numerical verification of the teacher-student risk bound.

The training loss L = R_emp(f) + R_mix(f, g) is bounded by

    L <= 2 R_true(f) + M (||P_mix - P||_1 + ||P_emp - P||_1) + R_mix(g)

whenever the loss is a norm obeying the triangle inequality. Everything
here lives on finite discrete distributions, so each term is an exact sum
and the bound, plus every intermediate inequality of its proof, can be
checked instance by instance. The loss is fixed to absolute error, which
is a norm; cross-entropy is not and is deliberately excluded.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

def abs_loss(a: float, b: float) -> float:
    return abs(a - b)


@dataclass(frozen=True)
class DiscreteDist:
    """Finite distribution over (x, y) points; weights sum to 1."""

    xs: np.ndarray      # (n, d) feature vectors
    ys: np.ndarray      # (n,) scalar targets
    probs: np.ndarray   # (n,) non-negative weights

    def __post_init__(self) -> None:
        if len(self.xs) != len(self.ys) or len(self.xs) != len(self.probs):
            raise ValueError("support and weights must have equal lengths")
        if np.any(self.probs < 0):
            raise ValueError("negative weight")
        if abs(float(self.probs.sum()) - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {float(self.probs.sum())}, not 1")

    def points(self) -> list[tuple[tuple, float]]:
        return [(tuple(np.asarray(x, dtype=np.float64).tolist()), float(y))
                for x, y in zip(self.xs, self.ys)]


def risk(f, dist: DiscreteDist, loss=abs_loss) -> float:
    """Expected loss of predictor ``f`` against the targets: sum p * l(f(x), y)."""
    return float(sum(p * loss(f(x), y)
                     for x, y, p in zip(dist.xs, dist.ys, dist.probs)))


def teacher_student_risk(f, g, dist: DiscreteDist, loss=abs_loss) -> float:
    """Expected loss between two predictors under ``dist``: sum p * l(f(x), g(x))."""
    return float(sum(p * loss(f(x), g(x))
                     for x, _, p in zip(dist.xs, dist.ys, dist.probs)))


def l1_distance(a: DiscreteDist, b: DiscreteDist) -> float:
    """L1 distance between the weight functions over the union of supports."""
    weights_a: dict = {}
    weights_b: dict = {}
    for (point, w) in zip(a.points(), a.probs):
        weights_a[point] = weights_a.get(point, 0.0) + float(w)
    for (point, w) in zip(b.points(), b.probs):
        weights_b[point] = weights_b.get(point, 0.0) + float(w)
    universe = set(weights_a) | set(weights_b)
    return float(sum(abs(weights_a.get(u, 0.0) - weights_b.get(u, 0.0))
                     for u in universe))


@dataclass
class RiskReport:
    """Every term of the bound for one instance, plus the proof-step checks."""

    lhs: float            # empirical risk + teacher-consistency risk
    true_risk: float      # risk of f under the reference distribution
    l1_mix: float         # ||P_mix - P||_1
    l1_emp: float         # ||P_emp - P||_1
    teacher_risk: float   # risk of g under P_mix
    loss_sup: float       # M, max loss of f over the evaluated universe
    rhs: float
    holds: bool
    step_checks: dict[str, bool]

    def to_dict(self) -> dict:
        return asdict(self)


_TOL = 1e-9


def verify_bound(
    f,
    g,
    p_true: DiscreteDist,
    p_emp: DiscreteDist,
    p_mix: DiscreteDist,
    loss=abs_loss,
) -> RiskReport:
    """Evaluate every term of the bound and each inequality of its proof.

    The supremum M is taken over the union of the three supports, which is
    the whole evaluated universe. A violated inequality signals an
    implementation bug (the theorem guarantees the bound), so the report
    carries per-step booleans rather than raising mid-computation.
    """
    emp_risk = risk(f, p_emp, loss)
    mix_ts_risk = teacher_student_risk(f, g, p_mix, loss)
    lhs = emp_risk + mix_ts_risk

    true_risk = risk(f, p_true, loss)
    mix_risk_f = risk(f, p_mix, loss)
    teacher_risk = risk(g, p_mix, loss)
    l1_mix = l1_distance(p_mix, p_true)
    l1_emp = l1_distance(p_emp, p_true)

    loss_sup = 0.0
    for dist in (p_true, p_emp, p_mix):
        for x, y in zip(dist.xs, dist.ys):
            loss_sup = max(loss_sup, loss(f(x), y))

    rhs = 2.0 * true_risk + loss_sup * (l1_mix + l1_emp) + teacher_risk

    # cross-term of the teacher: |R_mix(f, g) - R_mix(f)| bounded first by
    # the integral of |l(f,g) - l(f,y)|, then via the triangle inequality
    # on the loss by the teacher's own risk
    integral_gap = float(sum(
        p * abs(loss(f(x), g(x)) - loss(f(x), y))
        for x, y, p in zip(p_mix.xs, p_mix.ys, p_mix.probs)))
    step_checks = {
        "teacher_cross_term_vs_integral":
            bool(abs(mix_ts_risk - mix_risk_f) <= integral_gap + _TOL),
        "integral_vs_teacher_risk": bool(integral_gap <= teacher_risk + _TOL),
        "emp_gap_vs_l1":
            bool(abs(emp_risk - true_risk) <= loss_sup * l1_emp + _TOL),
        "mix_gap_vs_l1":
            bool(abs(mix_risk_f - true_risk) <= loss_sup * l1_mix + _TOL),
        "decomposition":
            bool(lhs <= 2.0 * true_risk + abs(emp_risk - true_risk)
                 + abs(mix_risk_f - true_risk) + abs(mix_ts_risk - mix_risk_f)
                 + _TOL),
    }

    return RiskReport(
        lhs=lhs,
        true_risk=true_risk,
        l1_mix=l1_mix,
        l1_emp=l1_emp,
        teacher_risk=teacher_risk,
        loss_sup=loss_sup,
        rhs=rhs,
        holds=bool(lhs <= rhs + _TOL and all(step_checks.values())),
        step_checks=step_checks,
    )


# ---------------------------------------------------------------------------
# Random instances for the verification harness


def _random_dist(universe_x: np.ndarray, universe_y: np.ndarray,
                 rng: np.random.Generator) -> DiscreteDist:
    """Random distribution supported on a subset of a shared universe."""
    n = len(universe_x)
    size = int(rng.integers(1, n + 1))
    pick = rng.choice(n, size=size, replace=False)
    raw = rng.random(size) + 1e-3
    return DiscreteDist(
        xs=universe_x[pick],
        ys=universe_y[pick],
        probs=raw / raw.sum(),
    )


def _random_linear(dim: int, rng: np.random.Generator):
    w = rng.normal(0, 1, size=dim)
    b = float(rng.normal(0, 1))

    def predict(x, w=w, b=b) -> float:
        return float(np.dot(w, np.asarray(x, dtype=np.float64)) + b)

    return predict


def random_instance(rng: np.random.Generator, max_points: int = 20,
                    dim: int = 3) -> tuple:
    """One random (f, g, p_true, p_emp, p_mix) verification instance."""
    n = int(rng.integers(2, max_points + 1))
    universe_x = rng.normal(0, 1, size=(n, dim))
    universe_y = rng.normal(0, 1, size=n)
    return (
        _random_linear(dim, rng),
        _random_linear(dim, rng),
        _random_dist(universe_x, universe_y, rng),
        _random_dist(universe_x, universe_y, rng),
        _random_dist(universe_x, universe_y, rng),
    )


def run_verification(instances: int, seed: int = 0) -> list[RiskReport]:
    rng = np.random.default_rng(seed)
    return [verify_bound(*random_instance(rng)) for _ in range(instances)]
