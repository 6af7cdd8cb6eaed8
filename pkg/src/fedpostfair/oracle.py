"""Exact reference solutions on small discrete problems, and numerical audits.

On a finite alphabet both the risk and every disparity are linear in the
per-cell acceptance probabilities ``h``, so the constrained problem over
randomized classifiers is a small linear program.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import linprog, minimize

from .criteria import Criterion, DisparitySpec, coefficient_vector
from .domain import SENSITIVE_GROUPS, FairnessBudget, GroupStatistics, statistics_from_masses
from .errors import Infeasible, InvalidSpec, SolverFailure
from .postproc import ClientObjective, DualParams, FairnessConstraints, calibration_score

MAX_LP_CELLS = 200
MAX_ENUM_CELLS = 12
FEAS_TOL = 1e-9
DEGENERACY_TOL = 1e-8
CONTINUATION_BETAS = (1e2, 1e3, 1e4)


@dataclass(frozen=True)
class Cell:
    x_id: int
    a: int
    c: int
    mass: float
    eta: float


@dataclass
class DiscreteInstance:
    cells: list[Cell]
    budget: FairnessBudget
    criterion: Criterion = Criterion.DP
    num_clients: int | None = None
    name: str = ""

    def __post_init__(self):
        self.criterion = Criterion(self.criterion)
        if not self.cells:
            raise InvalidSpec("instance has no cells")
        if len(self.cells) > MAX_LP_CELLS:
            raise InvalidSpec(f"at most {MAX_LP_CELLS} cells are supported")
        for cell in self.cells:
            if cell.a not in SENSITIVE_GROUPS or cell.c < 0 or cell.mass < 0 or not 0 <= cell.eta <= 1:
                raise InvalidSpec(f"bad cell {cell}")
        if not math.isclose(math.fsum(c.mass for c in self.cells), 1.0, abs_tol=1e-9):
            raise InvalidSpec("cell masses must sum to 1")
        if self.num_clients is None:
            self.num_clients = max(c.c for c in self.cells) + 1

    @property
    def mass(self) -> np.ndarray:
        return np.array([c.mass for c in self.cells])

    @property
    def eta(self) -> np.ndarray:
        return np.array([c.eta for c in self.cells])

    @property
    def sensitive(self) -> np.ndarray:
        return np.array([c.a for c in self.cells])

    @property
    def client(self) -> np.ndarray:
        return np.array([c.c for c in self.cells])

    def with_budget(self, budget: FairnessBudget) -> "DiscreteInstance":
        return DiscreteInstance(list(self.cells), budget, self.criterion, self.num_clients, self.name)

    def constraints(self) -> FairnessConstraints:
        return FairnessConstraints(self.criterion, self.budget, self.num_clients)

    def to_dict(self) -> dict:
        enc = lambda v: None if math.isinf(v) else v
        return {
            "name": self.name,
            "criterion": self.criterion.value,
            "num_clients": self.num_clients,
            "budget": {
                "global": enc(self.budget.global_delta),
                "local": {str(c): enc(v) for c, v in sorted(self.budget.local_delta.items())},
            },
            "cells": [
                {"x_id": c.x_id, "a": c.a, "c": c.c, "mass": c.mass, "eta": c.eta} for c in self.cells
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DiscreteInstance":
        dec = lambda v: math.inf if v is None else float(v)
        cells = [Cell(int(c["x_id"]), int(c["a"]), int(c["c"]), float(c["mass"]), float(c["eta"])) for c in d["cells"]]
        num_clients = d.get("num_clients") or max(c.c for c in cells) + 1
        b = d.get("budget", {})
        local = b.get("local")
        if isinstance(local, Mapping):
            local_delta = {int(k): dec(v) for k, v in local.items()}
        else:
            local_delta = {c: dec(local) for c in range(num_clients)}
        budget = FairnessBudget(dec(b.get("global")), local_delta)
        return cls(cells, budget, Criterion(d.get("criterion", "DP")), num_clients, d.get("name", ""))


def load_instances(path) -> list[DiscreteInstance]:
    doc = json.loads(Path(path).read_text())
    items = doc if isinstance(doc, list) else doc.get("instances", [doc])
    return [DiscreteInstance.from_dict(d) for d in items]


def save_instances(instances: Sequence[DiscreteInstance], path) -> None:
    Path(path).write_text(json.dumps([i.to_dict() for i in instances], indent=1, sort_keys=True))


def instance_statistics(instance: DiscreteInstance) -> GroupStatistics:
    mass, positive = {}, {}
    for cell in instance.cells:
        key = (cell.a, cell.c)
        mass[key] = mass.get(key, 0.0) + cell.mass
        positive[key] = positive.get(key, 0.0) + cell.mass * cell.eta
    return statistics_from_masses(mass, positive, instance.num_clients)


def positive_rate(instance: DiscreteInstance) -> float:
    return float(instance.mass @ instance.eta)


def bayes_risk(instance: DiscreteInstance) -> float:
    eta = instance.eta
    return float(instance.mass @ np.minimum(eta, 1.0 - eta))


def risk(instance: DiscreteInstance, h) -> float:
    """R(h) = P(Y=1) - sum_i mass_i (2 eta_i - 1) h_i."""
    h = np.asarray(h, dtype=float)
    return positive_rate(instance) - float(instance.mass @ ((2.0 * instance.eta - 1.0) * h))


@dataclass
class ConstraintRows:
    """Each row r satisfies ``|rows[r] . h| <= deltas[r]``; ``labels`` name the disparity."""

    rows: np.ndarray
    deltas: np.ndarray
    labels: list[str]


def constraint_rows(instance: DiscreteInstance) -> ConstraintRows:
    stats = instance_statistics(instance)
    constraints = instance.constraints()
    cond = np.array([cell.mass / stats.p_ac[(cell.a, cell.c)] if cell.mass > 0 else 0.0 for cell in instance.cells])
    rows, deltas, labels = [], [], []
    specs: list[tuple[DisparitySpec, float, str]] = []
    if constraints.global_spec is not None:
        specs.append((constraints.global_spec, instance.budget.global_delta, "global"))
    for c in range(instance.num_clients):
        spec = constraints.local_spec(c)
        if spec is not None:
            specs.append((spec, instance.budget.local(c), f"local{c}"))
    for spec, delta, label in specs:
        block = np.zeros((spec.k, len(instance.cells)))
        for i, cell in enumerate(instance.cells):
            if cell.mass == 0 or (not spec.is_global and cell.c != spec.client):
                continue
            block[:, i] = cond[i] * coefficient_vector(spec, cell.a, cell.c, cell.eta, stats)
        for k in range(spec.k):
            rows.append(block[k]); deltas.append(delta); labels.append(f"{label}[{k}]")
    n = len(instance.cells)
    return ConstraintRows(np.array(rows).reshape(len(rows), n), np.array(deltas), labels)


def disparities(instance: DiscreteInstance, h) -> dict[str, float]:
    cr = constraint_rows(instance)
    values = cr.rows @ np.asarray(h, dtype=float)
    return dict(zip(cr.labels, values.tolist()))


def max_violation(instance: DiscreteInstance, h) -> float:
    cr = constraint_rows(instance)
    if not len(cr.deltas):
        return 0.0
    return float(np.max(np.maximum(np.abs(cr.rows @ np.asarray(h, dtype=float)) - cr.deltas, 0.0)))


@dataclass
class OracleSolution:
    risk: float
    h: np.ndarray

    @property
    def is_integral(self) -> bool:
        return bool(np.all(np.minimum(self.h, 1.0 - self.h) <= 1e-9))


def exact_optimal_fair(instance: DiscreteInstance) -> OracleSolution:
    """Minimum risk over randomized classifiers subject to the instance's budgets (HiGHS LP)."""
    cr = constraint_rows(instance)
    gain = instance.mass * (2.0 * instance.eta - 1.0)
    if len(cr.deltas):
        a_ub = np.vstack([cr.rows, -cr.rows])
        b_ub = np.concatenate([cr.deltas, cr.deltas])
    else:
        a_ub = b_ub = None
    res = linprog(
        -gain, A_ub=a_ub, b_ub=b_ub, bounds=[(0.0, 1.0)] * len(gain), method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status == 2:
        raise Infeasible(f"LP infeasible for instance {instance.name!r}")
    if res.status != 0:
        raise SolverFailure(f"LP solver status {res.status}: {res.message}")
    h = np.clip(res.x, 0.0, 1.0)
    h[np.abs(h) < 1e-12] = 0.0
    h[np.abs(h - 1.0) < 1e-12] = 1.0
    violation = max_violation(instance, h)
    if violation > FEAS_TOL:
        raise SolverFailure(f"LP solution violates constraints by {violation:.3g}")
    return OracleSolution(risk(instance, h), h)


def enumerate_optimal_fair(instance: DiscreteInstance) -> OracleSolution:
    """Independent solve by visiting every vertex of the feasible polytope.

    A vertex fixes all but ``r`` cells at 0 or 1 and puts ``r`` constraints
    on their boundary ``row . h = +-delta``; the ``r`` free cells then solve
    a square linear system.
    """
    n = len(instance.cells)
    if n > MAX_ENUM_CELLS:
        raise InvalidSpec(f"vertex enumeration supports at most {MAX_ENUM_CELLS} cells")
    cr = constraint_rows(instance)
    gain = instance.mass * (2.0 * instance.eta - 1.0)
    hyperplanes = []
    for row, delta in zip(cr.rows, cr.deltas):
        hyperplanes.append((row, delta))
        if delta > 0:
            hyperplanes.append((row, -delta))
    best_h, best_gain = None, -math.inf

    def consider(h):
        nonlocal best_h, best_gain
        if h.min() < -FEAS_TOL or h.max() > 1 + FEAS_TOL:
            return
        h = np.clip(h, 0.0, 1.0)
        if len(cr.deltas) and np.max(np.abs(cr.rows @ h) - cr.deltas) > FEAS_TOL:
            return
        g = float(gain @ h)
        if g > best_gain + 1e-15:
            best_h, best_gain = h, g

    for r in range(0, min(n, len(hyperplanes)) + 1):
        for planes in itertools.combinations(range(len(hyperplanes)), r):
            a_rows = np.array([hyperplanes[j][0] for j in planes]).reshape(r, n)
            rhs = np.array([hyperplanes[j][1] for j in planes])
            for free in itertools.combinations(range(n), r):
                fixed = [i for i in range(n) if i not in free]
                sub = a_rows[:, list(free)]
                if r and abs(np.linalg.det(sub)) < 1e-14:
                    continue
                for bits in itertools.product((0.0, 1.0), repeat=len(fixed)):
                    h = np.zeros(n)
                    h[fixed] = bits
                    if r:
                        h[list(free)] = np.linalg.solve(sub, rhs - a_rows[:, fixed] @ np.array(bits))
                    consider(h)
    if best_h is None:
        raise Infeasible("no feasible vertex found")
    return OracleSolution(risk(instance, best_h), best_h)


# ---------------------------------------------------------------------------
# Smoothed dual, solved centrally
# ---------------------------------------------------------------------------

def instance_objectives(instance: DiscreteInstance, beta: float) -> list[ClientObjective]:
    """Per-client smoothed objectives with population (conditional cell mass) weights."""
    stats = instance_statistics(instance)
    constraints = instance.constraints()
    sens, client, eta, mass = instance.sensitive, instance.client, instance.eta, instance.mass
    out = []
    for c in range(instance.num_clients):
        idx = np.flatnonzero(client == c)
        w = np.array([mass[i] / stats.p_ac[(sens[i], c)] if mass[i] > 0 else 0.0 for i in idx])
        out.append(ClientObjective(c, eta[idx], sens[idx], stats, constraints, beta, weights=w))
    return out


def _pack_layout(objectives: Sequence[ClientObjective]):
    n_lam = objectives[0].n_lambda
    offsets, pos = [], n_lam
    for o in objectives:
        offsets.append((pos, pos + o.n_mu))
        pos += o.n_mu
    return n_lam, offsets, pos


def _unpack(x, n_lam, offsets, objectives) -> DualParams:
    return DualParams(lam=x[:n_lam].copy(), mu={o.client: x[s:e].copy() for o, (s, e) in zip(objectives, offsets)})


def smoothed_dual_value(objectives: Sequence[ClientObjective], duals: DualParams) -> float:
    return math.fsum(o.value(duals.lam, duals.mu_c(o.client)) for o in objectives)


def centralized_smoothed_dual(
    instance: DiscreteInstance, betas: Sequence[float] = CONTINUATION_BETAS
) -> tuple[DualParams, float]:
    """Minimise the smoothed dual over all multipliers at once (bounded L-BFGS).

    Solves for increasing ``beta``, warm-starting each solve; returns the
    duals and the objective at the last ``beta``.
    """
    x = None
    value = math.nan
    for beta in betas:
        objectives = instance_objectives(instance, beta)
        n_lam, offsets, dim = _pack_layout(objectives)
        if x is None:
            x = np.zeros(dim)
        if dim == 0:
            return _unpack(x, n_lam, offsets, objectives), smoothed_dual_value(objectives, _unpack(x, n_lam, offsets, objectives))

        def fun(v):
            d = _unpack(v, n_lam, offsets, objectives)
            total, grad = 0.0, np.zeros(dim)
            for o, (s, e) in zip(objectives, offsets):
                mu = d.mu_c(o.client)
                total += o.value(d.lam, mu)
                g_lam, g_mu = o.gradient(d.lam, mu)
                grad[:n_lam] += g_lam
                grad[s:e] += g_mu
            return total, grad

        res = minimize(fun, x, jac=True, method="L-BFGS-B", bounds=[(0.0, None)] * dim,
                       options={"maxiter": 20000, "maxfun": 40000, "ftol": 1e-16, "gtol": 1e-13})
        if not np.isfinite(res.x).all():
            raise SolverFailure("smoothed dual solve produced non-finite duals")
        x = res.x
        value = float(res.fun)
    return _unpack(x, n_lam, offsets, objectives), value


def threshold_classifier(instance: DiscreteInstance, duals: DualParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell calibration scores and the resulting 0/1 decisions."""
    stats = instance_statistics(instance)
    constraints = instance.constraints()
    f = np.array([
        calibration_score(duals, cell.eta, cell.a, cell.c, stats, constraints) if cell.mass > 0 else 1.0
        for cell in instance.cells
    ])
    return f, (f >= 0).astype(float)


@dataclass
class Theorem1Report:
    name: str
    lp_risk: float
    threshold_risk: float
    gap: float
    violation: float
    min_abs_calibration: float
    degenerate: bool
    duals: DualParams = field(repr=False)

    def passed(self, risk_tol: float = 1e-3, violation_tol: float = 1e-6) -> bool:
        return self.degenerate or (self.gap <= risk_tol and self.violation <= violation_tol)

    def to_dict(self) -> dict:
        return {
            "name": self.name, "lp_risk": self.lp_risk, "threshold_risk": self.threshold_risk,
            "gap": self.gap, "violation": self.violation,
            "min_abs_calibration": self.min_abs_calibration, "degenerate": self.degenerate,
        }


def verify_theorem1(
    instance: DiscreteInstance,
    duals: DualParams | None = None,
    betas: Sequence[float] = CONTINUATION_BETAS,
) -> Theorem1Report:
    """Compare the thresholded dual classifier with the LP optimum.

    The check is flagged ``degenerate`` when the optimum has mass on the
    threshold: either some calibration score lies within 1e-8 of zero, or
    the LP optimum randomizes on a cell (complementary slackness then puts
    that cell exactly at F = 0).
    """
    lp = exact_optimal_fair(instance)
    if duals is None:
        duals, _ = centralized_smoothed_dual(instance, betas)
    f, h = threshold_classifier(instance, duals)
    r = risk(instance, h)
    live = instance.mass > 0
    min_f = float(np.min(np.abs(f[live]))) if live.any() else math.inf
    return Theorem1Report(
        name=instance.name,
        lp_risk=lp.risk,
        threshold_risk=r,
        gap=abs(r - lp.risk),
        violation=max_violation(instance, h),
        min_abs_calibration=min_f,
        degenerate=min_f <= DEGENERACY_TOL or not lp.is_integral,
        duals=duals,
    )


# ---------------------------------------------------------------------------
# Gradient audit
# ---------------------------------------------------------------------------

def objective_handle(objective: ClientObjective) -> tuple[Callable, Callable, int]:
    """Flatten a client objective to f(x), grad(x) over x = (lam, mu)."""
    n_lam = objective.n_lambda

    def f(x):
        return objective.value(x[:n_lam], x[n_lam:])

    def grad(x):
        g_lam, g_mu = objective.gradient(x[:n_lam], x[n_lam:])
        return np.concatenate([g_lam, g_mu])

    return f, grad, n_lam + objective.n_mu


def finite_diff_grad_check(objective, point, step: float = 1e-6) -> float:
    """Max coordinate error of the analytic gradient against central differences.

    ``objective`` is a :class:`ClientObjective` or an ``(f, grad)`` pair.
    The error is scaled by the larger of the two gradients' max-norms.
    """
    if not 1e-8 <= step <= 1e-4:
        raise InvalidSpec(f"step must lie in [1e-8, 1e-4], got {step}")
    if isinstance(objective, ClientObjective):
        f, grad, _ = objective_handle(objective)
    else:
        f, grad = objective
    x = np.asarray(point, dtype=float)
    g = np.asarray(grad(x), dtype=float)
    fd = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = step
        fd[i] = (f(x + e) - f(x - e)) / (2.0 * step)
    scale = max(float(np.max(np.abs(g), initial=0.0)), float(np.max(np.abs(fd), initial=0.0)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(g - fd)) / scale)


# ---------------------------------------------------------------------------
# Instance suites
# ---------------------------------------------------------------------------

def _cells(spec: Sequence[tuple[int, int, float, float]]) -> list[Cell]:
    return [Cell(i, a, c, m, e) for i, (a, c, m, e) in enumerate(spec)]


def asymmetric_instance(delta: float = 0.0, criterion: Criterion = Criterion.DP) -> DiscreteInstance:
    """Four cells on one client where Bayes thresholding is unfair."""
    cells = _cells([(1, 0, 0.3, 0.8), (1, 0, 0.2, 0.3), (-1, 0, 0.3, 0.4), (-1, 0, 0.2, 0.6)])
    return DiscreteInstance(cells, FairnessBudget.uniform(1, delta, delta), criterion, 1, f"asym4_{criterion.value}_{delta}")


def symmetric_instance(criterion: Criterion = Criterion.DP) -> DiscreteInstance:
    """Two clients, each a mirror image across the sensitive groups; zero budgets."""
    half = [(0.15, 0.8), (0.10, 0.3)]
    spec = []
    for c, scale in ((0, 0.6), (1, 0.4)):
        for a in SENSITIVE_GROUPS:
            for m, e in half:
                spec.append((a, c, m * scale / 0.5, e))
    cells = _cells(spec)
    return DiscreteInstance(cells, FairnessBudget.uniform(2, 0.0, 0.0), criterion, 2, f"symmetric_{criterion.value}")


def random_instance(rng: np.random.Generator, n_cells: int, criterion: Criterion, num_clients: int = 2) -> DiscreteInstance:
    """Random masses and eta with at least one cell per (a, c) group; no budgets yet."""
    groups = [(a, c) for c in range(num_clients) for a in SENSITIVE_GROUPS]
    if n_cells < len(groups):
        raise InvalidSpec(f"need at least {len(groups)} cells")
    owner = list(range(len(groups))) + list(rng.integers(0, len(groups), n_cells - len(groups)))
    mass = rng.dirichlet(np.full(n_cells, 2.0))
    mass = mass / math.fsum(mass)
    eta = rng.uniform(0.05, 0.95, n_cells)
    cells = [Cell(i, groups[g][0], groups[g][1], float(mass[i]), float(eta[i])) for i, g in enumerate(owner)]
    return DiscreteInstance(cells, FairnessBudget(), criterion, num_clients)


def _budget_of(instance: DiscreteInstance, h) -> FairnessBudget:
    """Budgets equal to the disparities that ``h`` realises."""
    full = instance.with_budget(FairnessBudget.uniform(instance.num_clients, 0.0, 0.0))
    d = disparities(full, h)
    glob = max(abs(v) for k, v in d.items() if k.startswith("global"))
    local = {c: max(abs(v) for k, v in d.items() if k.startswith(f"local{c}[")) for c in range(instance.num_clients)}
    return FairnessBudget(glob, local)


def random_nondegenerate_instance(
    rng: np.random.Generator,
    n_cells: int,
    criterion: Criterion,
    num_clients: int = 2,
    shrink: float = 0.4,
    max_tries: int = 200,
) -> DiscreteInstance:
    """A random instance whose fair LP optimum is a deterministic classifier.

    Budgets start at ``shrink`` times the Bayes classifier's disparities; the
    LP solution is rounded to 0/1 and the budgets reset to the rounded
    classifier's own disparities, so that classifier is feasible and the
    re-solved optimum is integral with active constraints.
    """
    for _ in range(max_tries):
        inst = random_instance(rng, n_cells, criterion, num_clients)
        bayes_h = (inst.eta >= 0.5).astype(float)
        start = _budget_of(inst, bayes_h)
        shrunk = FairnessBudget(start.global_delta * shrink, {c: v * shrink for c, v in start.local_delta.items()})
        sol = exact_optimal_fair(inst.with_budget(shrunk))
        rounded = np.round(sol.h)
        budget = _budget_of(inst, rounded)
        candidate = inst.with_budget(budget)
        resolved = exact_optimal_fair(candidate)
        if not resolved.is_integral:
            continue
        if abs(resolved.risk - bayes_risk(candidate)) < 1e-6:
            continue  # constraints inactive
        candidate.name = f"random_{criterion.value}_{n_cells}"
        return candidate
    raise SolverFailure("could not generate a non-degenerate instance")


def builtin_instances() -> list[DiscreteInstance]:
    out = [
        asymmetric_instance(0.0, Criterion.DP),
        asymmetric_instance(math.inf, Criterion.DP).with_budget(FairnessBudget()),
        symmetric_instance(Criterion.DP),
        symmetric_instance(Criterion.EO),
    ]
    out[1].name = "asym4_unconstrained"
    slack = asymmetric_instance(0.0, Criterion.DP)
    bayes_d = _budget_of(slack, (slack.eta >= 0.5).astype(float))
    slack = slack.with_budget(FairnessBudget(bayes_d.global_delta + 0.05, {c: v + 0.05 for c, v in bayes_d.local_delta.items()}))
    slack.name = "asym4_slack"
    out.append(slack)
    rng = np.random.default_rng(20240601)
    for i, crit in enumerate([Criterion.DP, Criterion.EO] * 3):
        inst = random_nondegenerate_instance(rng, 4 + 2 * i, crit)
        inst.name = f"random_{crit.value}_{i}"
        out.append(inst)
    return out


@dataclass
class OracleCheck:
    name: str
    lp_risk: float
    bayes_risk: float
    enum_risk: float | None
    theorem1: Theorem1Report
    ok: bool
    notes: list[str]

    def to_dict(self) -> dict:
        return {
            "name": self.name, "lp_risk": self.lp_risk, "bayes_risk": self.bayes_risk,
            "enum_risk": self.enum_risk, "theorem1": self.theorem1.to_dict(), "ok": self.ok, "notes": self.notes,
        }


def run_oracle_checks(instances: Sequence[DiscreteInstance], risk_tol: float = 1e-3, violation_tol: float = 1e-6) -> list[OracleCheck]:
    """LP vs enumeration, Bayes reduction for unconstrained instances, and the thresholding check."""
    results = []
    for inst in instances:
        notes = []
        lp = exact_optimal_fair(inst)
        br = bayes_risk(inst)
        ok = lp.risk >= br - 1e-12
        enum_risk = None
        if len(inst.cells) <= 8:
            enum_risk = enumerate_optimal_fair(inst).risk
            if abs(enum_risk - lp.risk) > 1e-9:
                ok = False
                notes.append(f"enumeration disagrees: {enum_risk} vs {lp.risk}")
        unconstrained = not inst.budget.global_active and not any(
            inst.budget.local_active(c) for c in range(inst.num_clients))
        if unconstrained and abs(lp.risk - br) > 1e-12:
            ok = False
            notes.append("unconstrained LP risk differs from Bayes risk")
        report = verify_theorem1(inst)
        if report.degenerate:
            notes.append("degenerate: threshold check skipped")
        elif not report.passed(risk_tol, violation_tol):
            ok = False
            notes.append(f"threshold gap {report.gap:.3g}, violation {report.violation:.3g}")
        results.append(OracleCheck(inst.name, lp.risk, br, enum_risk, report, ok, notes))
    return results
