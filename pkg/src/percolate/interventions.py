"""Policy interventions: effort subsidies and public exit signals.

A proportional subsidy delta lowers the marginal cost of search to
K'(c) - delta and is financed by a lump-sum entry tax tau = delta * c_bar / eta
balancing the flow budget at the treated equilibrium.  An education program
grants M free signals at exit, shifting the exit payoff to u(n + M).

Because equilibria can flip discontinuously, interesting witnesses sit next
to the boundary where an active (searching) equilibrium appears or vanishes.
The witness finders below locate that boundary by bisection on a
one-dimensional knob (the cost slope kappa, or the signal correlation rho)
and certify the welfare comparison on the entry support; every bisection is
recorded in the returned report.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .config import DEFAULT_CONFIG, SolverConfig
from .equilibrium import Equilibrium, EquilibriumReport, find_equilibria
from .errors import SolverError, ValidationError
from .model import CostSpec, ModelParams, PrecisionMeasure, exit_utility

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Basic transformations
# ---------------------------------------------------------------------------

def apply_subsidy(
    params: ModelParams,
    delta: float,
    config: SolverConfig = DEFAULT_CONFIG,
    selection: str = "pareto_best",
) -> tuple[ModelParams, float]:
    """Add a proportional effort subsidy and price its balanced-budget tax.

    Returns the treated parameters and the lump-sum entry tax
    tau = delta * c_bar / eta evaluated at the selected treated equilibrium.
    """
    if delta < 0:
        raise ValidationError("subsidy must be nonnegative")
    treated = params.with_(subsidy=params.subsidy + delta)
    report = find_equilibria(treated, config)
    eq = _select(report, selection)
    tax = delta * eq.state.c_bar / params.eta
    return treated, tax


def apply_education(params: ModelParams, signals: int) -> ModelParams:
    """Grant ``signals`` additional free signals at exit."""
    if signals < 0:
        raise ValidationError("signal grant must be nonnegative")
    return params.with_(public_signals=params.public_signals + signals)


def _select(report: EquilibriumReport, selection: str, anchor: int | None = None) -> Equilibrium:
    if not report.equilibria:
        raise SolverError("no equilibrium found to select from")
    if selection == "pareto_best":
        return report.equilibria[-1]
    if selection == "pareto_worst":
        return report.equilibria[0]
    if selection == "matched":
        if anchor is None:
            return report.equilibria[-1]
        return min(report.equilibria, key=lambda e: (abs(e.trigger - anchor), -e.trigger))
    raise ValidationError(f"unknown selection rule {selection!r}")


# ---------------------------------------------------------------------------
# Welfare comparison
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class InterventionOutcome:
    """Entrant-welfare comparison between a baseline and a treated market.

    ``welfare_delta[n]`` is V_treated(n) - tax - V_baseline(n).  The verdict
    aggregates the sign over the entry support: "improves" / "harms" when
    strict at every entry precision, else "ambiguous".
    """

    baseline: Equilibrium
    treated: Equilibrium
    tax: float
    welfare_delta: np.ndarray
    verdict: str
    selection: str

    @property
    def baseline_trigger(self) -> int:
        return self.baseline.trigger

    @property
    def treated_trigger(self) -> int:
        return self.treated.trigger


def welfare_compare(
    baseline: EquilibriumReport,
    treated: EquilibriumReport,
    tax: float = 0.0,
    selection: str = "pareto_best",
    strict_tol: float = 1e-12,
) -> InterventionOutcome:
    """Compare entrant values at selected equilibria, net of the entry tax."""
    eq_b = _select(baseline, selection)
    eq_t = _select(treated, selection, anchor=eq_b.trigger)
    delta = eq_t.best_response.value.values - tax - eq_b.best_response.value.values
    support = baseline.params.pi.support()
    on_support = delta[support]
    if np.all(on_support > strict_tol):
        verdict = "improves"
    elif np.all(on_support < -strict_tol):
        verdict = "harms"
    else:
        verdict = "ambiguous"
    return InterventionOutcome(
        baseline=eq_b,
        treated=eq_t,
        tax=tax,
        welfare_delta=delta,
        verdict=verdict,
        selection=selection,
    )


# ---------------------------------------------------------------------------
# Boundary location
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Bisection:
    """Record of a one-dimensional boundary search.

    ``active`` is the largest knob value observed with an active equilibrium,
    ``inactive`` the smallest without one (the predicate is nonincreasing in
    the knob); their gap is at most ``band`` in relative terms.
    """

    knob: str
    active: float
    inactive: float
    band: float
    evaluations: int


def _existence_boundary(
    make_params,
    lo: float,
    hi: float,
    band: float,
    config: SolverConfig,
    knob: str = "kappa",
) -> Bisection:
    """Bisect the knob between an active and an inactive market."""
    evals = 0

    def active(x: float) -> bool:
        nonlocal evals
        evals += 1
        return find_equilibria(make_params(x), config).has_active()

    if not active(lo):
        # Very cheap search can push every fixed-point trigger past the grid
        # ceiling, so the active window may start strictly inside (lo, hi);
        # walk a geometric ladder to find a foothold before bisecting.
        foothold = None
        step = lo
        while True:
            step *= 1.5
            if step >= hi:
                break
            if active(step):
                foothold = step
                break
        if foothold is None:
            raise SolverError(f"no active equilibrium found above {knob}={lo:.6g}")
        lo = foothold
    grow = 0
    while active(hi):
        lo = hi
        hi *= 2.0
        grow += 1
        if grow > 12:
            raise SolverError(f"active equilibrium persists up to {knob}={hi:.6g}")
    while hi - lo > band * hi:
        mid = 0.5 * (lo + hi)
        if active(mid):
            lo = mid
        else:
            hi = mid
    return Bisection(knob=knob, active=lo, inactive=hi, band=band, evaluations=evals)


# ---------------------------------------------------------------------------
# Subsidy witness: a small subsidy flips the market into active search
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SubsidyWitness:
    """A cost slope just above the search boundary, flipped by a small subsidy."""

    params: ModelParams
    delta: float
    tax: float
    boundary: Bisection
    condition_margin: float
    baseline: EquilibriumReport
    treated: EquilibriumReport
    outcome: InterventionOutcome


def _condition_margin(params: ModelParams, block: int) -> float:
    """Margin of the no-search-equilibrium condition at the entry block size.

    Negative margin means the marginal cost lies below the one-jump gain
    evaluated at the entry distribution itself (kappa small enough that the
    no-search market invites deviation at the block precision).
    """
    kp = params.effective_cost().marginal_right(params.c_lo)
    gain = (
        params.eta_prime
        / (params.r + params.eta_prime)
        * (exit_utility(params, 2 * block) - exit_utility(params, block))
        * params.c_hi
        * params.pi.weights[block]
    )
    return kp - gain


def find_subsidy_witness(
    block: int = 8,
    rho: float = 0.5,
    eta: float = 1.0,
    eta_prime: float = 1.0,
    r: float = 0.1,
    c_hi: float = 1.0,
    n_max: int = 256,
    band: float = 1e-4,
    config: SolverConfig = DEFAULT_CONFIG,
) -> SubsidyWitness:
    """Construct a market where a tiny subsidy strictly improves all entrants.

    Entry mixes precision 0 and a block of ``block`` signals; search is
    worthless without coordination, so an active equilibrium exists only below
    a kappa threshold.  The threshold is located by bisection (recorded), the
    baseline slope is set just above it, and the subsidy bridges the gap.
    The treated welfare check is net of the balanced-budget entry tax.
    """
    pi_map = {0: 0.5, block: 0.5}

    def make(kappa: float) -> ModelParams:
        return ModelParams(
            eta=eta,
            eta_prime=eta_prime,
            r=r,
            rho=rho,
            c_lo=0.0,
            c_hi=c_hi,
            cost=CostSpec(kind="linear", kappa=kappa),
            pi=PrecisionMeasure.from_mapping(pi_map, n_max),
            n_max=n_max,
        )

    start = -_condition_margin(make(0.0), block)  # one-jump gain scale
    if start <= 0:
        raise SolverError("entry block carries no search gain; pick a larger block")
    boundary = _existence_boundary(make, start / 8.0, start, band, config, knob="kappa")

    width = max(boundary.inactive - boundary.active, band * boundary.inactive)
    kappa_base = boundary.inactive + 2.0 * width
    params_base = make(kappa_base)

    baseline = find_equilibria(params_base, config)
    if baseline.has_active():
        raise SolverError("baseline unexpectedly active; widen the band")

    # A subsidy barely past the boundary leaves block entrants marginal: their
    # gross gain is second order in the overshoot while the entry tax is first
    # order in delta, so the net sign flips only once the treated market is
    # deep enough that entrants at the block are inframarginal.  Walk delta up
    # until every entry precision improves net of tax.
    last_error = "no subsidy level tried"
    for fraction in (0.3, 0.45, 0.6, 0.75, 0.9):
        delta = fraction * kappa_base
        treated_params, tax = apply_subsidy(params_base, delta, config)
        treated = find_equilibria(treated_params, config)
        if not treated.has_active():
            last_error = f"delta={delta:.6g} failed to activate the market"
            continue
        outcome = welfare_compare(baseline, treated, tax=tax)
        if outcome.verdict != "improves":
            last_error = f"delta={delta:.6g} gave verdict {outcome.verdict!r}"
            continue
        return SubsidyWitness(
            params=params_base,
            delta=delta,
            tax=tax,
            boundary=boundary,
            condition_margin=_condition_margin(params_base, block),
            baseline=baseline,
            treated=treated,
            outcome=outcome,
        )
    raise SolverError(f"no subsidy witness on the delta ladder: {last_error}")


# ---------------------------------------------------------------------------
# Education witness: free information can destroy valuable search
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EducationWitness:
    """A market where one free exit signal kills search and lowers welfare.

    ``entry_utility_delta`` is the expected value change for an entrant drawn
    from the entry measure (treated minus baseline); the witness certifies
    that it is strictly negative.  Entrants at the block can still gain a
    little individually — their search surplus is capped by the activation
    window while the free signal is worth a fixed amount to them — so the
    entrywise verdict may be ambiguous even though entry welfare falls.
    """

    params: ModelParams
    signals: int
    rho: float
    boundary_untreated: Bisection
    boundary_treated: Bisection
    baseline: EquilibriumReport
    treated: EquilibriumReport
    outcome: InterventionOutcome
    entry_utility_delta: float


def find_education_witness(
    block: int = 8,
    rho_grid: tuple[float, ...] = (0.15, 0.2, 0.25, 0.3, 0.35),
    eta: float = 1.0,
    eta_prime: float = 1.0,
    r: float = 0.1,
    c_hi: float = 1.0,
    n_max: int = 256,
    band: float = 1e-4,
    config: SolverConfig = DEFAULT_CONFIG,
) -> EducationWitness:
    """Construct a market where granting one free exit signal lowers entry welfare.

    The free signal shrinks the payoff gap that motivates search, so the
    kappa threshold for active equilibria drops.  For a cost slope between
    the treated and untreated thresholds, the baseline market searches while
    the treated one collapses to no search.  The signal's direct worth decays
    quadratically with correlation while the foregone ladder of pooling jumps
    scales with the block size, so weak signals favor the loss; the grid is
    scanned from the smallest correlation up and the first strict drop in
    expected entry utility wins (both threshold bisections recorded).
    """
    last_error: str = "rho grid exhausted"
    for rho in rho_grid:
        pi_map = {0: 0.5, block: 0.5}

        def make(kappa: float, signals: int = 0) -> ModelParams:
            return ModelParams(
                eta=eta,
                eta_prime=eta_prime,
                r=r,
                rho=rho,
                c_lo=0.0,
                c_hi=c_hi,
                cost=CostSpec(kind="linear", kappa=kappa),
                pi=PrecisionMeasure.from_mapping(pi_map, n_max),
                n_max=n_max,
                public_signals=signals,
            )

        start = -_condition_margin(make(0.0), block)
        if start <= 0:
            last_error = f"no search gain at rho={rho}"
            continue
        try:
            b0 = _existence_boundary(
                lambda k: make(k, 0), start / 8.0, start, band, config, knob="kappa"
            )
            b1 = _existence_boundary(
                lambda k: make(k, 1), start / 16.0, start, band, config, knob="kappa"
            )
        except SolverError as exc:
            last_error = f"rho={rho}: {exc}"
            continue
        if b1.inactive >= b0.active:
            last_error = f"rho={rho}: thresholds not separated"
            continue
        # Sit near the bottom of the separating window: the baseline market
        # keeps as much search surplus as possible while one public signal
        # still collapses it.
        kappa = min(math.sqrt(b1.inactive * b0.active), b1.inactive * 1.05)
        baseline = find_equilibria(make(kappa, 0), config)
        treated = find_equilibria(make(kappa, 1), config)
        if not baseline.has_active() or treated.has_active():
            last_error = f"rho={rho}: midpoint slope did not separate the markets"
            continue
        outcome = welfare_compare(baseline, treated, tax=0.0)
        pi_w = baseline.params.pi.weights
        entry_delta = float(np.dot(pi_w, outcome.welfare_delta))
        if entry_delta < -1e-10:
            return EducationWitness(
                params=make(kappa, 0),
                signals=1,
                rho=rho,
                boundary_untreated=b0,
                boundary_treated=b1,
                baseline=baseline,
                treated=treated,
                outcome=outcome,
                entry_utility_delta=entry_delta,
            )
        last_error = f"rho={rho}: entry utility did not fall ({entry_delta:.3e})"
    raise SolverError(f"no education witness found: {last_error}")


# ---------------------------------------------------------------------------
# Monotone comparative statics used by the invariant tests
# ---------------------------------------------------------------------------

def subsidy_trigger_path(
    params: ModelParams,
    deltas: "list[float]",
    config: SolverConfig = DEFAULT_CONFIG,
) -> list[int]:
    """Pareto-best treated triggers along a subsidy grid (should be nondecreasing)."""
    out = []
    for d in deltas:
        report = find_equilibria(params.with_(subsidy=params.subsidy + d), config)
        out.append(report.best().trigger)
    return out


def education_path(
    params: ModelParams,
    grants: "list[int]",
    config: SolverConfig = DEFAULT_CONFIG,
) -> list[EquilibriumReport]:
    """Equilibrium reports along a public-signal grid (triggers should fall)."""
    return [find_equilibria(apply_education(params, m), config) for m in grants]
