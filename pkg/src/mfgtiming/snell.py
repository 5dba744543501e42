"""Optimal stopping on an information tree, with extremal rule selection.

Backward induction computes, per node, the exact reward of stopping now
and the conditional expectation of continuing; the minimal optimal rule
stops at the first date where stopping is within tolerance of optimal,
the maximal one only where stopping is strictly better.  A brute-force
enumerator over all canonical rules serves as the validation oracle on
small trees.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._expect import stop_reward_layers
from .lattice import AdaptedMeasure, LatticeModel
from .trees import InfoTree, StoppingRule, count_rules, enumerate_rules

TIE_TOL = 1e-9


@dataclass(frozen=True)
class SnellSolution:
    """Value and extremal optimal rules of one stopping problem."""

    value: float
    rule_min: StoppingRule
    rule_max: StoppingRule
    stop_rewards: list  # per-layer arrays, E[payoff | node]
    continuations: list  # per-layer arrays; at the horizon equals stop_rewards

    def node_values(self, k: int) -> np.ndarray:
        """max(stop, continue) per local node at layer k."""
        return np.maximum(self.stop_rewards[k], self.continuations[k])


def snell_solve(payoff, mu: AdaptedMeasure, tree: InfoTree,
                lat: LatticeModel | None = None, tol: float = TIE_TOL) -> SnellSolution:
    """Solve the stopping problem for a fixed crowd measure.

    Stop rewards are exact posterior-weighted conditional expectations;
    continuation values average the children.  Horizon nodes are forced
    stops.
    """
    lat = lat or tree.lat
    if tree.lat != lat or mu.lat != lat:
        raise ValueError("lattice mismatch")
    rewards = stop_reward_layers(payoff, mu, tree)
    K = lat.steps
    conts: list = [None] * (K + 1)
    conts[K] = rewards[K]
    dec_min = np.zeros(tree.num_nodes, dtype=bool)
    dec_max = np.zeros(tree.num_nodes, dtype=bool)
    dec_min[tree.offsets[K]:] = True
    dec_max[tree.offsets[K]:] = True
    values = rewards[K]
    for k in range(K - 1, -1, -1):
        cont = tree.continuation(k, values)
        stop = rewards[k]
        sl = slice(int(tree.offsets[k]), int(tree.offsets[k + 1]))
        dec_min[sl] = stop >= cont - tol
        dec_max[sl] = stop > cont + tol
        conts[k] = cont
        values = np.maximum(stop, cont)
    return SnellSolution(
        value=float(values[0]),
        rule_min=StoppingRule(tree, dec_min),
        rule_max=StoppingRule(tree, dec_max),
        stop_rewards=rewards,
        continuations=conts,
    )


# ---------------------------------------------------------------------------
# brute-force oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BruteForceResult:
    value: float
    rule_min: StoppingRule
    rule_max: StoppingRule
    rules_searched: int


def _reward_table(payoff, mu: AdaptedMeasure, lat: LatticeModel):
    """R[b, w?, k] = payoff of stopping at date k on that joint path."""
    bvals, wvals, grid = lat.b_values, lat.w_values, lat.grid
    n = lat.num_paths
    ev = payoff.evaluate
    nw = 1 if not payoff.w_dependent else n
    table = np.empty((n, nw, lat.steps + 1))
    for b in range(n):
        m = mu.grid_measure(b)
        brow = bvals[b]
        for w in range(nw):
            wrow = wvals[w]
            for k in range(lat.steps + 1):
                table[b, w, k] = ev(brow, wrow, m, float(grid[k]))
    return table


def _rule_value(table: np.ndarray, steps: np.ndarray, n: int) -> float:
    nb, nw, _ = table.shape
    if steps.shape[1] == 1:
        if nw == 1:
            vals = table[np.arange(nb), 0, steps[:, 0]]
            return float(vals.mean())
        vals = table[np.arange(nb)[:, None], np.arange(nw)[None, :],
                     steps[:, :1]]
        return float(vals.mean())
    wide = np.broadcast_to(steps, (n, n))
    if nw == 1:
        vals = table[np.arange(n)[:, None], 0, wide]
    else:
        vals = table[np.arange(n)[:, None], np.arange(n)[None, :], wide]
    return float(vals.mean())


def brute_force_optimal(payoff, mu: AdaptedMeasure, tree: InfoTree,
                        lat: LatticeModel | None = None, cap: int = 10 ** 7,
                        tol: float = TIE_TOL) -> BruteForceResult:
    """Exhaustively evaluate every canonical rule on the tree.

    Returns the optimal value together with the pointwise-minimal and
    pointwise-maximal optimizers among rules within ``tol`` of the
    optimum (ties form a lattice, so the pointwise extremes of the tie
    set are themselves optimal rules).
    """
    lat = lat or tree.lat
    total = count_rules(tree)
    if total > cap:
        raise ValueError(f"enumeration too large: {total} rules exceeds cap {cap}")
    table = _reward_table(payoff, mu, lat)
    n = lat.num_paths

    best = -np.inf
    for rule in enumerate_rules(tree, cap):
        v = _rule_value(table, rule.stop_steps(), n)
        if v > best:
            best = v

    min_steps = None
    max_steps = None
    searched = 0
    for rule in enumerate_rules(tree, cap):
        searched += 1
        steps = rule.stop_steps()
        if _rule_value(table, steps, n) >= best - tol:
            if min_steps is None:
                min_steps = steps.copy()
                max_steps = steps.copy()
            else:
                shape = np.broadcast_shapes(min_steps.shape, steps.shape)
                min_steps = np.minimum(np.broadcast_to(min_steps, shape),
                                       np.broadcast_to(steps, shape))
                max_steps = np.maximum(np.broadcast_to(max_steps, shape),
                                       np.broadcast_to(steps, shape))
    rule_min = StoppingRule.from_times(tree, min_steps)
    rule_max = StoppingRule.from_times(tree, max_steps)
    for extreme in (rule_min, rule_max):
        v = _rule_value(table, extreme.stop_steps(), n)
        if v < best - 10 * tol:
            raise AssertionError("tie set is not a lattice: extreme rule suboptimal")
    return BruteForceResult(best, rule_min, rule_max, searched)
