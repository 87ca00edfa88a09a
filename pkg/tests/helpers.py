"""Shared oracles and generators for the test suite."""

import math

import numpy as np

from spdelab.controls import ControlPair
from spdelab.rate import cost_of_control


def random_control_in_ball(model, budget, rng, n_cells=8, g_spread=1.0):
    """Random piecewise-constant control with total cost <= budget.

    f is rescaled analytically; the tilt is shrunk toward 1 until the joint
    cost fits, so the result always lies in the closed cost ball.
    """
    edges = np.linspace(0.0, model.t_end, n_cells + 1)
    f = rng.standard_normal((n_cells, model.n_modes))
    g = np.exp(rng.uniform(-g_spread, g_spread, size=(n_cells, model.n_marks)))
    q = ControlPair(edges=edges, f=f, g=g)
    share = rng.uniform(0.2, 0.8)
    costs = cost_of_control(q, model.marks)
    if costs.tilde_cost > 0:
        f = f * math.sqrt(share * budget / costs.tilde_cost) * rng.uniform(0.3, 1.0)
    for _ in range(200):
        q = ControlPair(edges=edges, f=f, g=g)
        costs = cost_of_control(q, model.marks)
        if costs.total <= budget:
            return q
        g = 1.0 + 0.85 * (g - 1.0)
    return ControlPair(edges=edges, f=np.zeros_like(f), g=np.ones_like(g))


def lq_steering_cost(rate, x0, target, t_end):
    """Minimum-energy cost to steer x' = -rate x + f from x0 to target.

    The optimal control is f*(s) = c e^{-rate (T - s)} and the cost is
    rate (target - e^{-rate T} x0)^2 / (1 - e^{-2 rate T}).
    """
    gap = target - math.exp(-rate * t_end) * x0
    return rate * gap**2 / (1.0 - math.exp(-2.0 * rate * t_end))


def lq_optimal_control(rate, x0, target, t_end, edges):
    """Cell-averaged minimum-energy steering control on the given cells."""
    gap = target - math.exp(-rate * t_end) * x0
    c = gap / ((1.0 - math.exp(-2.0 * rate * t_end)) / (2.0 * rate))
    mids = 0.5 * (edges[:-1] + edges[1:])
    return c * np.exp(-rate * (t_end - mids))


def ou_terminal_moments(rate, noise, epsilon, x0, t_end):
    """Mean and standard deviation of the scalar OU value at time T."""
    mean = math.exp(-rate * t_end) * x0
    var = epsilon * noise**2 * (1.0 - math.exp(-2.0 * rate * t_end)) / (2.0 * rate)
    return mean, math.sqrt(var)
