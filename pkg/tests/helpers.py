"""Shared test utilities: random tree generation and independent targets.

The lambdas here are written against the math module on purpose: they are
the independent calculators the expression evaluator is checked against.
"""

from __future__ import annotations

import math

import numpy as np

from gsfit import expr as ex

# The ten benchmark targets, recomputed independently of the parser.
INDEPENDENT_TARGETS = {
    1: lambda x: 0.5 * math.exp(x[0]) * math.sin(2 * x[1]),
    2: lambda x: 2 * math.cos(x[0]) + math.sin(3 * x[1] - x[2]),
    3: lambda x: 1.2 + 10 * math.sin(2 * x[0]) - 3 * x[1] ** 2 * math.cos(x[2]),
    4: lambda x: x[2] * math.sin(x[0]) - 2 * x[2] * math.cos(x[1]),
    5: lambda x: 2 * x[0] * math.sin(x[1]) * math.cos(x[3]) - 0.5 * x[3] * math.cos(x[2]),
    6: lambda x: 10 + 0.2 * x[0] - 0.2 * x[4] ** 2 * math.sin(x[1])
    + math.cos(x[4]) * math.log(3 * x[2] + 1.2) - 1.2 * math.exp(0.5 * x[3]),
    7: lambda x: 2 * x[3] * x[4] * math.sin(x[0]) - x[4] * x[1]
    + 0.5 * math.exp(x[2]) * math.cos(x[3]),
    8: lambda x: 1.2 + 2 * x[3] * math.cos(x[1])
    + 0.5 * math.exp(1.2 * x[2]) * math.sin(3 * x[0]) * math.cos(x[3])
    - 2 * math.cos(1.5 * x[4] + 5),
    9: lambda x: 0.5 * math.cos(x[2] * x[3]) / (math.exp(x[0]) * x[1] ** 2)
    * math.sin(1.5 * x[4] - 2 * x[5]),
    10: lambda x: 1.2 - 2 * (x[0] + x[1]) / x[2] * math.cos(x[6])
    + 0.5 * math.exp(x[6]) * x[3] * math.sin(x[4] * x[5]),
}

# Stream function around a circular cylinder, demo case (x = V, theta, R, r, G).
STREAM_INDEPENDENT = lambda x: (x[0] * x[3] * math.sin(x[1])) * (
    1 - x[2] ** 2 / x[3] ** 2
) + x[4] / (2 * math.pi) * math.log(x[3] / x[2])


def random_tree(rng: np.random.Generator, arity: int, depth: int = 0) -> ex.Expr:
    """Random expression tree over x1..x<arity>, depth-limited."""
    if depth >= 4 or rng.random() < 0.3:
        if rng.random() < 0.5:
            return ex.const(round(float(rng.uniform(-5, 5)), 3))
        return ex.var(int(rng.integers(1, arity + 1)))
    r = rng.random()
    if r < 0.45:
        op = ["add", "sub", "mul", "div"][int(rng.integers(0, 4))]
        return ex.binary(op, random_tree(rng, arity, depth + 1), random_tree(rng, arity, depth + 1))
    if r < 0.55:
        # keep pow exponents small so most evaluations stay finite
        return ex.binary("pow", random_tree(rng, arity, depth + 1), ex.const(float(rng.integers(1, 4))))
    op = ["neg", "sin", "cos", "exp", "ln", "sqrt", "square"][int(rng.integers(0, 7))]
    return ex.unary(op, random_tree(rng, arity, depth + 1))
