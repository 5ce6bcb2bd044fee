"""Undo free evolution of an unknown qubit using only forward-time probes.

A two-letter polynomial in V (free step) and W (post-selected probe step)
whose value is proportional to V^{-s} implements a rewind. We build it,
check it numerically, simulate its success rate and then print the
experiment card describing what an operator would actually do.
"""
import json

import numpy as np

from tempoly.constructions import qubit_rewind
from tempoly.numkit import RngStream, fit_scalar, haar_unitary
from tempoly.protocol import compressed_rewind_program, experiment_card, monte_carlo

s = 3
poly = qubit_rewind(s)
print(f"rewind polynomial for s={s}: {len(poly.terms)} terms, degree {poly.degrees[0]}")

x = haar_unitary(2, RngStream(1), size=(2,))
value = poly.evaluate(x)
fit = fit_scalar(value @ np.linalg.matrix_power(x[0], s), np.eye(2))
print(f"R(V, W) V^s = c I with c = {fit.scalar:.4f}, residual {fit.residual:.1e}")

canon = monte_carlo(poly, "haar", 20000, RngStream(0))
print(f"canonical protocol success: {canon.mean:.4f} +- {canon.stderr:.4f} (0.05 * 2^-s = {0.05 * 2**-s:.4f})")

# waiting s steps instead of branching on them removes the 2^-s factor
comp = monte_carlo(compressed_rewind_program(s), "haar", 20000, RngStream(0))
print(f"compressed protocol success: {comp.mean:.4f} +- {comp.stderr:.4f}")

card = experiment_card(poly)
print(json.dumps(card["compression"], indent=2))
