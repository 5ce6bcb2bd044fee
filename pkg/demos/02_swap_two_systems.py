"""Exchange the states of two identical unknown systems.

The bundled 40-term polynomial is the sparse SWAP found by subspace
search. Here it is loaded, tested against random unitary and non-unitary
assignments, and its average success probability estimated.
"""
import numpy as np

from tempoly.ncpoly import load_omega
from tempoly.numkit import RngStream, fit_scalar, ginibre, haar_unitary, swap_operator
from tempoly.protocol import monte_carlo

omega = load_omega()
print(f"fixture: {len(omega.terms)} terms, per-party degrees {omega.degrees}")

swap = swap_operator(2)
rng = RngStream(4)
for label, x in [("haar", haar_unitary(2, rng, size=(2,))),
                 ("ginibre", ginibre(2, 2, rng.generator, (2,)) / np.sqrt(2))]:
    fit = fit_scalar(omega.evaluate(x) @ swap, np.eye(4))
    print(f"{label:8s} scalar {fit.scalar:+.4f}  residual {fit.residual:.1e}")

est = monte_carlo(omega, "haar", 50000, RngStream(0), jobs=4)
print(f"average success probability {est.mean:.4%} +- {est.stderr:.4%}")
