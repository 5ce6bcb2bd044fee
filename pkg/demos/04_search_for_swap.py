"""Find every degree-5 SWAP polynomial modulo identities, then sparsify one.

Random bra-ket samples of the target span a space V; the same with the
identity target spans N. Vectors of V not in N are genuinely new SWAP
polynomials. For qubits the quotient first appears at degree five.
"""
import numpy as np

from tempoly.numkit import RngStream, swap_operator
from tempoly.search import GeneratorConfig, null_space_basis, run_search, sparsify, verify_proportional

for m in range(1, 6):
    res = run_search(GeneratorConfig(2, 2, m, rng=RngStream(0)))
    print(f"m={m}: dim V={res.vperp.dim:4d}  dim N={res.nperp.dim:4d}  quotient={res.quotient.dim}")

null = null_space_basis(res.nperp)
best = min((sparsify(v, null, 40, layout=res.layout, verify_target=swap_operator(2), d=2)
            for v in res.quotient.vectors), key=lambda r: r.nonzeros)
print(f"sparsest SWAP polynomial found: {best.nonzeros} terms via {best.method}")
print("verified:", verify_proportional(best.poly, swap_operator(2), 2, samples=20, seed=1))
print("largest |coefficient|:", np.max(np.abs(best.poly.coefficient_vector())))
