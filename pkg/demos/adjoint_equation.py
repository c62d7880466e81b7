"""Numerical evidence on which functionals admit an influence function.

For each kernel and functional, solve int b(x) k(x - y) dx = a(y) - psi(F0)
in least squares on refining grids, with F0 uniform on [0, 1]. Residuals
that shrink with the grid suggest a solution exists; a flat residual
suggests it does not. Under exponential noise every smooth a is solvable.
Under Laplace noise constants are trivially solvable and affine a is too,
since the symmetric kernel preserves means.

    python3 demos/adjoint_equation.py
"""

from deconv.efficiency import GridFunction, solve_adjoint
from deconv.functionals import parse_functional
from deconv.model import NoiseKernel

F0 = GridFunction.uniform_density(0.0, 1.0, 2)
for kernel in (NoiseKernel.exponential(1.0), NoiseKernel.laplace(1.0)):
    for text in ("const:1", "mean", "moment:2", "mgf:0.5"):
        rep = solve_adjoint(parse_functional(text), kernel, F0, grid_sizes=(65, 129, 257))
        res = "  ".join(f"{r:.2e}" for r in rep.residuals)
        flag = " (flagged)" if any("counterexample" in n for n in rep.notes) else ""
        print(f"{kernel.variant:12s} {text:9s} residuals {res}  ||b||={rep.b_l2_p0_norm:.3g}{flag}")
