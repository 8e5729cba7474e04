import numpy as np
import pytest
from scipy import sparse

from dfnvem import assembly as asm
from dfnvem import geometry as geo
from dfnvem import meshing as msh
from dfnvem import solver as slv
from dfnvem.errors import SingularSystem

from _util import single_fracture_plane


def toy_system(A, b):
    """Wrap a dense matrix as a SaddleSystem shim for the solver."""
    A = sparse.csr_matrix(np.asarray(A, float))

    class Dofs:
        def flux_like(self):
            return np.arange(A.shape[0] - 1)

    return asm.SaddleSystem(A=A, rhs=np.asarray(b, float), dofs=Dofs(),
                            problem=None, model="cc")


class TestDirect:
    def test_identity(self):
        rep = slv.solve(toy_system(np.eye(3), [1, 0, 0]))
        assert np.allclose(rep.x, [1, 0, 0])
        assert rep.residual == 0.0
        assert rep.method == "direct"

    def test_two_by_two_saddle(self):
        rep = slv.solve(toy_system([[1, 1], [1, 0]], [0, 1]))
        assert np.allclose(rep.x, [1, -1], atol=1e-14)

    def test_singular_raises(self):
        with pytest.raises(SingularSystem):
            slv.solve(toy_system([[1, 1], [1, 1]], [1, 0]))

    def test_deterministic(self):
        frac = single_fracture_plane()
        net = geo.build_network([frac])
        problem = asm.prepare_problem(
            net, {0: msh.triangulate(frac.local_polygon, h_target=0.2,
                                     frame=frac.frame)},
            source=lambda fid, x: np.sin(x[..., 0] * 5))
        dofs = asm.build_dof_map(problem, "cc")
        system = asm.assemble_cc(problem, dofs,
                                 asm.BoundarySpec.dirichlet(lambda f, x: 0.0))
        x1 = slv.solve(system).x
        x2 = slv.solve(system).x
        assert np.array_equal(x1, x2)


class TestMinres:
    def test_matches_direct_on_saddle(self):
        frac = single_fracture_plane()
        net = geo.build_network([frac])
        problem = asm.prepare_problem(
            net, {0: msh.cartesian_mesh(6, frame=frac.frame)},
            source=lambda fid, x: np.ones(len(x)))
        dofs = asm.build_dof_map(problem, "cc")
        system = asm.assemble_cc(problem, dofs,
                                 asm.BoundarySpec.dirichlet(lambda f, x: 0.0))
        direct = slv.solve(system, method="direct")
        it = slv.solve(system, method="minres", tol=1e-12)
        assert it.iterations > 0
        assert np.abs(direct.x - it.x).max() < 1e-7

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            slv.solve(toy_system(np.eye(2), [1, 1]), method="qmr")
