import math

import numpy as np
import pytest

from hhoch.basis import l2_project_element, l2_project_face
from hhoch.exact import cosine_mode
from hhoch.hho import HHOSpace
from hhoch.mesh import generate_cartesian, generate_hexagonal
from hhoch.quadrature import polygon_rule

from conftest import random_polynomial

KINDS = ["cartesian", "triangular", "hexagonal"]


def local_vector(space, v, T):
    return v[space.local_operators[T].dofs]


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("k", [0, 1, 2])
def test_reconstruction_and_stabilization_exact_on_polynomials(space_cache, kind, k, rng):
    space = space_cache(kind, k)
    for _ in range(3):
        poly = random_polynomial(rng, k + 1)
        v = space.interpolate(poly)
        for T, lo in enumerate(space.local_operators):
            vl = local_vector(space, v, T)
            assert np.abs(lo.R @ vl - vl[: space.n_elem_basis]).max() < 1e-11
            assert abs(vl @ lo.S @ vl) < 1e-11


def test_local_operator_invariants(space_cache):
    space = space_cache("hexagonal", 1)
    for lo in space.local_operators:
        assert np.allclose(lo.A, lo.A.T, atol=1e-12)
        w = np.linalg.eigvalsh(lo.A)
        assert w[0] > -1e-10 * w[-1]
        assert np.sum(np.abs(w) < 1e-10 * w[-1]) == 1  # kernel is the local constant
    one = space.constant()
    for T, lo in enumerate(space.local_operators):
        vl = local_vector(space, one, T)
        assert np.abs(lo.A @ vl).max() < 1e-11
        assert np.allclose(lo.R @ vl, vl[: space.n_elem_basis])


@pytest.mark.parametrize("k", [0, 1])
def test_local_stiffness_matches_direct_integration(space_cache, k, rng):
    """A_T value = int |grad p_T v|^2 + sum_F h_F^-1 ||pi_F^k (v_F - v_T)||^2, evaluated independently."""
    space = space_cache("hexagonal", k)
    m = space.mesh
    for T in (0, 5, m.n_elements - 1):
        lo = space.local_operators[T]
        vl = rng.uniform(-1, 1, len(lo.dofs))
        eb = space.ebases[T]
        p = lo.R @ vl
        q = polygon_rule(space.sub.of(T), 2 * k + 6)
        g = np.einsum("qia,i->qa", eb.gradients(q.points), p)
        value = q.weights @ (g**2).sum(1)
        nT = space.n_elem_basis
        for i, F in enumerate(m.element_faces[T]):
            a, b = m.faces[F]
            p0, p1 = m.vertices[a], m.vertices[b]
            fb = space.fbases[F]
            vF = vl[nT + i * space.n_face_basis : nT + (i + 1) * space.n_face_basis]
            gap = lambda x: fb.values(x) @ vF - eb.values(x) @ vl[:nT]
            proj = l2_project_face(gap, p0, p1, fb, 2 * k + 8)
            value += (proj @ proj) / m.face_lengths[F]
        assert math.isclose(vl @ lo.A @ vl, value, rel_tol=1e-11)


def test_interpolate_examples(space_cache):
    space = space_cache("triangular", 1)
    one = space.constant()
    cv = space.element_coefficients(one)
    for T, eb in enumerate(space.ebases):
        assert np.allclose(eb.values(space.mesh.vertices[space.mesh.elements[T]]) @ cv[T], 1.0)
    for F, fb in enumerate(space.fbases):
        assert np.allclose(fb.values(space.mesh.vertices[space.mesh.faces[F]]) @ one[space.dofmap.face_dofs(F)], 1.0)
    affine = lambda x: 0.3 + 2 * x[..., 0] - x[..., 1]
    v = space.interpolate(affine)
    for T in range(0, space.mesh.n_elements, 7):
        verts = space.mesh.vertices[space.mesh.elements[T]]
        assert np.allclose(space.evaluate(v, T, verts), affine(verts))


def test_interpolate_matches_per_element_projection():
    space = HHOSpace(generate_cartesian(16, 16), 1)
    v = space.interpolate(cosine_mode)
    cv = space.element_coefficients(v)
    for T in range(0, space.mesh.n_elements, 11):
        ref = l2_project_element(cosine_mode, space.sub.of(T), space.ebases[T], 10)
        assert np.abs(cv[T] - ref).max() < 1e-12


def test_norms_on_constants_and_affine(space_cache):
    space = space_cache("hexagonal", 1)
    c = space.constant(-2.5)
    assert space.norm_1h(c) < 1e-6 and space.norm_ah(c) < 1e-6
    assert math.isclose(space.norm_0h(c), 2.5 * math.sqrt(space.mesh.domain_area), rel_tol=1e-12)
    v = space.interpolate(lambda x: 3 * x[..., 0] + 4 * x[..., 1])
    assert math.isclose(space.norm_1h(v), 5.0, rel_tol=1e-11)
    assert math.isclose(space.norm_ah(v), 5.0, rel_tol=1e-11)


def test_norm_0h_dominates_l2(space_cache, rng):
    space = space_cache("triangular", 0)
    for _ in range(5):
        v = rng.standard_normal(space.n_dofs)
        assert space.norm_0h(v) >= space.l2_norm(v) * (1 - 1e-14)


def test_norm_equivalence_bounded():
    rng = np.random.default_rng(7)
    ratios = []
    for n in (4, 8, 16):
        space = HHOSpace(generate_cartesian(n, n), 0)
        vals = []
        for _ in range(5):
            v = space.zero_mean(rng.standard_normal(space.n_dofs))
            vals.append(space.norm_1h(v) / space.norm_ah(v))
        ratios.append((min(vals), max(vals)))
    lo = min(r[0] for r in ratios)
    hi = max(r[1] for r in ratios)
    assert 0.2 < lo and hi < 5


def test_a_h_symmetry_and_kernel(space_cache, rng):
    space = space_cache("hexagonal", 0)
    u, z = rng.standard_normal((2, space.n_dofs))
    assert abs(space.a_h(u, z) - space.a_h(z, u)) <= 1e-12 * space.norm_ah(u) * space.norm_ah(z)
    A = space.A.toarray()
    w = np.linalg.eigvalsh(0.5 * (A + A.T))
    assert np.sum(np.abs(w) < 1e-10 * w[-1]) == 1
    assert np.abs(space.A @ space.constant()).max() < 1e-11


def test_discrete_laplacian_and_green(space_cache, rng):
    space = space_cache("cartesian", 1)
    assert np.abs(space.discrete_laplacian(space.constant(3.0))).max() < 1e-10
    v = space.zero_mean(rng.standard_normal(space.n_dofs))
    Lv = space.discrete_laplacian(v)
    assert abs(space.mean(Lv)) < 1e-10 * space.norm_0h(Lv)
    # defining relation: -(L_h v, z)_{0,h} = a_h(v, z)
    z = rng.standard_normal(space.n_dofs)
    assert math.isclose(-(z @ (space.M0 @ Lv)), space.a_h(v, z), rel_tol=1e-9)
    assert np.abs(space.discrete_green(np.zeros(space.n_dofs))).max() == 0
    g = space.discrete_green(v)
    assert abs(space.mean(g)) < 1e-12
    assert space.norm_0h(v + space.discrete_green(Lv)) <= 1e-9 * space.norm_0h(v)


def test_green_eigenfunction_rate():
    errs, hs = [], []
    for n in (4, 8, 16):
        space = HHOSpace(generate_cartesian(n, n), 1)
        phi = space.zero_mean(space.interpolate(cosine_mode))
        g = space.discrete_green(phi)
        target = space.interpolate(lambda x: cosine_mode(x) / (2 * np.pi**2))
        errs.append(space.norm_ah(g - target))
        hs.append(space.mesh.h)
    assert np.polyfit(np.log(hs), np.log(errs), 1)[0] >= 1.0


def test_laplacian_estimate_ratio_bounded():
    rng = np.random.default_rng(3)
    ratios = []
    for n in (4, 8, 16):
        space = HHOSpace(generate_cartesian(n, n), 0)
        v = space.zero_mean(rng.standard_normal(space.n_dofs))
        ratios.append(space.norm_0h(space.discrete_laplacian(v)) / (space.norm_1h(v) / space.mesh.h))
    assert ratios[-1] <= 1.1 * ratios[-2] and max(ratios) < 20


def test_workers_do_not_change_operators():
    mesh = generate_hexagonal(4)
    a = HHOSpace(mesh, 1, workers=1)
    b = HHOSpace(mesh, 1, workers=4)
    assert (a.A != b.A).nnz == 0
    for la, lb in zip(a.local_operators, b.local_operators):
        assert np.array_equal(la.A, lb.A) and np.array_equal(la.M0, lb.M0)


def test_lebesgue_norms(space_cache):
    space = space_cache("cartesian", 1)
    v = space.interpolate(lambda x: x[..., 0])
    assert math.isclose(space.lp_norm(v, 2), math.sqrt(1 / 3), rel_tol=1e-12)
    assert math.isclose(space.lp_norm(v, 4), (1 / 5) ** 0.25, rel_tol=1e-12)
    assert math.isclose(space.sup_norm(v), 1.0, rel_tol=1e-12)
    assert math.isclose(space.grad_lp_norm(v, 3), 1.0, rel_tol=1e-12)
