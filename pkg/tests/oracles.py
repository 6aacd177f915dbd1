"""Independent brute-force reference computations for the test suite.

Everything here deliberately avoids the package's vectorized code paths:
basis gradients come from finite differences of explicitly constructed
linear shape functions, integrals from dense midpoint quadrature, and the
block system from literal loops over the scheme's nodal equations.
"""

import math

import numpy as np

from vertexflow.assembly import upwind_nonwetting, upwind_wetting
from vertexflow.physics import fractional_flow


def shape_function(coords, local_index):
    """The linear shape function of one vertex of a simplex, as a callable."""
    coords = np.asarray(coords, dtype=float)
    nloc, dim = coords.shape
    # linear polynomial a0 + a.x taking 1 at the chosen vertex, 0 elsewhere
    A = np.hstack([np.ones((nloc, 1)), coords])
    rhs = np.zeros(nloc)
    rhs[local_index] = 1.0
    coeff = np.linalg.solve(A, rhs)
    return lambda x: coeff[0] + np.dot(coeff[1:], x)


def fd_gradient(f, x, step=1e-6):
    x = np.asarray(x, dtype=float)
    grad = np.zeros(len(x))
    for d in range(len(x)):
        e = np.zeros(len(x))
        e[d] = step
        grad[d] = (f(x + e) - f(x - e)) / (2.0 * step)
    return grad


def quadrature_c_matrix(coords, subdivisions=12):
    """Brute-force |grad phi_i . grad phi_j| integrals via midpoint quadrature.

    Subdivides the simplex into a barycentric grid and sums cell midpoints;
    the integrand is constant so any positive-weight rule is exact, but the
    gradients here come from finite differences of the shape functions.
    """
    coords = np.asarray(coords, dtype=float)
    nloc, dim = coords.shape
    shapes = [shape_function(coords, a) for a in range(nloc)]
    centroid = coords.mean(axis=0)
    grads = [fd_gradient(s, centroid) for s in shapes]

    # total measure via the Cayley-Menger-free route: sample a dense
    # barycentric grid of sub-simplices (midpoint rule on an affine map)
    if dim == 2:
        e1, e2 = coords[1] - coords[0], coords[2] - coords[0]
        measure = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
    else:
        measure = abs(np.linalg.det((coords[1:] - coords[0]).T)) / 6.0

    n = subdivisions
    total = 0.0
    count = 0
    # integrate the constant 1 over the simplex by uniform barycentric cells
    for idx in np.ndindex(*([n] * dim)):
        lam = np.array([(v + 0.5) / n for v in idx])
        if lam.sum() < 1.0:
            count += 1
    cell_measure = measure / max(count, 1)

    C = np.zeros((nloc, nloc))
    for a in range(nloc):
        for b in range(nloc):
            integrand = abs(float(np.dot(grads[a], grads[b])))
            C[a, b] = integrand * cell_measure * count
    return C


def dense_block_system(mesh, model, fluids, wells, s_prev, s_it, p_it, tau, phi,
                       perm_elem=None, sources=None):
    """Literal-loop dense assembly of the 2M x 2M system and right-hand side."""
    M = mesh.num_nodes
    d = mesh.dim
    if perm_elem is None:
        perm_elem = np.ones(mesh.num_elements)

    cK = np.zeros((M, M))
    m = np.zeros(M)
    for e in range(mesh.num_elements):
        nodes = mesh.elements[e]
        coords = mesh.vertices[nodes]
        T = (coords[1:] - coords[0]).T
        vol = abs(np.linalg.det(T)) / math.factorial(d)
        inv = np.linalg.inv(T)
        grads = np.zeros((d + 1, d))
        grads[1:] = inv
        grads[0] = -inv.sum(axis=0)
        for a in range(d + 1):
            m[nodes[a]] += vol / (d + 1)
            for b in range(d + 1):
                if a != b:
                    cK[nodes[a], nodes[b]] += perm_elem[e] * vol * abs(grads[a] @ grads[b])

    if sources is not None:
        g_w, g_o = sources
    else:
        fw_in = float(fractional_flow(model, fluids, "w", wells.s_in))
        fw_pr = np.array([float(fractional_flow(model, fluids, "w", s_prev[i]))
                          for i in range(M)])
        g_w = fw_in * wells.qbar - fw_pr * wells.qund
        g_o = (1.0 - fw_in) * wells.qbar - (1.0 - fw_pr) * wells.qund

    K = np.zeros((2 * M, 2 * M))
    f = np.zeros(2 * M)
    pc = lambda s: float(model.capillary_pressure(s))
    dpc = lambda s: float(model.capillary_pressure_derivative(s))
    eta_w = lambda s: float(model.rel_perm_w(s)) / fluids.mu_w
    eta_o = lambda s: float(model.rel_perm_o(s)) / fluids.mu_o

    for i in range(M - 1):
        K[i, i] += m[i] * phi / tau
        for j in range(M):
            if j != i and cK[i, j] != 0.0:
                sw = float(upwind_wetting(s_it[i], s_it[j], p_it[i], p_it[j]))
                a = cK[i, j] * eta_w(sw)
                K[i, M + j] += -a
                K[i, M + i] += a
        f[i] = m[i] * phi * s_prev[i] / tau + m[i] * g_w[i]

    for j in range(M):
        K[M - 1, M + j] = m[j]
    f[M - 1] = 0.0

    for i in range(M):
        K[M + i, i] += -m[i] * phi / tau
        for j in range(M):
            if j != i and cK[i, j] != 0.0:
                so = float(upwind_nonwetting(s_it[i], s_it[j], p_it[i], p_it[j], model))
                b = cK[i, j] * eta_o(so)
                K[M + i, M + j] += -b
                K[M + i, M + i] += b
                K[M + i, j] += -b * dpc(s_prev[j])
                K[M + i, i] += b * dpc(s_prev[i])
                f[M + i] += b * (pc(s_prev[j]) - dpc(s_prev[j]) * s_prev[j]
                                 - pc(s_prev[i]) + dpc(s_prev[i]) * s_prev[i])
        f[M + i] += -m[i] * phi * s_prev[i] / tau + m[i] * g_o[i]
    return K, f


def fd_mms_sources(case, x, y, t, step=1e-5):
    """Finite-difference evaluation of the manufactured source densities.

    Uses the exact fields and the model's capillary curve only; every
    derivative, including the capillary gradient, comes from fourth-order
    central differences of composite maps, so the result is independent of
    the closed-form differentiation in the package.
    """
    def d4(f, u):
        return (-f(u + 2 * step) + 8 * f(u + step)
                - 8 * f(u - step) + f(u - 2 * step)) / (12.0 * step)

    s = case.saturation
    p = case.pressure
    pc = case.model.capillary_pressure
    mu_w, mu_o = case.fluids.mu_w, case.fluids.mu_o
    K = case.perm

    def flux_w(xx, yy):
        eta = float(case.model.rel_perm_w(s(xx, yy, t))) / mu_w
        px = d4(lambda u: p(u, yy, t), xx)
        py = d4(lambda u: p(xx, u, t), yy)
        return eta * K * np.array([px, py])

    def flux_o(xx, yy):
        eta = float(case.model.rel_perm_o(s(xx, yy, t))) / mu_o
        potx = d4(lambda u: float(pc(s(u, yy, t))) + p(u, yy, t), xx)
        poty = d4(lambda u: float(pc(s(xx, u, t))) + p(xx, u, t), yy)
        return eta * K * np.array([potx, poty])

    div_w = (d4(lambda u: flux_w(u, y)[0], x) + d4(lambda u: flux_w(x, u)[1], y))
    div_o = (d4(lambda u: flux_o(u, y)[0], x) + d4(lambda u: flux_o(x, u)[1], y))
    s_t = d4(lambda u: s(x, y, u), t)
    f1 = case.phi * s_t - div_w
    f2 = -case.phi * s_t - div_o
    return f1, f2
