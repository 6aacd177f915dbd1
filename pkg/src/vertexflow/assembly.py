"""Assembly of the linearized saturation/pressure block system.

Each fixed-point iteration of a time step solves a 2M x 2M block system

    [ Kss  Ksp ] [S]   [fs]
    [ Kps  Kpp ] [P] = [fp]

for the nodal wetting saturation S and wetting pressure P.  Rows 1..M-1 of
the saturation block discretize the wetting-phase balance with the mass
lumped in time and the mobilities frozen at the previous iterate (upwinded
per node pair); row M enforces the zero weighted mean of the pressure,
which fixes the constant left free by pure no-flow boundaries.  The
pressure block rows discretize the non-wetting balance with the capillary
pressure linearized about the previous time level.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, NumericStateError
from .mesh import element_p1_gradients, p1_gradients


def lumped_masses(mesh):
    """Per-node lumped masses m_i = |patch_i| / (dim + 1)."""
    m = np.zeros(mesh.num_nodes)
    share = mesh.element_volumes / (mesh.dim + 1)
    for a in range(mesh.dim + 1):
        np.add.at(m, mesh.elements[:, a], share)
    return m


def local_c_matrix(element_coords):
    """Element table of |grad(phi_i) . grad(phi_j)| integrated over E.

    Entries are |E| * |g_i . g_j| with the constant P1 gradients g; the
    matrix is symmetric and nonnegative.  The scheme only reads the
    off-diagonal entries.
    """
    coords = np.asarray(element_coords, dtype=float)
    grads = p1_gradients(coords)
    dim = coords.shape[1]
    edges = (coords[1:] - coords[0]).T
    volume = abs(np.linalg.det(edges)) / math.factorial(dim)
    return volume * np.abs(grads @ grads.T)


@dataclass
class StiffnessCoeffs:
    """Node-pair coefficient tables c_ij and their permeability-weighted form.

    ``c`` sums |E| |g_i . g_j| over the elements shared by nodes i and j;
    ``cK`` weights each element contribution by its permeability K_E.  Both
    are symmetric CSR matrices whose sparsity is the node adjacency graph
    (plus the diagonal, which the scheme ignores).
    """

    c: sp.csr_matrix
    cK: sp.csr_matrix
    # Directed off-diagonal pairs, precomputed for fast assembly.
    pair_i: np.ndarray = field(repr=False, default=None)
    pair_j: np.ndarray = field(repr=False, default=None)
    pair_cK: np.ndarray = field(repr=False, default=None)


def stiffness_coeffs(mesh, perm_elem=None):
    """Build the c_ij / c_ij(K) coefficient tables for a mesh.

    perm_elem is the per-element permeability (m^2); None means K = 1.
    """
    if perm_elem is None:
        perm_elem = np.ones(mesh.num_elements)
    perm_elem = np.asarray(perm_elem, dtype=float)
    if perm_elem.shape != (mesh.num_elements,):
        raise ConfigError("perm_elem must have one value per element")
    if np.any(perm_elem <= 0):
        raise ConfigError("element permeabilities must be positive")

    grads = element_p1_gradients(mesh)
    local = np.abs(np.einsum("ead,ebd->eab", grads, grads))
    local *= mesh.element_volumes[:, None, None]

    nloc = mesh.dim + 1
    rows, cols, vals, valsK = [], [], [], []
    for a in range(nloc):
        for b in range(nloc):
            rows.append(mesh.elements[:, a])
            cols.append(mesh.elements[:, b])
            vals.append(local[:, a, b])
            valsK.append(local[:, a, b] * perm_elem)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    shape = (mesh.num_nodes, mesh.num_nodes)
    c = sp.coo_matrix((np.concatenate(vals), (rows, cols)), shape=shape).tocsr()
    cK = sp.coo_matrix((np.concatenate(valsK), (rows, cols)), shape=shape).tocsr()

    coo = cK.tocoo()
    off = coo.row != coo.col
    return StiffnessCoeffs(
        c=c, cK=cK,
        pair_i=coo.row[off].astype(np.int64),
        pair_j=coo.col[off].astype(np.int64),
        pair_cK=coo.data[off],
    )


def upwind_wetting(s_i, s_j, p_i, p_j):
    """Upwind saturation for the wetting flux on the pair (i, j).

    Takes the value at the higher-pressure node; ties take the larger
    saturation.  Symmetric in (i, j).
    """
    return np.where(
        np.asarray(p_i) > np.asarray(p_j), s_i,
        np.where(np.asarray(p_i) < np.asarray(p_j), s_j, np.maximum(s_i, s_j)),
    )


def upwind_nonwetting(s_i, s_j, p_i, p_j, model):
    """Upwind saturation for the non-wetting flux on the pair (i, j).

    Compares the non-wetting potential p_c(s) + p; ties take the smaller
    saturation (the non-wetting phase is more mobile there).
    """
    pot_i = np.asarray(model.capillary_pressure(s_i)) + np.asarray(p_i)
    pot_j = np.asarray(model.capillary_pressure(s_j)) + np.asarray(p_j)
    return np.where(
        pot_i > pot_j, s_i,
        np.where(pot_i < pot_j, s_j, np.minimum(s_i, s_j)),
    )


def upwind_pattern(coeffs, model, s_it, p_it):
    """Branch selections for every directed node pair of the coefficient table.

    Returns (wet_takes_i, oil_takes_i) boolean arrays aligned with
    coeffs.pair_i/pair_j: True where the upwind rules pick the i-side value
    (tie branches resolved to the max/min saturation side as usual).
    """
    i, j = coeffs.pair_i, coeffs.pair_j
    p_i, p_j = p_it[i], p_it[j]
    s_i, s_j = s_it[i], s_it[j]
    wet = np.where(p_i > p_j, True, np.where(p_i < p_j, False, s_i >= s_j))
    pot = np.asarray(model.capillary_pressure(s_it)) + p_it
    oil = np.where(pot[i] > pot[j], True, np.where(pot[i] < pot[j], False, s_i <= s_j))
    return wet, oil


@dataclass(frozen=True)
class WellField:
    """Nodal injection/production rate densities (1/s) and inlet saturation.

    Both densities are nonnegative and satisfy the discrete compatibility
    sum(m_i qbar_i) = sum(m_i qund_i) exactly.
    """

    qbar: np.ndarray
    qund: np.ndarray
    s_in: float


def wells_from_boxes(mesh, masses, injections, productions, s_in):
    """Nodal well densities from box supports with target integral rates.

    Each entry of ``injections``/``productions`` is (box, rate) where box is
    (x0, x1, y0, y1[, z0, z1]) and rate is the target of the integral of the
    density over the domain (m^d/s per unit... i.e. the total volumetric
    rate).  Nodal values are box indicators rescaled so the lumped-mass
    integral hits each target exactly, which keeps the discrete injection
    and production totals balanced.
    """
    qbar = np.zeros(mesh.num_nodes)
    qund = np.zeros(mesh.num_nodes)
    for target, wells in ((qbar, injections), (qund, productions)):
        for box, rate in wells:
            inside = _nodes_in_box(mesh, box)
            if not inside.any():
                raise ConfigError(f"well box {box} contains no mesh nodes")
            if rate < 0:
                raise ConfigError(f"well rate must be >= 0, got {rate}")
            indicator = inside.astype(float)
            weight = float(masses @ indicator)
            target += indicator * (rate / weight)
    total_in = float(masses @ qbar)
    total_out = float(masses @ qund)
    if abs(total_in - total_out) > 1e-12 * max(abs(total_in), abs(total_out), 1e-300):
        raise ConfigError(
            f"injection and production totals must balance, got {total_in} vs {total_out}"
        )
    return WellField(qbar=qbar, qund=qund, s_in=float(s_in))


def _nodes_in_box(mesh, box):
    box = [float(v) for v in box]
    if len(box) != 2 * mesh.dim:
        raise ConfigError(f"well box needs {2 * mesh.dim} bounds in {mesh.dim}D, got {box}")
    tol = 1e-9 * max(abs(v) for v in box + [1.0])
    inside = np.ones(mesh.num_nodes, dtype=bool)
    for axis in range(mesh.dim):
        lo, hi = box[2 * axis], box[2 * axis + 1]
        if hi <= lo:
            raise ConfigError(f"well box bounds along axis {axis} are empty: [{lo}, {hi}]")
        x = mesh.vertices[:, axis]
        inside &= (x >= lo - tol) & (x <= hi + tol)
    return inside


@dataclass
class BlockSystem:
    """The assembled 2M x 2M block system.

    Unknown ordering is (S_1..S_M, P_1..P_M).  ``kss_diag`` holds the
    diagonal saturation block (last entry zero when the weighted-mean
    pressure constraint occupies the last saturation row).  The regular
    last saturation row, displaced by the constraint, is retained so that
    Dirichlet conditions can drop the constraint again.
    """

    kss_diag: np.ndarray
    Ksp: sp.csr_matrix
    Kps: sp.csr_matrix
    Kpp: sp.csr_matrix
    fs: np.ndarray
    fp: np.ndarray
    masses: np.ndarray
    has_mean_constraint: bool = True
    kss_last_regular: float = 0.0
    ksp_last_regular: sp.csr_matrix = None
    fs_last_regular: float = 0.0

    @property
    def num_nodes(self):
        return len(self.kss_diag)

    @property
    def Kss(self):
        return sp.diags(self.kss_diag).tocsr()

    def matrix(self):
        """Full 2M x 2M sparse matrix (for oracles and residual checks)."""
        return sp.bmat([[self.Kss, self.Ksp], [self.Kps, self.Kpp]], format="csr")

    def rhs(self):
        return np.concatenate([self.fs, self.fp])


def assemble_system(mesh, masses, coeffs, model, fluids, wells, s_prev, s_it, p_it,
                    tau, phi, sources=None, pattern=None):
    """Assemble the block system for one fixed-point iteration.

    Parameters
    ----------
    s_prev : nodal saturation at the previous time level.
    s_it, p_it : previous fixed-point iterate (upwind directions and frozen
        mobilities are evaluated here).
    tau : time step in seconds.
    phi : porosity (constant scalar).
    wells : WellField or None.
    sources : optional (g_w, g_o) nodal source densities that replace the
        well terms (used by manufactured-solution runs).
    pattern : optional upwind branch selections from upwind_pattern; when
        given, the saturation values still come from s_it but the branch
        choices are not recomputed (the driver locks them near convergence).
    """
    if tau <= 0:
        raise ConfigError(f"time step must be positive, got {tau}")
    for name, vec in (("s_prev", s_prev), ("s_it", s_it), ("p_it", p_it)):
        if not np.all(np.isfinite(vec)):
            raise NumericStateError(f"non-finite values in {name}")

    M = mesh.num_nodes
    s_prev = np.asarray(s_prev, dtype=float)
    s_it = np.asarray(s_it, dtype=float)
    p_it = np.asarray(p_it, dtype=float)

    if sources is not None:
        g_w, g_o = (np.asarray(g, dtype=float) for g in sources)
    elif wells is not None:
        from .physics import fractional_flow

        fw_in = fractional_flow(model, fluids, "w", wells.s_in)
        fw_prev = fractional_flow(model, fluids, "w", s_prev)
        g_w = fw_in * wells.qbar - fw_prev * wells.qund
        g_o = (1.0 - fw_in) * wells.qbar - (1.0 - fw_prev) * wells.qund
    else:
        g_w = np.zeros(M)
        g_o = np.zeros(M)

    i, j, ck = coeffs.pair_i, coeffs.pair_j, coeffs.pair_cK

    if pattern is None:
        pattern = upwind_pattern(coeffs, model, s_it, p_it)
    wet_takes_i, oil_takes_i = pattern
    s_up_w = np.where(wet_takes_i, s_it[i], s_it[j])
    s_up_o = np.where(oil_takes_i, s_it[i], s_it[j])

    a = ck * np.asarray(model.rel_perm_w(s_up_w)) / fluids.mu_w
    b = ck * np.asarray(model.rel_perm_o(s_up_o)) / fluids.mu_o

    a_rowsum = np.bincount(i, weights=a, minlength=M)
    b_rowsum = np.bincount(i, weights=b, minlength=M)

    pc_prev = np.asarray(model.capillary_pressure(s_prev))
    dpc_prev = np.asarray(model.capillary_pressure_derivative(s_prev))

    shape = (M, M)
    diag_idx = np.arange(M)

    # Saturation rows 1..M-1: lumped time term and upwinded wetting flux.
    kss_diag = masses * phi / tau
    ksp_full = sp.coo_matrix(
        (np.concatenate([-a, a_rowsum]), (np.concatenate([i, diag_idx]), np.concatenate([j, diag_idx]))),
        shape=shape,
    ).tocsr()
    fs_full = masses * phi * s_prev / tau + masses * g_w

    # Last saturation row: weighted-mean pressure constraint.
    ksp_last = ksp_full[M - 1]
    ksp = sp.vstack([ksp_full[: M - 1], sp.csr_matrix(masses[None, :])], format="csr")
    kss_last = kss_diag[M - 1]
    fs_last = fs_full[M - 1]
    kss_diag = kss_diag.copy()
    kss_diag[M - 1] = 0.0
    fs = fs_full.copy()
    fs[M - 1] = 0.0

    # Pressure rows: non-wetting flux with linearized capillary pressure.
    kpp = sp.coo_matrix(
        (np.concatenate([-b, b_rowsum]), (np.concatenate([i, diag_idx]), np.concatenate([j, diag_idx]))),
        shape=shape,
    ).tocsr()
    kps_diag = -masses * phi / tau + dpc_prev * b_rowsum
    kps = sp.coo_matrix(
        (
            np.concatenate([-b * dpc_prev[j], kps_diag]),
            (np.concatenate([i, diag_idx]), np.concatenate([j, diag_idx])),
        ),
        shape=shape,
    ).tocsr()
    cap_known = pc_prev - dpc_prev * s_prev
    fp = (
        -masses * phi * s_prev / tau
        + masses * g_o
        + np.bincount(i, weights=b * (cap_known[j] - cap_known[i]), minlength=M)
    )

    return BlockSystem(
        kss_diag=kss_diag, Ksp=ksp, Kps=kps, Kpp=kpp, fs=fs, fp=fp,
        masses=np.asarray(masses, dtype=float),
        has_mean_constraint=True,
        kss_last_regular=float(kss_last),
        ksp_last_regular=ksp_last,
        fs_last_regular=float(fs_last),
    )


def apply_dirichlet(system, nodes, s_values, p_values):
    """Impose Dirichlet values at the given nodes by row replacement.

    The saturation and pressure rows of each constrained node become
    identity rows with the prescribed values on the right-hand side.  The
    weighted-mean pressure constraint is dropped (restored to the regular
    last saturation row), since prescribed pressures fix the constant.
    Returns a new BlockSystem; the input is not modified.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        return system

    M = system.num_nodes
    s_values = np.asarray(s_values, dtype=float)
    p_values = np.asarray(p_values, dtype=float)
    if s_values.shape != nodes.shape or p_values.shape != nodes.shape:
        raise ConfigError("one saturation and one pressure value per constrained node")

    keep = np.ones(M)
    keep[nodes] = 0.0
    keep_diag = sp.diags(keep)
    pinned = sp.diags(1.0 - keep)

    # Restore the regular last saturation row before pinning rows.
    kss_diag = system.kss_diag.copy()
    fs = system.fs.copy()
    if system.has_mean_constraint:
        ksp = sp.vstack([system.Ksp[: M - 1], system.ksp_last_regular], format="csr")
        kss_diag[M - 1] = system.kss_last_regular
        fs[M - 1] = system.fs_last_regular
    else:
        ksp = system.Ksp

    kss_diag = np.where(keep > 0, kss_diag, 1.0)
    ksp = keep_diag @ ksp
    kps = keep_diag @ system.Kps
    kpp = keep_diag @ system.Kpp + pinned
    fs[nodes] = s_values
    fp = system.fp.copy()
    fp[nodes] = p_values

    return BlockSystem(
        kss_diag=kss_diag, Ksp=ksp.tocsr(), Kps=kps.tocsr(), Kpp=kpp.tocsr(),
        fs=fs, fp=fp, masses=system.masses, has_mean_constraint=False,
    )
