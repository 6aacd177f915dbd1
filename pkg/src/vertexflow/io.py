"""Case configuration, permeability rasters, and result emission.

The case format is flat INI-style text (sections of key = value lines); the
full schema is documented in the README.  Rasters are plain ASCII: a header
``nx ny [nz]`` followed by positive cell values in m^2, x-fastest.  Results
go out as legacy ASCII VTK unstructured grids and CSV probe tables.
"""

import configparser
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .driver import PicardConfig, Simulation, TimeConfig
from .errors import ConfigError
from .mesh import Mesh, build_structured, element_p1_gradients, read_mesh
from .physics import BrooksCoreyModel, FluidPair, QuadraticKrModel
from .solver import SolverConfig


@dataclass
class CaseConfig:
    """Validated case description, sufficient to build a Simulation."""

    dim: int
    lengths: tuple
    mesh_type: str              # "structured" | "file"
    nx: tuple = None
    mesh_path: str = None
    model_type: str = "brooks_corey"
    model_params: dict = field(default_factory=dict)
    mu_w: float = None
    mu_o: float = None
    porosity: float = None
    perm_kind: str = "constant"  # "constant" | "block" | "raster"
    perm_value: float = None
    block_box: tuple = None
    block_value: float = None
    raster_path: str = None
    wells: list = field(default_factory=list)  # (kind, rate, box)
    s_in: float = None
    s0: float = None
    p0: float = None
    tau: float = None
    t_end: float = None
    output_stride: int = 10
    picard_tol: float = 1e-5
    picard_max_iter: int = 50
    pressure_scale: float = None
    solver_rtol: float = 1e-8
    solver_max_iter: int = 500
    solver_inner: str = "ilu0"
    output_dir: str = "out"
    output_prefix: str = "case"


def _floats(text, count=None):
    values = [float(v) for v in text.split()]
    if count is not None and len(values) != count:
        raise ValueError(f"expected {count} numbers, got {len(values)}")
    return tuple(values)


def _ints(text, count=None):
    values = [int(v) for v in text.split()]
    if count is not None and len(values) != count:
        raise ValueError(f"expected {count} integers, got {len(values)}")
    return tuple(values)


def load_config(path):
    """Parse and validate a case file; raises ConfigError listing all problems."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        with open(path) as fh:
            parser.read_file(fh, source=str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read case file: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse case file: {exc}") from None

    problems = []

    def take(section, key, conv=float, required=True, default=None):
        if not parser.has_option(section, key):
            if required:
                problems.append(f"[{section}] missing key '{key}'")
            return default
        raw = parser.get(section, key)
        try:
            return conv(raw)
        except ValueError as exc:
            problems.append(f"[{section}] {key} = {raw!r}: {exc}")
            return default

    dim = take("domain", "dim", int)
    lengths = take("domain", "lengths", _floats)
    if dim not in (2, 3):
        problems.append(f"[domain] dim must be 2 or 3, got {dim}")
        dim = 2
    if lengths is not None and len(lengths) != dim:
        problems.append(f"[domain] lengths must have {dim} entries")
    if lengths is not None and any(l <= 0 for l in lengths):
        problems.append("[domain] lengths must be positive")

    mesh_type = take("mesh", "type", str.strip, default="structured")
    nx = None
    mesh_path = None
    if mesh_type == "structured":
        nx = take("mesh", "nx", _ints)
        if nx is not None and len(nx) != dim:
            problems.append(f"[mesh] nx must have {dim} entries")
        if nx is not None and any(n < 1 for n in nx):
            problems.append("[mesh] nx entries must be >= 1")
    elif mesh_type == "file":
        mesh_path = take("mesh", "path", str.strip)
    else:
        problems.append(f"[mesh] type must be 'structured' or 'file', got {mesh_type!r}")

    model_type = take("model", "type", str.strip, default="brooks_corey")
    model_params = {}
    if model_type == "brooks_corey":
        model_params["theta"] = take("model", "theta")
        model_params["p_d"] = take("model", "entry_pressure")
        model_params["R"] = take("model", "regularization")
        model_params["s_rw"] = take("model", "s_rw")
        model_params["s_ro"] = take("model", "s_ro")
    elif model_type == "quadratic":
        model_params["theta"] = take("model", "theta", required=False, default=2.0)
        model_params["p_d"] = take("model", "entry_pressure", required=False, default=50.0)
        model_params["R"] = take("model", "regularization", required=False, default=0.05)
    else:
        problems.append(f"[model] type must be 'brooks_corey' or 'quadratic', got {model_type!r}")

    mu_w = take("fluids", "mu_w")
    mu_o = take("fluids", "mu_o")
    for name, mu in (("mu_w", mu_w), ("mu_o", mu_o)):
        if mu is not None and mu <= 0:
            problems.append(f"[fluids] {name} must be positive")

    porosity = take("rock", "porosity")
    if porosity is not None and not 0.0 < porosity <= 1.0:
        problems.append(f"[rock] porosity must be in (0, 1], got {porosity}")

    perm_kind = "constant"
    perm_value = take("rock", "permeability", required=False)
    raster_path = take("rock", "raster", str.strip, required=False)
    block_box = take("rock", "block_box", _floats, required=False)
    block_value = take("rock", "block_permeability", required=False)
    if raster_path is not None:
        perm_kind = "raster"
        raster_path = os.path.join(os.path.dirname(os.path.abspath(path)), raster_path)
        if not os.path.exists(raster_path):
            problems.append(f"[rock] raster file not found: {raster_path}")
    elif block_box is not None or block_value is not None:
        perm_kind = "block"
        if perm_value is None:
            problems.append("[rock] block permeability needs the background 'permeability'")
        if block_box is None or block_value is None:
            problems.append("[rock] block inclusion needs both block_box and block_permeability")
        elif len(block_box) != 2 * dim:
            problems.append(f"[rock] block_box must have {2 * dim} bounds")
        if block_value is not None and block_value <= 0:
            problems.append("[rock] block_permeability must be positive")
    elif perm_value is None:
        problems.append("[rock] needs 'permeability', 'raster', or a block inclusion")
    if perm_value is not None and perm_value <= 0:
        problems.append("[rock] permeability must be positive")

    wells = []
    s_in = None
    if parser.has_section("wells"):
        s_in = take("wells", "s_in")
        for key, raw in parser.items("wells"):
            if key == "s_in":
                continue
            kind = "injection" if key.startswith("injection") else (
                "production" if key.startswith("production") else None
            )
            if kind is None:
                problems.append(f"[wells] unknown key '{key}'")
                continue
            try:
                values = _floats(raw)
            except ValueError as exc:
                problems.append(f"[wells] {key}: {exc}")
                continue
            if len(values) != 1 + 2 * dim:
                problems.append(
                    f"[wells] {key} needs rate followed by {2 * dim} box bounds"
                )
                continue
            rate, box = values[0], values[1:]
            if rate < 0:
                problems.append(f"[wells] {key} rate must be >= 0")
            if lengths is not None:
                for axis in range(dim):
                    lo, hi = box[2 * axis], box[2 * axis + 1]
                    if not (0.0 <= lo < hi <= lengths[axis]):
                        problems.append(
                            f"[wells] {key} box outside domain along axis {axis}: [{lo}, {hi}]"
                        )
            wells.append((kind, rate, box))
        total_in = sum(r for k, r, _ in wells if k == "injection")
        total_out = sum(r for k, r, _ in wells if k == "production")
        if wells and not math.isclose(total_in, total_out, rel_tol=1e-12, abs_tol=0.0):
            problems.append(
                f"[wells] injection total {total_in} must equal production total {total_out}"
            )
        if wells and s_in is not None and not 0.0 <= s_in <= 1.0:
            problems.append(f"[wells] s_in must be in [0, 1], got {s_in}")

    s0 = take("initial", "saturation")
    p0 = take("initial", "pressure")

    tau = take("time", "dt")
    t_end = take("time", "t_end")
    output_stride = take("time", "output_stride", int, required=False, default=10)
    if tau is not None and t_end is not None and not 0.0 < tau <= t_end:
        problems.append(f"[time] need 0 < dt <= t_end, got dt={tau}, t_end={t_end}")
    if output_stride is not None and output_stride < 1:
        problems.append("[time] output_stride must be >= 1")

    picard_tol = take("picard", "tol", required=False, default=1e-5)
    picard_max_iter = take("picard", "max_iter", int, required=False, default=50)
    pressure_scale = take("picard", "pressure_scale", required=False)
    solver_rtol = take("solver", "rtol", required=False, default=1e-8)
    solver_max_iter = take("solver", "max_iter", int, required=False, default=500)
    solver_inner = take("solver", "inner", str.strip, required=False, default="ilu0")
    if solver_inner not in ("ilu0", "direct"):
        problems.append(f"[solver] inner must be 'ilu0' or 'direct', got {solver_inner!r}")
    output_dir = take("output", "directory", str.strip, required=False, default="out")
    output_prefix = take("output", "prefix", str.strip, required=False, default="case")

    if problems:
        raise ConfigError(f"invalid case file {path}", problems)

    return CaseConfig(
        dim=dim, lengths=lengths, mesh_type=mesh_type, nx=nx, mesh_path=mesh_path,
        model_type=model_type, model_params=model_params,
        mu_w=mu_w, mu_o=mu_o, porosity=porosity,
        perm_kind=perm_kind, perm_value=perm_value,
        block_box=block_box, block_value=block_value, raster_path=raster_path,
        wells=wells, s_in=s_in, s0=s0, p0=p0,
        tau=tau, t_end=t_end, output_stride=output_stride,
        picard_tol=picard_tol, picard_max_iter=picard_max_iter,
        pressure_scale=pressure_scale,
        solver_rtol=solver_rtol, solver_max_iter=solver_max_iter,
        solver_inner=solver_inner,
        output_dir=output_dir, output_prefix=output_prefix,
    )


def serialize_config(cfg):
    """Render a CaseConfig back to case-file text (stable key order)."""
    lines = []

    def section(name, pairs):
        rendered = [(k, v) for k, v in pairs if v is not None]
        if not rendered:
            return
        lines.append(f"[{name}]")
        for key, value in rendered:
            lines.append(f"{key} = {value}")
        lines.append("")

    fmt = lambda seq: " ".join(f"{v:.12g}" if isinstance(v, float) else str(v) for v in seq)
    section("domain", [("dim", cfg.dim), ("lengths", fmt(cfg.lengths))])
    section("mesh", [
        ("type", cfg.mesh_type),
        ("nx", fmt(cfg.nx) if cfg.nx else None),
        ("path", cfg.mesh_path),
    ])
    model_pairs = [("type", cfg.model_type)]
    names = {"theta": "theta", "p_d": "entry_pressure", "R": "regularization",
             "s_rw": "s_rw", "s_ro": "s_ro"}
    for key, out in names.items():
        if key in cfg.model_params and cfg.model_params[key] is not None:
            model_pairs.append((out, f"{cfg.model_params[key]:.12g}"))
    section("model", model_pairs)
    section("fluids", [("mu_w", f"{cfg.mu_w:.12g}"), ("mu_o", f"{cfg.mu_o:.12g}")])
    rock = [("porosity", f"{cfg.porosity:.12g}")]
    if cfg.perm_kind == "raster":
        rock.append(("raster", cfg.raster_path))
    else:
        rock.append(("permeability", f"{cfg.perm_value:.12g}"))
        if cfg.perm_kind == "block":
            rock.append(("block_box", fmt(cfg.block_box)))
            rock.append(("block_permeability", f"{cfg.block_value:.12g}"))
    section("rock", rock)
    if cfg.wells:
        pairs = [("s_in", f"{cfg.s_in:.12g}")]
        counters = {"injection": 0, "production": 0}
        for kind, rate, box in cfg.wells:
            counters[kind] += 1
            suffix = "" if counters[kind] == 1 else str(counters[kind])
            pairs.append((kind + suffix, fmt((rate,) + tuple(box))))
        section("wells", pairs)
    section("initial", [("saturation", f"{cfg.s0:.12g}"), ("pressure", f"{cfg.p0:.12g}")])
    section("time", [
        ("dt", f"{cfg.tau:.12g}"), ("t_end", f"{cfg.t_end:.12g}"),
        ("output_stride", cfg.output_stride),
    ])
    section("picard", [
        ("tol", f"{cfg.picard_tol:.12g}"), ("max_iter", cfg.picard_max_iter),
        ("pressure_scale", None if cfg.pressure_scale is None else f"{cfg.pressure_scale:.12g}"),
    ])
    section("solver", [
        ("rtol", f"{cfg.solver_rtol:.12g}"), ("max_iter", cfg.solver_max_iter),
        ("inner", cfg.solver_inner),
    ])
    section("output", [("directory", cfg.output_dir), ("prefix", cfg.output_prefix)])
    return "\n".join(lines)


@dataclass(frozen=True)
class PermRaster:
    """Rectangular grid of positive permeability values (m^2), x-fastest."""

    dims: tuple
    values: np.ndarray

    def __post_init__(self):
        expected = math.prod(self.dims)
        if len(self.values) != expected:
            raise ConfigError(
                f"raster payload has {len(self.values)} values, dims {self.dims} need {expected}"
            )
        if np.any(self.values <= 0.0):
            raise ConfigError("raster permeabilities must be positive")


def read_raster(path):
    """Read a permeability raster: header 'nx ny [nz]', then values."""
    with open(path) as fh:
        tokens = fh.read().split()
    if not tokens:
        raise ConfigError(f"{path}: empty raster file")
    try:
        first = [int(v) for v in tokens[:2]]
        ndim = 2
        if len(tokens) >= 3 and "." not in tokens[2] and "e" not in tokens[2].lower():
            # third header integer present only for 3D rasters
            probe = int(tokens[2])
            if first[0] * first[1] * probe == len(tokens) - 3:
                first.append(probe)
                ndim = 3
        dims = tuple(first)
        values = np.array([float(v) for v in tokens[ndim:]], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{path}: malformed raster: {exc}") from None
    return PermRaster(dims=dims, values=values)


def raster_to_elements(raster, mesh):
    """Per-element permeability: raster cell containing each centroid.

    The raster spans the mesh bounding box with uniform cells.
    """
    if len(raster.dims) != mesh.dim:
        raise ConfigError(
            f"raster is {len(raster.dims)}D but mesh is {mesh.dim}D"
        )
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    centroids = mesh.centroids()
    idx = np.zeros(mesh.num_elements, dtype=np.int64)
    stride = 1
    for axis in range(mesh.dim):
        cells = raster.dims[axis]
        width = (hi[axis] - lo[axis]) / cells
        k = np.floor((centroids[:, axis] - lo[axis]) / width).astype(np.int64)
        if np.any(k < 0) or np.any(k > cells):
            raise ConfigError(f"element centroid outside raster along axis {axis}")
        k = np.minimum(k, cells - 1)
        idx += stride * k
        stride *= cells
    return raster.values[idx]


def permeability_for_mesh(cfg, mesh):
    """Per-element permeability field from the case's rock section."""
    if cfg.perm_kind == "constant":
        return np.full(mesh.num_elements, cfg.perm_value)
    if cfg.perm_kind == "block":
        perm = np.full(mesh.num_elements, cfg.perm_value)
        centroids = mesh.centroids()
        inside = np.ones(mesh.num_elements, dtype=bool)
        for axis in range(mesh.dim):
            lo, hi = cfg.block_box[2 * axis], cfg.block_box[2 * axis + 1]
            inside &= (centroids[:, axis] >= lo) & (centroids[:, axis] <= hi)
        perm[inside] = cfg.block_value
        return perm
    raster = read_raster(cfg.raster_path)
    return raster_to_elements(raster, mesh)


def build_simulation(cfg):
    """Instantiate (simulation, initial_state, time_config) from a case."""
    from .assembly import lumped_masses, wells_from_boxes

    if cfg.mesh_type == "structured":
        mesh = build_structured(cfg.nx, cfg.lengths)
    else:
        mesh = read_mesh(cfg.mesh_path)
        if mesh.dim != cfg.dim:
            raise ConfigError(
                f"mesh file is {mesh.dim}D but the case says dim = {cfg.dim}"
            )

    if cfg.model_type == "brooks_corey":
        model = BrooksCoreyModel(**cfg.model_params)
    else:
        model = QuadraticKrModel(**cfg.model_params)
    fluids = FluidPair(mu_w=cfg.mu_w, mu_o=cfg.mu_o)
    perm_elem = permeability_for_mesh(cfg, mesh)

    wells = None
    if cfg.wells:
        masses = lumped_masses(mesh)
        injections = [(box, rate) for kind, rate, box in cfg.wells if kind == "injection"]
        productions = [(box, rate) for kind, rate, box in cfg.wells if kind == "production"]
        wells = wells_from_boxes(mesh, masses, injections, productions, cfg.s_in)

    sim = Simulation(
        mesh, model, fluids, cfg.porosity, perm_elem=perm_elem, wells=wells,
        picard=PicardConfig(
            tol=cfg.picard_tol, max_iter=cfg.picard_max_iter,
            pressure_scale=cfg.pressure_scale,
        ),
        solver=SolverConfig(
            rtol=cfg.solver_rtol, max_iter=cfg.solver_max_iter, inner=cfg.solver_inner,
        ),
    )
    state = sim.initialize(cfg.s0, cfg.p0)
    time_cfg = TimeConfig(tau=cfg.tau, t_end=cfg.t_end, output_stride=cfg.output_stride)
    return sim, state, time_cfg


# ---------------------------------------------------------------------------
# VTK legacy output

_CELL_TYPES = {2: 5, 3: 10}  # triangle, tetrahedron


def write_vtk(mesh, point_fields, cell_fields, path, title="vertexflow output"):
    """Write nodal and element scalar fields as a legacy ASCII VTK grid."""
    for name, values in point_fields.items():
        if len(values) != mesh.num_nodes:
            raise ConfigError(f"point field '{name}' has wrong length")
    for name, values in cell_fields.items():
        if len(values) != mesh.num_elements:
            raise ConfigError(f"cell field '{name}' has wrong length")

    nloc = mesh.dim + 1
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 2.0\n")
        fh.write(f"{title}\n")
        fh.write("ASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.num_nodes} double\n")
        for v in mesh.vertices:
            x, y = v[0], v[1]
            z = v[2] if mesh.dim == 3 else 0.0
            fh.write(f"{x:.16g} {y:.16g} {z:.16g}\n")
        fh.write(f"CELLS {mesh.num_elements} {mesh.num_elements * (nloc + 1)}\n")
        for el in mesh.elements:
            fh.write(f"{nloc} " + " ".join(str(int(v)) for v in el) + "\n")
        fh.write(f"CELL_TYPES {mesh.num_elements}\n")
        cell_type = _CELL_TYPES[mesh.dim]
        for _ in range(mesh.num_elements):
            fh.write(f"{cell_type}\n")
        if point_fields:
            fh.write(f"POINT_DATA {mesh.num_nodes}\n")
            for name, values in point_fields.items():
                fh.write(f"SCALARS {name} double\nLOOKUP_TABLE default\n")
                for v in values:
                    fh.write(f"{float(v):.16g}\n")
        if cell_fields:
            fh.write(f"CELL_DATA {mesh.num_elements}\n")
            for name, values in cell_fields.items():
                fh.write(f"SCALARS {name} double\nLOOKUP_TABLE default\n")
                for v in values:
                    fh.write(f"{float(v):.16g}\n")
    return path


def read_vtk(path):
    """Read back a VTK file written by write_vtk.

    Returns (mesh, point_fields, cell_fields).  Only the subset of the
    legacy format emitted by this package is understood.
    """
    with open(path) as fh:
        tokens = fh.read().split()
    pos = 0

    def expect(word):
        nonlocal pos
        if pos >= len(tokens) or tokens[pos].upper() != word:
            raise ConfigError(f"{path}: expected {word!r} near token {pos}")
        pos += 1

    def skip_to(word):
        nonlocal pos
        while pos < len(tokens) and tokens[pos].upper() != word:
            pos += 1

    skip_to("DATASET")
    expect("DATASET")
    expect("UNSTRUCTURED_GRID")
    expect("POINTS")
    num_points = int(tokens[pos]); pos += 2  # count, dtype
    coords = np.array(tokens[pos:pos + 3 * num_points], dtype=float).reshape(num_points, 3)
    pos += 3 * num_points
    expect("CELLS")
    num_cells = int(tokens[pos]); total = int(tokens[pos + 1]); pos += 2
    body = np.array(tokens[pos:pos + total], dtype=np.int64)
    pos += total
    nloc = int(body[0])
    cells = body.reshape(num_cells, nloc + 1)[:, 1:]
    expect("CELL_TYPES")
    pos += 1 + num_cells  # count + values

    dim = 3 if np.any(coords[:, 2] != 0.0) or nloc == 4 else 2
    mesh = Mesh(dim, coords[:, :dim], cells)

    point_fields = {}
    cell_fields = {}
    while pos < len(tokens):
        word = tokens[pos].upper()
        if word == "POINT_DATA":
            target, count = point_fields, num_points
            pos += 2
        elif word == "CELL_DATA":
            target, count = cell_fields, num_cells
            pos += 2
        elif word == "SCALARS":
            name = tokens[pos + 1]
            pos += 3  # SCALARS name dtype
            if tokens[pos].upper() == "LOOKUP_TABLE":
                pos += 2
            target[name] = np.array(tokens[pos:pos + count], dtype=float)
            pos += count
        else:
            pos += 1
    return mesh, point_fields, cell_fields


def probe_line(mesh, nodal_field, p0, p1, samples):
    """Sample a P1 nodal field along the segment p0 -> p1.

    Returns (arc_lengths, values) at ``samples`` equally spaced points,
    evaluated by barycentric interpolation inside the containing element.
    Raises ConfigError when a sample point lies outside the mesh.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    if p0.shape != (mesh.dim,) or p1.shape != (mesh.dim,):
        raise ConfigError(f"probe endpoints must have {mesh.dim} coordinates")
    if samples < 2:
        raise ConfigError("probe needs at least 2 samples")
    nodal_field = np.asarray(nodal_field, dtype=float)

    ts = np.linspace(0.0, 1.0, samples)
    points = p0[None, :] + ts[:, None] * (p1 - p0)[None, :]
    arcs = ts * float(np.linalg.norm(p1 - p0))

    grads = element_p1_gradients(mesh)
    anchors = mesh.vertices[mesh.elements[:, 0]]
    values = np.empty(samples)
    tol = -1e-9
    for k, x in enumerate(points):
        lam = np.einsum("ead,d->ea", grads, x) - np.einsum("ead,ed->ea", grads, anchors)
        lam[:, 0] += 1.0
        inside = np.all(lam >= tol, axis=1)
        hits = np.nonzero(inside)[0]
        if len(hits) == 0:
            raise ConfigError(f"probe point {tuple(x)} lies outside the mesh")
        e = hits[0]
        values[k] = lam[e] @ nodal_field[mesh.elements[e]]
    return arcs, values


def write_probe_csv(arcs, values, path_or_handle):
    """Emit probe samples as 'arc_length,value' CSV rows."""
    rows = "\n".join(f"{a:.10g},{v:.10g}" for a, v in zip(arcs, values))
    text = "arc_length,value\n" + rows + "\n"
    if hasattr(path_or_handle, "write"):
        path_or_handle.write(text)
    else:
        with open(path_or_handle, "w") as fh:
            fh.write(text)
