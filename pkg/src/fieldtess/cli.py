"""Command line front end: reproducible tessellation runs.

Subcommands: ``gen``, ``tessellate``, ``lloyd``, ``dual``, ``compare``.
A run is fully described by a flat key=value config (file and/or flags);
its SHA-256 hash is embedded in every artifact so outputs can be traced
back to the exact configuration.  With a fixed rng seed all non-timing
artifacts are byte-identical across runs.

Exit codes: 0 ok, 2 input error, 3 config error, 4 extraction error,
5 numerical error.
"""

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, asdict, fields as dc_fields

import numpy as np

from . import analysis, dual as dualmod, lloyd as lloydmod
from .errors import (DuplicateSeedError, MeshFormatError, NonManifoldError,
                     NumericalBlowupError, TessError)
from .field import (CouplingParams, evolve, init_field, load_field,
                    save_field, sharp_labels)
from .mesh import build_laplacian, gen_icosphere, gen_periodic_grid, \
    load_mesh, write_obj

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONFIG = 3
EXIT_EXTRACTION = 4
EXIT_NUMERICAL = 5


@dataclass
class RunConfig:
    mesh: str = ""
    gen: str = ""
    seeds: int = 0
    rng: int = 0
    seed_file: str = ""
    laplacian: str = "uniform"
    w: float = 0.2
    a: float = 1.0
    e: float = 0.3
    e_base: float = 0.2
    mu: float = 0.2
    dt: float = 5.0
    tol: float = 1e-4
    max_steps: int = 1000
    iters: int = 10
    threshold: float = 0.25
    samples: int = 2000
    out: str = "out"
    threads: int = 0
    dump_every: int = 0
    export_labels: bool = True
    export_field: bool = True
    export_timings: bool = True
    export_metrics: bool = True

    def params(self):
        return CouplingParams(w=self.w, a=self.a, e=self.e,
                              e_base=self.e_base, mu=self.mu, dt=self.dt)

    def lines(self):
        return [f"{f.name}={getattr(self, f.name)}"
                for f in dc_fields(self)]

    def hash(self):
        return hashlib.sha256("\n".join(sorted(self.lines()))
                              .encode()).hexdigest()[:12]


def load_config_file(path, config):
    try:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"line {lineno}: expected key=value")
                key, val = (s.strip() for s in line.split("=", 1))
                _set_config(config, key, val)
    except OSError as exc:
        raise FileNotFoundError(f"config file {path}: {exc}") from exc
    return config


def _set_config(config, key, val):
    for f in dc_fields(RunConfig):
        if f.name == key:
            if f.type == "bool" or isinstance(getattr(config, key), bool):
                setattr(config, key, val.lower() in ("1", "true", "yes"))
            else:
                setattr(config, key, type(getattr(config, key))(val))
            return
    raise ValueError(f"unknown config key: {key!r}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fieldtess",
        description="Tessellate triangle meshes by layered field evolution")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_field_params=True):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--mesh", help="input OBJ/OFF path")
        p.add_argument("--gen", help="grid:NX,NY[,SPACING] | sphere:SUBDIV")
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int, help="numba thread cap")
        p.add_argument("--print-config", action="store_true",
                       help="print the effective config and exit")
        if with_field_params:
            p.add_argument("--seeds", type=int, help="random seed count")
            p.add_argument("--rng", type=int, help="rng seed")
            p.add_argument("--seed-file", dest="seed_file",
                           help="file with one seed vertex id per line")
            p.add_argument("--laplacian", choices=("uniform", "cotan-clamped"))
            for name in ("w", "a", "e", "mu", "dt", "tol"):
                p.add_argument(f"--{name}", type=float)
            p.add_argument("--e-base", dest="e_base", type=float)
            p.add_argument("--max-steps", dest="max_steps", type=int)
            p.add_argument("--dump-every", dest="dump_every", type=int)

    p = sub.add_parser("gen", help="emit a generated mesh as OBJ")
    add_common(p, with_field_params=False)

    p = sub.add_parser("tessellate", help="evolve a field to convergence")
    add_common(p)

    p = sub.add_parser("lloyd", help="tessellate + Lloyd-like relaxation")
    add_common(p)
    p.add_argument("--iters", type=int, help="relaxation iterations")

    p = sub.add_parser("dual", help="extract the dual mesh of a converged run")
    add_common(p)
    p.add_argument("--field", help="field snapshot (default OUT/field.txt)")
    p.add_argument("--threshold", type=float, help="isoline threshold")
    p.add_argument("--samples", type=int, help="hausdorff sample count")

    p = sub.add_parser("compare", help="engine labels vs analytic oracle")
    add_common(p)
    p.add_argument("--oracle", choices=("planar", "sphere"), required=True)
    return parser


def make_config(args):
    config = RunConfig()
    if getattr(args, "config", None):
        load_config_file(args.config, config)
    for f in dc_fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            setattr(config, f.name, v)
    return config


def resolve_mesh(config):
    if bool(config.mesh) == bool(config.gen):
        raise ValueError("exactly one of --mesh or --gen is required")
    if config.mesh:
        if not os.path.exists(config.mesh):
            raise FileNotFoundError(f"mesh path does not exist: {config.mesh}")
        return load_mesh(config.mesh)
    kind, _, spec = config.gen.partition(":")
    if kind == "grid":
        parts = spec.split(",")
        if len(parts) not in (2, 3):
            raise ValueError(f"bad grid spec: {config.gen!r}")
        nx, ny = int(parts[0]), int(parts[1])
        spacing = float(parts[2]) if len(parts) == 3 else 1.0
        return gen_periodic_grid(nx, ny, spacing)
    if kind == "sphere":
        return gen_icosphere(int(spec))
    raise ValueError(f"unknown generator: {config.gen!r}")


def sample_seed_vertices(mesh, count, rng_seed):
    """Area-weighted random face sampling snapped to the nearest face vertex."""
    if count < 1:
        raise ValueError("seed count must be positive")
    if count > mesh.n_vertices:
        raise ValueError("more seeds than vertices")
    rng = np.random.default_rng(rng_seed)
    probs = mesh.face_area / mesh.face_area.sum()
    taken = []
    seen = set()
    attempts = 0
    while len(taken) < count:
        attempts += 1
        if attempts > 200 * count:
            raise ValueError("could not draw distinct seed vertices")
        f = int(rng.choice(mesh.n_faces, p=probs))
        r1 = np.sqrt(rng.random())
        r2 = rng.random()
        tri = mesh.faces[f]
        p0 = mesh.positions[tri[0]]
        if mesh.periodic:
            e1 = mesh.wrap_deltas(mesh.positions[tri[1]] - p0)[0]
            e2 = mesh.wrap_deltas(mesh.positions[tri[2]] - p0)[0]
        else:
            e1 = mesh.positions[tri[1]] - p0
            e2 = mesh.positions[tri[2]] - p0
        pt = p0 + (1 - r1) * e1 + (r1 * r2) * e2
        corners = np.stack([p0, p0 + e1, p0 + e2])
        v = int(tri[np.argmin(np.linalg.norm(corners - pt, axis=1))])
        if v not in seen:
            seen.add(v)
            taken.append(v)
    return np.asarray(taken, dtype=np.int64)


def resolve_seeds(config, mesh):
    if bool(config.seeds) == bool(config.seed_file):
        raise ValueError("exactly one of --seeds or --seed-file is required")
    if config.seed_file:
        if not os.path.exists(config.seed_file):
            raise FileNotFoundError(
                f"seed file does not exist: {config.seed_file}")
        with open(config.seed_file) as fh:
            seeds = [int(line) for line in fh if line.strip()]
        arr = np.asarray(seeds, dtype=np.int64)
        if arr.size != np.unique(arr).size:
            raise DuplicateSeedError("duplicate-seed: seed file has repeats")
        return arr
    return sample_seed_vertices(mesh, config.seeds, config.rng)


# -- artifact writers ---------------------------------------------------------


def write_labels_csv(labels, path, config_hash):
    with open(path, "w") as fh:
        fh.write(f"# config={config_hash}\n")
        fh.write("vertex_id,label\n")
        for v, lab in enumerate(labels):
            fh.write(f"{v},{lab}\n")


def write_steps_csv(trace, path, config_hash):
    cols = ("max_delta", "nnz_phi", "base_mass", "spgemm_time",
            "skeleton_time", "expand_time", "update_time", "normalize_time",
            "realloc_count", "converged")
    with open(path, "w") as fh:
        fh.write(f"# config={config_hash}\n")
        fh.write("step," + ",".join(cols) + "\n")
        for k, st in enumerate(trace, 1):
            fh.write(f"{k}," + ",".join(str(getattr(st, c)) for c in cols)
                     + "\n")


def write_json(payload, path, config_hash):
    payload = dict(payload)
    payload["config"] = config_hash
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- commands -----------------------------------------------------------------


def _prepare(config):
    if config.threads > 0:
        import numba
        numba.set_num_threads(config.threads)
    os.makedirs(config.out, exist_ok=True)
    with open(os.path.join(config.out, "config.txt"), "w") as fh:
        fh.write(f"# config={config.hash()}\n")
        fh.write("\n".join(config.lines()) + "\n")


def _run_tessellate(config, mesh=None, seeds=None):
    mesh = mesh if mesh is not None else resolve_mesh(config)
    seeds = seeds if seeds is not None else resolve_seeds(config, mesh)
    lap = build_laplacian(mesh, config.laplacian)
    fld = init_field(mesh, seeds)
    chash = config.hash()

    dumps = []
    if config.dump_every > 0 and config.export_field:
        def on_step(f, st):
            if f.step_count % config.dump_every == 0:
                path = os.path.join(config.out,
                                    f"field_step{f.step_count:05d}.txt")
                save_field(f, config.params(), path,
                           extra_header={"config": chash})
                dumps.append(path)
    else:
        on_step = None
    fld, trace = evolve(fld, lap, config.params(),
                        max_steps=config.max_steps, tol=config.tol,
                        on_step=on_step)
    return mesh, lap, fld, trace


def cmd_tessellate(config):
    _prepare(config)
    mesh, lap, fld, trace = _run_tessellate(config)
    chash = config.hash()
    if config.export_field:
        save_field(fld, config.params(),
                   os.path.join(config.out, "field.txt"),
                   extra_header={"config": chash})
    if config.export_labels:
        write_labels_csv(sharp_labels(fld),
                         os.path.join(config.out, "labels.csv"), chash)
    if config.export_timings:
        write_steps_csv(trace, os.path.join(config.out, "steps.csv"), chash)
    if not trace[-1].converged:
        print(f"warning: not converged after {len(trace)} steps "
              f"(max_delta={trace[-1].max_delta:.3g}, "
              f"base_mass={trace[-1].base_mass:.3g})", file=sys.stderr)
    print(f"tessellate: {len(trace)} steps, nnz={fld.phi.nnz}, "
          f"base_mass={trace[-1].base_mass:.3g}")
    return EXIT_OK


def cmd_lloyd(config):
    _prepare(config)
    mesh = resolve_mesh(config)
    seeds = resolve_seeds(config, mesh)
    lap = build_laplacian(mesh, config.laplacian)
    chash = config.hash()
    state = lloydmod.LloydState(seeds=seeds)
    state = lloydmod.lloyd_iterate(state, mesh, lap, config.params(),
                                   n_iter=config.iters,
                                   max_steps=config.max_steps,
                                   tol=config.tol)
    write_json({"iterations": state.history},
               os.path.join(config.out, "history.json"), chash)
    for rec in state.history:
        counts, edges = analysis.cell_area_histogram(rec["cell_areas"])
        path = os.path.join(config.out,
                            f"areas_iter{rec['iteration']:03d}.csv")
        with open(path, "w") as fh:
            fh.write(f"# config={chash}\n")
            fh.write("bin_lo,bin_hi,count\n")
            for k in range(counts.size):
                fh.write(f"{float(edges[k])!r},{float(edges[k + 1])!r},{counts[k]}\n")
    if config.export_field:
        save_field(state.field, config.params(),
                   os.path.join(config.out, "field.txt"),
                   extra_header={"config": chash})
    if config.export_labels:
        write_labels_csv(sharp_labels(state.field),
                         os.path.join(config.out, "labels.csv"), chash)
    v0 = state.history[0]["area_variance"]
    v1 = state.history[-1]["area_variance"]
    print(f"lloyd: {config.iters} iterations, area variance "
          f"{v0:.4g} -> {v1:.4g}")
    return EXIT_OK


def cmd_dual(config, field_path=None):
    _prepare(config)
    mesh = resolve_mesh(config)
    path = field_path or os.path.join(config.out, "field.txt")
    if not os.path.exists(path):
        raise FileNotFoundError(f"field artifact does not exist: {path}")
    fld, params = load_field(path)
    if fld.n_vertices != mesh.n_vertices:
        raise MeshFormatError("field snapshot does not match the mesh")
    chash = config.hash()

    a_v = dualmod.vertex_adjacency(fld, config.threshold)
    a_t = dualmod.triangle_adjacency(fld, mesh, config.threshold)
    curated = dualmod.confirm_candidates(fld, mesh, a_v, a_t,
                                         config.threshold)
    positions = np.zeros((fld.n_cells, 3))
    normals = np.zeros((fld.n_cells, 3))
    product = lloydmod.faces_by_cell(fld, mesh)
    for c in range(fld.n_cells):
        faces = lloydmod.cell_triangles(fld, mesh, c, product=product)
        point, normal = lloydmod.approx_centroid(fld, mesh, c, faces=faces)
        hit = lloydmod.backproject(point, normal, fld, mesh, c, faces=faces)
        positions[c] = (mesh.positions[hit] if hit is not None
                        else mesh.positions[fld.seed_vertices[c]])
        normals[c] = normal
    dual_mesh = dualmod.build_dual(curated, positions, cell_normals=normals)

    write_obj(dual_mesh.positions, dual_mesh.triangles,
              os.path.join(config.out, "dual.obj"),
              comments=[f"config={chash}"])
    write_json({
        "n_cells": fld.n_cells,
        "n_triangles": int(dual_mesh.triangles.shape[0]),
        "euler_characteristic": int(dual_mesh.euler_characteristic()),
        "dropped_pairs": [list(map(int, d[:2])) + [d[2]]
                          for d in curated.dropped],
        "spurious_triangles": [list(map(int, t))
                               for t in dual_mesh.spurious_removed],
    }, os.path.join(config.out, "dual_diagnostics.json"), chash)
    if config.export_metrics:
        report = analysis.triangle_quality(dual_mesh)
        if dual_mesh.triangles.size:
            try:
                from .mesh import TriMesh
                dual_tm = TriMesh(dual_mesh.positions, dual_mesh.triangles,
                                  period_vectors=mesh.period_vectors)
                mean_pct, rms_pct = analysis.hausdorff(
                    mesh, dual_tm, samples=config.samples,
                    rng_seed=config.rng)
                report.hausdorff_mean_pct = mean_pct
                report.hausdorff_rms_pct = rms_pct
            except TessError:
                pass
        with open(os.path.join(config.out, "quality.json"), "w") as fh:
            fh.write(report.to_json(config=chash))
            fh.write("\n")
    print(f"dual: {dual_mesh.triangles.shape[0]} triangles, "
          f"euler={dual_mesh.euler_characteristic()}")
    return EXIT_OK


def cmd_compare(config, oracle):
    _prepare(config)
    if not config.gen:
        raise ValueError("compare requires a generated mesh (--gen)")
    mesh = resolve_mesh(config)
    if oracle == "sphere" and mesh.periodic:
        raise MeshFormatError("sphere oracle needs a spherical mesh")
    if oracle == "planar" and not mesh.periodic:
        raise MeshFormatError("planar oracle needs a periodic grid")
    seeds = resolve_seeds(config, mesh)
    chash = config.hash()
    mesh2, lap, fld, trace = _run_tessellate(config, mesh=mesh, seeds=seeds)
    engine = sharp_labels(fld)
    if oracle == "planar":
        oracle_labels = analysis.euclidean_voronoi_labels(
            mesh, mesh.positions[seeds])
        mask = analysis.margin_mask(mesh, mesh.positions[seeds], "euclidean")
    else:
        oracle_labels = analysis.sphere_voronoi_labels(mesh, seeds)
        mask = analysis.margin_mask(mesh, seeds, "sphere")
    agreement = analysis.label_agreement(engine, oracle_labels, mask)
    write_json({
        "oracle": oracle,
        "agreement": agreement,
        "masked_vertices": int(mask.sum()),
        "total_vertices": int(mask.size),
        "steps": len(trace),
        "converged": bool(trace[-1].converged),
    }, os.path.join(config.out, "agreement.json"), chash)
    print(f"compare[{oracle}]: agreement={agreement:.4f} "
          f"on {int(mask.sum())} masked vertices")
    return EXIT_OK


def cmd_gen(config):
    _prepare(config)
    mesh = resolve_mesh(config)
    note = ("periodic grid: wrap-around faces look degenerate in flat "
            "coordinates" if mesh.periodic else "generated mesh")
    write_obj(mesh, os.path.join(config.out, "mesh.obj"),
              comments=[f"config={config.hash()}", note])
    print(f"gen: {mesh.n_vertices} vertices, {mesh.n_faces} faces")
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = make_config(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if getattr(args, "print_config", False):
        print("\n".join(config.lines()))
        print(f"# config={config.hash()}")
        return EXIT_OK
    try:
        if args.command == "gen":
            return cmd_gen(config)
        if args.command == "tessellate":
            return cmd_tessellate(config)
        if args.command == "lloyd":
            return cmd_lloyd(config)
        if args.command == "dual":
            return cmd_dual(config, field_path=getattr(args, "field", None))
        if args.command == "compare":
            return cmd_compare(config, args.oracle)
        parser.error(f"unknown command {args.command}")
    except NumericalBlowupError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except NonManifoldError as exc:
        print(f"extraction error: {exc}", file=sys.stderr)
        return EXIT_EXTRACTION
    except DuplicateSeedError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, MeshFormatError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, TessError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
