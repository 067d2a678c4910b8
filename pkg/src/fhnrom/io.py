"""Output writers: legacy VTK fields and CSV trajectories."""

import os

import numpy as np


def write_vtk_fields(space, path, **fields):
    """Write dG fields as legacy ASCII VTK with per-element duplicated points.

    Each triangle gets its own three points so discontinuous nodal data is
    represented exactly.  ``fields`` maps names to length-N coefficient
    vectors.
    """
    mesh = space.mesh
    tris = mesh.triangles
    n_t = len(tris)
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write("fhnrom fields\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {3 * n_t} double\n")
        for tri in tris:
            for v in tri:
                x, y = mesh.vertices[v]
                f.write(f"{x} {y} 0.0\n")
        f.write(f"CELLS {n_t} {4 * n_t}\n")
        for t in range(n_t):
            f.write(f"3 {3 * t} {3 * t + 1} {3 * t + 2}\n")
        f.write(f"CELL_TYPES {n_t}\n")
        f.write("\n".join(["5"] * n_t) + "\n")
        f.write(f"POINT_DATA {3 * n_t}\n")
        for name, vec in fields.items():
            vec = np.asarray(vec, dtype=float)
            f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            f.write("\n".join(repr(v) for v in vec) + "\n")


def write_trajectory_csv(traj, path):
    """One row per DoF, one column per time step; header holds the times."""
    data = {"y": traj.y, "z": traj.z} if traj.kind == "state" else {"p": traj.y, "q": traj.z}
    base, ext = os.path.splitext(path)
    for name, arr in data.items():
        header = ",".join(repr(t) for t in traj.times)
        np.savetxt(f"{base}_{name}{ext}", np.asarray(arr).T, delimiter=",", header=header)


def write_vtk_trajectory(space, traj, directory, prefix="step"):
    """Per-step VTK field files for a full-order trajectory."""
    os.makedirs(directory, exist_ok=True)
    for n in range(len(traj.times)):
        write_vtk_fields(
            space,
            os.path.join(directory, f"{prefix}_{n:04d}.vtk"),
            y=traj.y[n],
            z=traj.z[n],
        )
