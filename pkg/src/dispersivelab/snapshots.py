"""Binary container for phase tables and field snapshots.

Layout: magic ``DLAB``, a little-endian uint32 header length, a UTF-8 JSON
header, then the raw array payload in declaration order.  All floats are
little-endian 64-bit; complex arrays are stored as (real, imag) float64
pairs.  Writing is deterministic: identical inputs give identical bytes.
"""

import json
import struct

import numpy as np

from .grids import GridFunction, GridSpec

__all__ = ["write_container", "read_container", "save_phase_table",
           "load_phase_table_arrays", "save_snapshot", "load_snapshot",
           "dump_csv"]

_MAGIC = b"DLAB"


def write_container(path, header, arrays):
    """Write named float64/complex128 arrays after a JSON header."""
    manifest = []
    blobs = []
    for name, arr in arrays:
        arr = np.asarray(arr)
        if np.iscomplexobj(arr):
            flat = np.empty(arr.shape + (2,), dtype="<f8")
            flat[..., 0] = arr.real
            flat[..., 1] = arr.imag
            manifest.append({"name": name, "shape": list(arr.shape),
                             "kind": "complex"})
            blobs.append(flat.tobytes())
        else:
            manifest.append({"name": name, "shape": list(arr.shape),
                             "kind": "real"})
            blobs.append(np.asarray(arr, dtype="<f8").tobytes())
    full_header = dict(header)
    full_header["arrays"] = manifest
    head = json.dumps(full_header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def read_container(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a lab container")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        arrays = {}
        for item in header["arrays"]:
            shape = tuple(item["shape"])
            count = int(np.prod(shape)) if shape else 1
            if item["kind"] == "complex":
                raw = np.frombuffer(fh.read(16 * count), dtype="<f8")
                raw = raw.reshape(shape + (2,))
                arrays[item["name"]] = raw[..., 0] + 1j * raw[..., 1]
            else:
                raw = np.frombuffer(fh.read(8 * count), dtype="<f8")
                arrays[item["name"]] = raw.reshape(shape)
    return header, arrays


def save_phase_table(path, pt, metric):
    """Serialize a phase table: JSON header + S, grad_x_S, grad_xi_S arrays."""
    header = {
        "kind": "phase_table",
        "region": pt.region.to_dict(),
        "far_radius": pt.far_radius,
        "tol": pt.construction_tol,
        "metric_fingerprint": metric.fingerprint(),
        "meta": {k: v for k, v in pt.meta.items()
                 if isinstance(v, (int, float, str, bool))},
    }
    arrays = [
        ("x_grid", pt.x_grid),
        ("xi_grid", pt.xi_grid),
        ("S", pt.S),
        ("grad_x_S", pt.grad_x_S),
        ("grad_xi_S", pt.grad_xi_S),
    ]
    write_container(path, header, arrays)


def load_phase_table_arrays(path):
    """Read back the sampled arrays of a serialized phase table."""
    header, arrays = read_container(path)
    if header.get("kind") != "phase_table":
        raise ValueError(f"{path}: not a phase-table container")
    return header, arrays


def save_snapshot(path, gf, time=None, label=""):
    """Serialize a grid function snapshot."""
    header = {
        "kind": "snapshot",
        "grid": {"dim": gf.grid.dim, "box_half_width": gf.grid.box_half_width,
                 "n_points": gf.grid.n_points},
        "time": time,
        "label": label,
    }
    write_container(path, header, [("values", gf.values)])


def load_snapshot(path):
    header, arrays = read_container(path)
    if header.get("kind") != "snapshot":
        raise ValueError(f"{path}: not a snapshot container")
    g = header["grid"]
    grid = GridSpec(g["dim"], g["box_half_width"], g["n_points"])
    return GridFunction(grid, arrays["values"]), header


def dump_csv(path, out_path=None):
    """Convert a container to CSV (plot-ready; |values| for snapshots)."""
    header, arrays = read_container(path)
    out_path = out_path or (str(path) + ".csv")
    lines = []
    if header.get("kind") == "snapshot":
        g = header["grid"]
        grid = GridSpec(g["dim"], g["box_half_width"], g["n_points"])
        vals = arrays["values"]
        if grid.dim == 1:
            lines.append("x,abs,real,imag")
            for x, v in zip(grid.axis, vals):
                lines.append(f"{x:.17g},{abs(v):.17g},{v.real:.17g},{v.imag:.17g}")
        else:
            lines.append("x,y,abs")
            ax = grid.axis
            for i, x in enumerate(ax):
                for j, y in enumerate(ax):
                    lines.append(f"{x:.17g},{y:.17g},{abs(vals[i, j]):.17g}")
    else:
        names = [item["name"] for item in header["arrays"]]
        lines.append("# " + json.dumps({k: v for k, v in header.items()
                                        if k != "arrays"}, sort_keys=True))
        lines.append("array,index,value")
        for name in names:
            arr = np.asarray(arrays[name]).ravel()
            for i, v in enumerate(arr):
                if np.iscomplexobj(arr):
                    lines.append(f"{name},{i},{v.real:.17g}{v.imag:+.17g}j")
                else:
                    lines.append(f"{name},{i},{v:.17g}")
    with open(out_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return out_path
