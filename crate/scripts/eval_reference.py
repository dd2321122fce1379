"""Brute-force scan-to-mesh evaluation used to cross-check `tempeh eval`.

usage: eval_reference.py PREDICTIONS SCANS MESH_NAME MASKS_DIR OUT_JSON

Every scan point is compared against every triangle; no acceleration
structure is involved. Statistics match the report definitions: median,
mean, population std, and point count per region.
"""

import json
import os
import sys

import numpy as np

REGIONS = ["face", "scalp", "neck"]


def read_obj(path):
    verts, faces = [], []
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int64)


def read_scan(path):
    with open(path, "rb") as f:
        data = f.read()
    end = data.index(b"end_header\n") + len(b"end_header\n")
    header = data[:end].decode().splitlines()
    count = next(int(l.split()[2]) for l in header if l.startswith("element vertex"))
    props = [l.split() for l in header if l.startswith("property")]
    names = [p[-1] for p in props]
    if "format ascii 1.0" in header:
        rows = data[end:].decode().split("\n")[:count]
        arr = np.array([[float(x) for x in r.split()] for r in rows])
    else:
        types = {"double": "<f8", "float": "<f4", "uchar": "u1", "int": "<i4"}
        dt = np.dtype([(p[-1], types[p[1]]) for p in props])
        arr = np.frombuffer(data[end:], dtype=dt, count=count)
        arr = np.stack([arr[n].astype(np.float64) for n in names], axis=1)
    pts = arr[:, [names.index(c) for c in "xyz"]]
    if "valid" in names:
        pts = pts[arr[:, names.index("valid")] != 0]
    return pts


def closest_sq_dist(p, a, b, c):
    """Squared distance from p to each triangle (a[i], b[i], c[i])."""
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = (ab * ap).sum(1), (ac * ap).sum(1)
    bp = p - b
    d3, d4 = (ab * bp).sum(1), (ac * bp).sum(1)
    cp = p - c
    d5, d6 = (ab * cp).sum(1), (ac * cp).sum(1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    out = np.empty_like(a)
    done = np.zeros(len(a), dtype=bool)

    def put(mask, q):
        m = mask & ~done
        out[m] = q[m]
        done[m] = True

    put((d1 <= 0) & (d2 <= 0), a)
    put((d3 >= 0) & (d4 <= d3), b)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = d1 / (d1 - d3)
        put((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v[:, None] * ab)
        put((d6 >= 0) & (d5 <= d6), c)
        w = d2 / (d2 - d6)
        put((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w[:, None] * ac)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        put((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + w[:, None] * (c - b))
        denom = 1.0 / (va + vb + vc)
        v, w = vb * denom, vc * denom
        put(np.ones(len(a), dtype=bool), a + ab * v[:, None] + ac * w[:, None])
    return ((out - p) ** 2).sum(1)


def stats(region, e):
    e = np.sort(np.asarray(e, dtype=np.float64))
    n = len(e)
    if n == 0:
        return {"region": region, "median": None, "mean": None, "std": None, "n_points": 0}
    mean = e.sum() / n
    median = e[n // 2] if n % 2 else 0.5 * (e[n // 2 - 1] + e[n // 2])
    std = np.sqrt((((e - mean) ** 2).sum()) / n)
    return {"region": region, "median": float(median), "mean": float(mean), "std": float(std), "n_points": n}


def main(pred_dir, scan_dir, mesh_name, masks_dir, out_path):
    frames = sorted(d for d in os.listdir(pred_dir) if os.path.isdir(os.path.join(pred_dir, d)))
    masks = {}
    for r in REGIONS:
        p = os.path.join(masks_dir, r + ".txt")
        if os.path.exists(p):
            with open(p) as f:
                masks[r] = [int(x) for x in f.read().split()]
    report = {"frames": [], "overall": []}
    all_errors = {r: [] for r in ["complete-head"] + list(masks)}
    for fid in frames:
        verts, faces = read_obj(os.path.join(pred_dir, fid, mesh_name + ".obj"))
        ref, _ = read_obj(os.path.join(scan_dir, fid, "ref.obj"))
        scan = read_scan(os.path.join(scan_dir, fid, "scan.ply"))
        a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
        errors = np.array([np.sqrt(closest_sq_dist(p, a, b, c).min()) for p in scan])
        nearest = np.array([np.argmin(((ref - p) ** 2).sum(1)) for p in scan])
        regions = [stats("complete-head", errors)]
        all_errors["complete-head"].extend(errors)
        for r, idx in masks.items():
            flag = np.zeros(len(ref), dtype=bool)
            flag[idx] = True
            sel = errors[flag[nearest]]
            regions.append(stats(r, sel))
            all_errors[r].extend(sel)
        report["frames"].append({"frame_id": fid, "regions": regions})
    report["overall"] = [stats(r, e) for r, e in all_errors.items()]
    with open(out_path, "w") as f:
        json.dump(report, f, indent=1)


if __name__ == "__main__":
    if len(sys.argv) != 6:
        sys.exit(__doc__)
    main(*sys.argv[1:])
