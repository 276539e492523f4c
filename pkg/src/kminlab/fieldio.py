"""KFLD field files and the ground-state profile CSV."""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .energy import Field
from .groundstate import RadialProfile, moment

MAGIC = "KFLD"
VERSION = 1


def write_kfld(path, field: Field) -> None:
    """ASCII header ``KFLD 1 nx ny hx hy ox oy`` then nx·ny little-endian float64, row-major."""
    g = field.grid
    header = f"{MAGIC} {VERSION} {g.nx} {g.ny} {g.hx!r} {g.hy!r} {float(g.origin[0])!r} {float(g.origin[1])!r}\n"
    data = np.where(g.interior_mask, field.values, 0.0).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(data.tobytes(order="C"))


def read_kfld(path):
    """Return (values of shape (ny, nx), header dict)."""
    with open(path, "rb") as fh:
        line = fh.readline().decode("ascii").split()
        if len(line) != 8 or line[0] != MAGIC:
            raise ValueError(f"{path}: not a KFLD file")
        if int(line[1]) != VERSION:
            raise ValueError(f"{path}: unsupported KFLD version {line[1]}")
        nx, ny = int(line[2]), int(line[3])
        meta = {"nx": nx, "ny": ny, "hx": float(line[4]), "hy": float(line[5]),
                "origin": (float(line[6]), float(line[7]))}
        raw = fh.read()
    if len(raw) != 8 * nx * ny:
        raise ValueError(f"{path}: expected {8 * nx * ny} data bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f8").reshape(ny, nx).copy(), meta


def write_profile_csv(path, profile: RadialProfile, moments=(1, 2, 3)) -> None:
    """Columns r, Q, Qprime; footer rows carry the norms and requested moments."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r", "Q", "Qprime"])
        for r, q, dq in zip(profile.r_nodes, profile.q_values, profile.q_prime):
            w.writerow([repr(float(r)), repr(float(q)), repr(float(dq))])
        w.writerow(["#mass", repr(profile.mass), ""])
        w.writerow(["#grad_norm", repr(profile.grad_norm), ""])
        w.writerow(["#quartic", repr(profile.quartic), ""])
        w.writerow(["#q0", repr(profile.q_at_zero), ""])
        for p in moments:
            w.writerow([f"#m{float(p):g}", repr(moment(profile, p)), ""])


def read_profile_csv(path) -> RadialProfile:
    rows, footer = [], {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            if row[0].startswith("#"):
                footer[row[0][1:]] = float(row[1])
            else:
                rows.append([float(x) for x in row])
    a = np.array(rows)
    return RadialProfile(
        r_nodes=a[:, 0], q_values=a[:, 1], q_prime=a[:, 2], r_max=float(a[-1, 0]),
        mass=footer["mass"], grad_norm=footer["grad_norm"], quartic=footer["quartic"],
        q_at_zero=footer.get("q0", float(a[0, 1])),
    )


def save_profile_npz(path, profile: RadialProfile) -> None:
    np.savez(path, r=profile.r_nodes, q=profile.q_values, dq=profile.q_prime,
             scalars=np.array([profile.r_max, profile.mass, profile.grad_norm, profile.quartic,
                               profile.q_at_zero, profile.splice_radius]))


def load_profile_npz(path) -> RadialProfile:
    with np.load(path) as z:
        r_max, mass, grad, quart, q0, splice = z["scalars"]
        return RadialProfile(z["r"], z["q"], z["dq"], float(r_max), float(mass), float(grad),
                             float(quart), float(q0), float(splice) if math.isfinite(splice) else math.nan)


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
