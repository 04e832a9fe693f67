"""Render a landscape.json export as a loss surface with the weight path on top.

usage: plot_landscape.py landscape.json [out.png] [--check]

--check validates the export against configs/landscape.schema.json and exits
without plotting.
"""
import json
import pathlib
import sys

import numpy as np

SCHEMA = pathlib.Path(__file__).resolve().parent.parent / "configs" / "landscape.schema.json"


def load(path):
    data = json.loads(pathlib.Path(path).read_text())
    try:
        import jsonschema
    except ImportError:
        jsonschema = None
    if jsonschema is not None:
        jsonschema.validate(data, json.loads(SCHEMA.read_text()))
    w = np.asarray(data["w"], dtype=float)
    loss = np.asarray(data["loss"], dtype=float)
    if w.shape != (len(loss), 2):
        raise ValueError(f"trajectory shape {w.shape} does not match {len(loss)} losses")
    return w, loss, data["grid"]


def surface(w, loss, grid):
    from scipy.interpolate import griddata

    xs = np.linspace(grid["xmin"], grid["xmax"], grid["n"])
    ys = np.linspace(grid["ymin"], grid["ymax"], grid["n"])
    gx, gy = np.meshgrid(xs, ys)
    try:
        z = griddata(w, loss, (gx, gy), method="cubic")
    except Exception:
        # Cubic needs a 2-d point cloud; collinear paths fall back to nearest.
        z = griddata(w, loss, (gx, gy), method="nearest")
    return gx, gy, z


def main(argv):
    args = [a for a in argv if not a.startswith("--")]
    if not args:
        print(__doc__, file=sys.stderr)
        return 2
    w, loss, grid = load(args[0])
    if "--check" in argv:
        print(f"ok: {len(loss)} epochs, grid {grid['n']}x{grid['n']}")
        return 0
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    gx, gy, z = surface(w, loss, grid)
    fig, ax = plt.subplots(figsize=(6, 5))
    if np.isfinite(z).any():
        cs = ax.contourf(gx, gy, z, levels=30, cmap="viridis")
        fig.colorbar(cs, ax=ax, label="loss")
    ax.plot(w[:, 0], w[:, 1], "w.-", lw=1)
    ax.plot(*w[0], "wo", label="start")
    ax.plot(*w[-1], "r*", ms=12, label="end")
    ax.set_xlabel("w1")
    ax.set_ylabel("w2")
    ax.legend()
    out = args[1] if len(args) > 1 else "landscape.png"
    fig.savefig(out, dpi=150, bbox_inches="tight")
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
