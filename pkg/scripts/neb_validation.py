"""Elastic bands on two analytic surfaces with known saddles.

Curved double well: minima at (+-1, 0), saddle (0, 0.7) at energy 1.
Mueller-Brown: highest saddle between the two deepest minima at -40.665.
"""
import numpy as np

from relu_landscape.neb import NebConfig, relax_band

MB = dict(A=np.array([-200.0, -100.0, -170.0, 15.0]), a=np.array([-1.0, -1.0, -6.5, 0.7]),
          b=np.array([0.0, 0.0, 11.0, 0.6]), c=np.array([-10.0, -10.0, -6.5, 0.7]),
          x0=np.array([1.0, 0.0, -0.5, -1.0]), y0=np.array([0.0, 0.5, 1.5, 1.0]))


def mueller_brown(P):
    dx, dy = P[:, :1] - MB["x0"], P[:, 1:2] - MB["y0"]
    t = MB["A"] * np.exp(MB["a"] * dx * dx + MB["b"] * dx * dy + MB["c"] * dy * dy)
    gx = (t * (2 * MB["a"] * dx + MB["b"] * dy)).sum(1)
    gy = (t * (MB["b"] * dx + 2 * MB["c"] * dy)).sum(1)
    return t.sum(1), np.stack([gx, gy], 1)


def double_well(P, c=0.7, k=4.0):
    x, y = P[:, 0], P[:, 1]
    r = y - c * (1 - x * x)
    return (x * x - 1) ** 2 + k * r * r, np.stack([4 * x * (x * x - 1) + 4 * k * c * x * r, 2 * k * r], 1)


if __name__ == "__main__":
    for climbing in (False, True):
        for n in (8, 16, 32):
            cfg = NebConfig(image_count=n, step_size=1e-2, max_iters=100_000, force_tol=1e-8, climbing=climbing)
            path = relax_band(double_well, [-1.0, 0.0], [1.0, 0.0], cfg)
            print(f"double well  images={n:2d} climbing={climbing!s:5}  barrier={path.energies.max():.6f}  "
                  f"iterations={path.iterations}")
    cfg = NebConfig(image_count=8, step_size=2e-4, max_iters=60_000, force_tol=1e-4, climbing=True)
    path = relax_band(mueller_brown, [-0.558224, 1.441726], [0.623499, 0.028038], cfg)
    top = int(np.argmax(path.energies))
    print(f"Mueller-Brown saddle energy={path.energies[top]:.4f} at {np.round(path.images[top], 4).tolist()} "
          "(reference -40.665 at [-0.822, 0.624])")
