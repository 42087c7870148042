"""Isomap fidelity on the cylinder strip against its analytic geodesics.

    python scripts/cylinder_isomap.py --k 8 16 24 --around 20 --along 25
"""
import argparse
import time

from cardiovi.manifold import embed_endocardium, reconstruction_error, stress
from cardiovi.mesh import cylinder_geodesics, generate_cylinder_strip


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k", type=int, nargs="+", default=[8, 16, 24])
    ap.add_argument("--around", type=int, default=20)
    ap.add_argument("--along", type=int, default=25)
    ap.add_argument("--radius", type=float, default=20.0)
    args = ap.parse_args()
    strip = generate_cylinder_strip(args.around, args.along, radius=args.radius)
    geo = cylinder_geodesics(strip.vertices, args.radius)
    print(f"{strip.n_vertices} vertices")
    for k in args.k:
        t = time.perf_counter()
        emb = embed_endocardium(strip, k=k)
        rec = reconstruction_error(emb, strip)
        s = stress(geo, emb.latent)
        print(f"k={k:3d}  stress={s:.4%}  identity={rec.identity_fraction:.0%}  {time.perf_counter() - t:.2f}s")


if __name__ == "__main__":
    main()
