"""Render a synthetic house and compare its ASG image with Monte Carlo shading.

Writes PGM images of the normal map, the closed-form ASG, and the clamped
Lambertian average to ``demos/out/``, and prints how close the unclamped
Monte Carlo estimate is to the closed form.

    python3 demos/asg_images.py
"""

from pathlib import Path

import numpy as np

from asgreg import io
from asgreg.asg import AsgConfig, asg_closed_form, asg_monte_carlo
from asgreg.raster import render
from asgreg.scenes import make_synthetic_scene

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

scene = make_synthetic_scene("house", seed=0)
view = 9
rendered = render(scene.mesh, scene.intrinsics, scene.cameras[view])
normals = rendered.normal_map

closed = asg_closed_form(normals)
cfg = AsgConfig(mc_samples=20_000, seed=0)
unclamped = asg_monte_carlo(normals, cfg, clamped=False)
clamped = asg_monte_carlo(normals, cfg, clamped=True)

rel = np.linalg.norm(unclamped.magnitude - closed.magnitude) / np.linalg.norm(closed.magnitude)
print(f"view {view}: {rendered.valid.sum()} model pixels")
print(f"unclamped Monte Carlo vs closed form: relative L2 {rel:.2e}")
ratio = clamped.magnitude[closed.valid].sum() / closed.magnitude[closed.valid].sum()
print(f"clamped average / closed form (summed over the model): {ratio:.3f}")

io.write_pgm(out / "normals.pgm", io.to_byte_image(normals.normals, normals.valid))
io.write_pgm(out / "asg_closed_form.pgm", io.to_byte_image(closed.magnitude, closed.valid))
io.write_pgm(out / "asg_clamped_mc.pgm", io.to_byte_image(clamped.magnitude, clamped.valid))
io.write_pgm(out / "photo.pgm", io.to_byte_image(scene.queries[view].image))
print(f"images written to {out}")
