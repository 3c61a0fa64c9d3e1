"""Plug-and-play deblurring, end to end.

Protocol: blur a synthetic 64x64 image with a 9x9 uniform kernel, add 3%
Gaussian noise, then reconstruct by plugging denoisers into proximal
splittings.  A TV denoiser in the gradient-descent splitting recovers
double-digit dB; a family of provably convergent schemes sharing one
gradient-step denoiser all drive their residuals to tolerance and land on
the same objective value, while the half-quadratic baseline with a
decreasing noise schedule is only recorded, never certified.

Outputs (trace CSVs and a two-panel SVG) land in demos/output/.
"""

from pathlib import Path

import numpy as np

from pnpkit import (
    RegSlot,
    Rng,
    Signal,
    SmoothFn,
    SolverConfig,
    gaussian_smoother,
    gs_denoiser,
    make_blur,
    psnr,
    quadratic_fidelity_prox,
    run_drs,
    run_gs_pnp,
    run_hqs,
    run_pgd,
    save_signal,
    tv_denoiser,
    write_trace,
)
from pnpkit.cli import builtin_image, render_traces_svg

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)

size = 64
x_true = builtin_image("shapes", size)
op = make_blur(np.full((9, 9), 1.0 / 81.0), (size, size))
y = op._apply(x_true) + 0.03 * Rng(0).child(100).standard_normal((size, size))
print(f"corrupted input: {psnr(y, x_true):.2f} dB\n")

fid = SmoothFn.least_squares(op, y)
x0 = op._adjoint(y)

print("PnP-PGD with the TV denoiser (quality-oriented run):")
tv_slot = RegSlot(denoiser=tv_denoiser(c=1.0), sigma=0.05)
recon, tv_trace = run_pgd(fid, tv_slot, SolverConfig(step=1.0, max_iter=120, tol=1e-9),
                          x0, reference=x_true)
print(f"  {psnr(recon, x_true):.2f} dB after {tv_trace.last().iter} iterations "
      f"({psnr(recon, x_true) - psnr(y, x_true):+.2f} dB over the input)\n")
save_signal(Signal.from_array(np.clip(np.asarray(recon), 0, 1)), out_dir / "tv_recon.pgm")
save_signal(Signal.from_array(np.clip(y, 0, 1)), out_dir / "corrupted.pgm")

print("provably convergent schemes sharing one gradient-step denoiser:")
gs = gs_denoiser(gaussian_smoother((size, size), 1.5, floor=0.15), weight=0.7)
cfg = SolverConfig(step=1.0, max_iter=400, tol=1e-9)
traces, labels = [tv_trace], ["pnp-pgd-tv"]


def report(name, sig, trace):
    print(f"  {name:12s} {psnr(sig, x_true):6.2f} dB, stop '{trace.stop_reason}' "
          f"at iteration {trace.last().iter}")
    traces.append(trace)
    labels.append(name)
    write_trace(trace, out_dir / f"trace_{name}.csv")


sig, tr = run_pgd(fid, RegSlot(denoiser=gs), cfg, x0, reference=x_true)
report("pnp-pgd", sig, tr)
sig, tr = run_drs(RegSlot(denoiser=gs), quadratic_fidelity_prox(op, y), cfg, x0,
                  reference=x_true)
report("pnp-drs", sig, tr)
sig, tr = run_drs(quadratic_fidelity_prox(op, y), RegSlot(denoiser=gs), cfg, x0,
                  reference=x_true)
report("pnp-drsdiff", sig, tr)
sig, tr = run_gs_pnp(op, y, gs, cfg, lam=0.7, tau=1.0, reference=x_true)
report("gs-pnp", sig, tr)

print("\nhalf-quadratic baseline with a decreasing denoiser schedule (recorded only):")
hqs_slot = RegSlot(denoiser=tv_denoiser(c=1.0), sigma=0.2)
sig, tr = run_hqs(op, y, hqs_slot, SolverConfig(rho=1.0, max_iter=80, tol=0.0),
                  sigma_schedule=list(np.geomspace(0.2, 0.02, 80)), reference=x_true)
report("hqs-baseline", sig, tr)

svg_path = out_dir / "deblur_traces.svg"
svg_path.write_text(render_traces_svg(traces, labels))
print(f"\nwrote residual/PSNR panels to {svg_path}")
