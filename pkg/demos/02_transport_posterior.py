"""Estimate a transport field for one frame pair, two likelihoods side by side.

Generates a drifting, growing plume (so total brightness is *not* conserved),
then fits the flow posterior under the brightness-constancy likelihood and
under the integrated-continuity likelihood, at a fixed smoothness and with
the smoothness scale averaged out.  The growing plume is exactly the regime
where continuity beats constancy.  Artifacts land in demos/output/.
"""

import os

import numpy as np

from dustflow.cli import grid_to_rgb, overlay_arrows, write_ppm
from dustflow.flow import advect, bayes_flow, hs_system, ice_system, posterior_given_alpha
from dustflow.gmrf import Lattice2D
from dustflow.metrics import flow_errors
from dustflow.raster import derivatives
from dustflow.synth import PlumeScenario, evaluation_mask, generate_plume

OUT = os.path.join(os.path.dirname(__file__), "output")

SCENARIO = PlumeScenario(
    rows=32, cols=32, n_frames=2, flow=(1.0, 0.5), center0=(14.0, 14.0),
    sigma0=4.0, growth=1.2, amplitude=1.0, noise_sd=0.01,
)


def main() -> None:
    os.makedirs(OUT, exist_ok=True)
    gt = generate_plume(SCENARIO, seed=7)
    mask = evaluation_mask(gt, pair=0, amplitude=SCENARIO.amplitude)
    d = derivatives(gt.frames[0], gt.frames[1])
    lat = Lattice2D(SCENARIO.rows, SCENARIO.cols)

    print("true flow: (1.0, 0.5) everywhere; plume radius grows 20% per frame")
    print(f"{'model':>24}  {'angular err':>11}  {'magnitude err':>13}")
    for name, system in (("brightness constancy", hs_system(d)),
                         ("integrated continuity", ice_system(d))):
        fixed, _ = posterior_given_alpha(system, lat, 0.5, want_variances=False)
        summary = bayes_flow(system, lat)
        for label, field in ((f"{name}, alpha=0.5", fixed),
                             (f"{name}, averaged", summary.mean)):
            report = flow_errors(field, gt.true_flow, mask)
            print(f"{label:>24}  {report.mean_abs_angular_error:11.3f}"
                  f"  {report.mean_abs_magnitude_error:13.4f}")
        if name.startswith("integrated"):
            best = summary
    print(f"posterior-favored smoothness (continuity model): alpha = {best.map_alpha:.3f}")

    # transport the first frame along the estimated flow and compare with
    # what actually happened one frame later
    moved = advect(gt.frames[0], best.mean, direction="forward")
    residual = float(np.abs(moved.data - gt.frames[1].data).mean())
    baseline = float(np.abs(gt.frames[0].data - gt.frames[1].data).mean())
    print(f"mean |frame1 - advected frame0| = {residual:.4f} (no-motion baseline {baseline:.4f})")

    overlay = overlay_arrows(grid_to_rgb(gt.frames[0]), best.mean, stride=4)
    write_ppm(os.path.join(OUT, "estimated_transport.ppm"), overlay)
    print(f"arrow overlay written to {OUT}/estimated_transport.ppm")


if __name__ == "__main__":
    main()
