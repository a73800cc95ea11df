"""Compose the dust false-color product and run the threshold detector.

Builds a small synthetic thermal scene containing one dust blob, renders the
false-color composite, and applies the strict-inequality threshold rule with
and without the 10.8-micron cold-cloud clause.  Artifacts land in
demos/output/.
"""

import os

import numpy as np

from dustflow.cli import write_ppm
from dustflow.detect import ThresholdRule, threshold_detect
from dustflow.raster import (
    CH_BLUE,
    CH_BT108,
    CH_DBG,
    CH_DBR,
    CH_GREEN,
    CH_RED,
    CH_ROLLMEAN,
    ChannelStack,
    Grid,
    false_color,
    save_grid,
)

OUT = os.path.join(os.path.dirname(__file__), "output")


def build_scene(rows=48, cols=48):
    """Three brightness-temperature channels with a dusty disc in the middle.

    Dust raises the 12.0-10.8 difference, lowers the 10.8-8.7 difference,
    and cools the 10.8 channel relative to the clear-sky background.
    """
    jj, ii = np.meshgrid(np.arange(cols, dtype=float), np.arange(rows, dtype=float))
    dust = np.exp(-((jj - 24.0) ** 2 + (ii - 20.0) ** 2) / (2.0 * 7.0**2))

    bt108 = 288.0 - 5.0 * dust  # dust cools the window channel
    bt12 = bt108 + (-2.0 + 3.5 * dust)  # d_BR swings from -2 (clear) to +1.5
    bt87 = bt108 - (8.0 - 7.0 * dust)  # d_BG drops from 8 toward 1 over dust
    return Grid.from_2d(bt12), Grid.from_2d(bt108), Grid.from_2d(bt87)


def main() -> None:
    os.makedirs(OUT, exist_ok=True)
    bt12, bt108, bt87 = build_scene()

    # false-color composite: dust shows as the classic pink/magenta signature
    fc = false_color(bt12, bt108, bt87)
    rgb = np.stack(
        [np.rint(255.0 * fc[name].to_2d()).astype(np.uint8) for name in (CH_RED, CH_GREEN, CH_BLUE)],
        axis=-1,
    )
    write_ppm(os.path.join(OUT, "false_color.ppm"), rgb)

    # the detector works on the raw differences the composite was built from,
    # plus a rolling-mean reference for the anomaly clause; a reference well
    # above today's values makes the whole scene anomalous, so the remaining
    # clauses decide
    stack = ChannelStack(
        channels={
            CH_DBR: fc[CH_DBR],
            CH_DBG: fc[CH_DBG],
            CH_BT108: bt108,
            CH_ROLLMEAN: Grid.full(bt108.rows, bt108.cols, 4.0),
        }
    )
    full_rule = ThresholdRule()
    no_bt = ThresholdRule(use_bt108=False)
    hits_full = threshold_detect(stack, full_rule)
    hits_no_bt = threshold_detect(stack, no_bt)

    save_grid(hits_full, os.path.join(OUT, "detected_full_rule.grid"))
    save_grid(hits_no_bt, os.path.join(OUT, "detected_no_bt108.grid"))
    print(f"pixels flagged, full rule:          {int(hits_full.data.sum())}")
    print(f"pixels flagged, without BT10.8:     {int(hits_no_bt.data.sum())}")
    print(f"see {OUT}/false_color.ppm for the composite")


if __name__ == "__main__":
    main()
