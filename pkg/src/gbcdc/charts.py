"""SVG line charts of a metrics table (requires matplotlib)."""

from __future__ import annotations

import math
from pathlib import Path

from .errors import ConfigError


def write_charts(table, outdir, experiment: str) -> list[Path]:
    """Write ``bias.svg`` and ``mse.svg`` next to the metrics CSV.

    One series per method, plotted against ``N``. Parametric tables use the
    ``significant`` summary rows and nonparametric ones the ``curve`` rows.
    The SVG files embed no timestamps and use a fixed id salt, so they are
    reproducible byte for byte.
    """
    try:
        import matplotlib

        matplotlib.use("svg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise ConfigError("charts: matplotlib is required (pip install 'artifact[charts]')") from None

    rows = table.select(component="significant") or table.select(component="curve")
    methods = sorted({r["method"] for r in rows})
    paths = []
    with matplotlib.rc_context({"svg.hashsalt": "gbcdc", "svg.fonttype": "none"}):
        for column, label in (("bias", "|bias|"), ("mse", "MSE")):
            fig, ax = plt.subplots(figsize=(5, 3.5))
            for meth in methods:
                pts = [(r["N"], r[column]) for r in rows
                       if r["method"] == meth and not math.isnan(r[column])]
                if pts:
                    xs, ys = zip(*sorted(pts))
                    ax.plot(xs, ys, marker="o", label=meth)
            ax.set_xlabel("N (number of batches)")
            ax.set_ylabel(label)
            ax.set_title(f"{experiment}: {label} vs N")
            ax.legend()
            fig.tight_layout()
            path = Path(outdir) / f"{column}.svg"
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            paths.append(path)
    return paths
