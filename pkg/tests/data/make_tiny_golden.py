"""Regenerate ``tiny_golden.json`` with an oracle independent of the package.

Ridge fits come from an augmented least-squares problem and the composite
from a generic least-squares solve with an explicit intercept column. Run
from the repository root: ``python tests/data/make_tiny_golden.py``.
"""

import csv
import json
from pathlib import Path

import numpy as np
import scipy.linalg

LAM, N = 0.5, 8
root = Path(__file__).resolve().parents[2]
with open(root / "src/gbcdc/data/tiny.csv") as fh:
    rows = np.array([[float(v) for v in r] for r in list(csv.reader(fh))[1:]])
x_all, y_all = rows[:, :-1], rows[:, -1]
m, p = len(y_all) // N, x_all.shape[1]

thetas, vs = [], []
for j in range(N):
    x, y = x_all[j * m:(j + 1) * m], y_all[j * m:(j + 1) * m]
    aug_x = np.vstack([x / np.sqrt(m), np.sqrt(LAM) * np.eye(p)])
    aug_y = np.concatenate([y / np.sqrt(m), np.zeros(p)])
    thetas.append(scipy.linalg.lstsq(aug_x, aug_y)[0])
    vs.append(-scipy.linalg.inv(x.T @ x / m + LAM * np.eye(p)))
thetas, vs = np.array(thetas), np.array(vs)

theta_tilde, var_hat = [], []
for k in range(p):
    design = np.column_stack([np.ones(N), vs[:, k, :]])
    coef, rss, *_ = scipy.linalg.lstsq(design, thetas[:, k])
    resid = thetas[:, k] - design @ coef
    s2 = resid @ resid / (N - p - 1)
    theta_tilde.append(coef[0])
    var_hat.append(s2 * scipy.linalg.inv(design.T @ design)[0, 0])

golden = {
    "lambda": LAM, "N": N, "method": "bc_ge", "estimator": "ridge",
    "theta_tilde": theta_tilde, "var_hat": var_hat,
    "naive": thetas.mean(axis=0).tolist(),
}
(Path(__file__).parent / "tiny_golden.json").write_text(json.dumps(golden, indent=2) + "\n")
