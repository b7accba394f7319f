"""Regenerate frozen.json from the naive oracles and scipy only (never from phenoglrm).

    python3 tests/data/make_frozen.py
"""
import json
import sys
from pathlib import Path

import numpy as np
import scipy.special
import scipy.stats

HERE = Path(__file__).parent
sys.path.insert(0, str(HERE.parent))
import oracles  # noqa: E402


def pam_instances():
    """Acceptance instances: uniform symmetric matrices, m in [3, 12], n_c in [2, 3]."""
    out = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        m = int(rng.integers(3, 13))
        nc = int(rng.integers(2, min(3, m) + 1))
        d = rng.random((m, m))
        d = (d + d.T) / 2
        np.fill_diagonal(d, 0.0)
        out.append({"seed": seed, "n_clusters": nc, "dist": d.tolist(),
                    "optimal_cost": float(oracles.kmedoids_exhaustive(d, nc))})
    return out


def silhouette_instances():
    out = []
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        m = int(rng.integers(4, 20))
        pts = rng.random((m, 2))
        d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
        labels = rng.integers(0, int(rng.integers(2, 5)), m)
        labels[:2] = [0, 1]  # at least two clusters
        out.append({"dist": d.tolist(), "labels": labels.tolist(),
                    "silhouette": oracles.silhouette_naive(d, labels)})
    return out


def chi2_reference():
    xs = [0.0, 1e-8, 0.01, 0.5, 1.0, 2.0, 3.841, 6.635, 10.0, 25.0, 50.0, 100.0, 300.0]
    dfs = [0.5, 1, 2, 3, 4.5, 7, 10, 30, 100]
    return [{"x": x, "df": d, "q": float(scipy.special.chdtrc(d, x))} for x in xs for d in dfs]


def mw_exact():
    table = []
    for na in range(1, 9):
        for nb in range(1, 9):
            for u, p in oracles.mann_whitney_exact_p(na, nb).items():
                table.append({"na": na, "nb": nb, "u": u, "p": p})
    return table


def kw_reference():
    rng = np.random.default_rng(7)
    cases = []
    for _ in range(30):
        g = int(rng.integers(2, 5))
        groups = [rng.integers(0, 6, int(rng.integers(2, 9))).astype(float).tolist()
                  for _ in range(g)]
        res = scipy.stats.kruskal(*groups)
        cases.append({"groups": groups, "H": float(res.statistic), "p": float(res.pvalue)})
    return cases


if __name__ == "__main__":
    frozen = {
        "pam": pam_instances(),
        "silhouette": silhouette_instances(),
        "chi2": chi2_reference(),
        "mann_whitney_exact": mw_exact(),
        "kruskal": kw_reference(),
    }
    with open(HERE / "frozen.json", "w") as fh:
        json.dump(frozen, fh)
