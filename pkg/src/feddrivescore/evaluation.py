"""Agreement metrics between a reference model and a federated one."""
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import check_matrix
from .exceptions import DataError, DomainError

SCALES = {"unit": 1.0, "ten": 10.0}


def regression_indexes(y_true, y_pred):
    """MSE, MAE, RMSE and R-squared of ``y_pred`` against ``y_true``."""
    y_true = np.asarray(y_true, dtype=float).ravel()
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    if y_true.size == 0 or y_true.size != y_pred.size:
        raise DomainError("inputs must be non-empty and of equal length")
    resid = y_true - y_pred
    mse = float(np.mean(resid**2))
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0:
        raise DataError("R-squared is undefined for constant targets")
    return {
        "mse": mse,
        "mae": float(np.mean(np.abs(resid))),
        "rmse": float(np.sqrt(mse)),
        "r2": 1.0 - float(np.sum(resid**2)) / ss_tot,
    }


def weight_error_trajectory(history, w_ref):
    """Infinity-norm distance of each round's weights from ``w_ref``."""
    history = np.asarray(history, dtype=float)
    return np.abs(history - np.asarray(w_ref, dtype=float)).max(axis=1)


@dataclass(frozen=True)
class ConsistencyReport:
    mse: float
    mae: float
    rmse: float
    r2: float
    delta: float
    abs_delta: float
    weight_gap: float
    per_round_weight_error: list = field(default_factory=list)
    scale: str = "unit"

    def to_json(self):
        return json.dumps(asdict(self), indent=2)


def consistency_report(reference, candidate, X, weight_history=None, scale="unit"):
    """Score ``X`` with both models, treating the reference scores as targets."""
    if [s for s in reference.specs] != [s for s in candidate.specs]:
        raise DomainError("models were trained on different metric specs")
    if scale not in SCALES:
        raise DomainError(f"scale must be one of {sorted(SCALES)}")
    X = check_matrix(X, n_features=reference.n_metrics)
    k = SCALES[scale]
    y_ref = reference.score(X) * k
    y_hat = candidate.score(X) * k
    gap = y_hat - y_ref
    per_round = [] if weight_history is None else weight_error_trajectory(weight_history, reference.weights).tolist()
    if np.ptp(y_ref) == 0:
        # both constant: report agreement without an R-squared denominator
        idx = {"mse": float(np.mean(gap**2)), "mae": float(np.mean(np.abs(gap)))}
        idx["rmse"] = float(np.sqrt(idx["mse"]))
        idx["r2"] = 1.0 if idx["mse"] == 0 else float("-inf")
    else:
        idx = regression_indexes(y_ref, y_hat)
    return ConsistencyReport(
        **idx,
        delta=float(gap.mean()),
        abs_delta=float(np.abs(gap).mean()),
        weight_gap=float(np.max(np.abs(reference.weights - candidate.weights))),
        per_round_weight_error=per_round,
        scale=scale,
    )


def score_histogram(scores, bins=50, value_range=(0.0, 1.0)):
    counts, edges = np.histogram(np.asarray(scores, dtype=float), bins=bins, range=value_range)
    return edges, counts


def write_histogram_csv(path, edges, counts):
    with open(path, "w") as fh:
        fh.write("bin_left,bin_right,count\n")
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            fh.write(f"{lo!r},{hi!r},{int(c)}\n")


def histogram_svg(edges, counts, title="", width=640, height=320):
    """A minimal standalone SVG bar chart."""
    counts = np.asarray(counts)
    pad = 30
    top = max(int(counts.max()) if counts.size else 0, 1)
    bw = (width - 2 * pad) / max(len(counts), 1)
    bars = []
    for i, c in enumerate(counts):
        h = (height - 2 * pad) * c / top
        x = pad + i * bw
        y = height - pad - h
        bars.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{max(bw - 1, 0.5):.2f}" height="{h:.2f}" fill="#4a78a8"/>')
    label = (
        f'<text x="{pad}" y="{height - 8}" font-size="11">{edges[0]:.3g}</text>'
        f'<text x="{width - pad}" y="{height - 8}" font-size="11" text-anchor="end">{edges[-1]:.3g}</text>'
        f'<text x="{width / 2}" y="18" font-size="13" text-anchor="middle">{title}</text>'
    )
    axis = f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>'
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
        + "".join(bars) + axis + label + "</svg>\n"
    )
