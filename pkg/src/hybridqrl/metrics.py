"""Learning-curve metrics: smoothing, ensemble selection, normalized AULC.

Conventions:

* smoothing is a trailing mean over up to ``window`` episodes (shorter at the
  start, never looking ahead);
* rewards normalize against a threshold of ``threshold_pct`` percent of the
  environment's optimal return, capped at 1, so "solved" plateaus integrate
  to 1 regardless of environment scale;
* the threshold episode ``e_p`` is the first episode whose smoothed
  normalized reward reaches 1;
* the area under the learning curve (AULC) is the trapezoidal integral of
  the smoothed normalized curve over ``[0, e_p]`` divided by the window
  length, giving a value in [0, 1] (1 = instant learning).
"""
from __future__ import annotations

import numpy as np

__all__ = ["smooth_trailing", "normalize_curve", "threshold_episode", "aulc",
           "select_top", "ensemble_curve", "ensemble_metrics",
           "compare_methods"]


def smooth_trailing(rewards: np.ndarray, window: int = 100) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1:
        raise ValueError(f"expected 1-D rewards, got shape {r.shape}")
    csum = np.concatenate([[0.0], np.cumsum(r)])
    n = len(r)
    out = np.empty(n)
    for t in range(n):
        lo = max(0, t - window + 1)
        out[t] = (csum[t + 1] - csum[lo]) / (t + 1 - lo)
    return out


def normalize_curve(rewards: np.ndarray, optimal: float,
                    threshold_pct: float = 90.0) -> np.ndarray:
    """min(1, r / (threshold_pct/100 * optimal)), elementwise."""
    thresh = threshold_pct / 100.0 * optimal
    if thresh <= 0:
        raise ValueError("optimal return and threshold must be positive")
    return np.minimum(1.0, np.asarray(rewards, dtype=np.float64) / thresh)


def threshold_episode(normalized_smoothed: np.ndarray) -> int | None:
    """First 1-based episode index where the curve reaches 1; None if never."""
    hits = np.flatnonzero(normalized_smoothed >= 1.0)
    return int(hits[0]) + 1 if hits.size else None


def aulc(normalized_smoothed: np.ndarray, end: int | None = None) -> float:
    """Trapezoidal area of the curve over episodes [1, end], divided by the
    span.  ``end`` defaults to the full curve; a single point returns its
    own value."""
    y = np.asarray(normalized_smoothed, dtype=np.float64)
    if end is None:
        end = len(y)
    if not 1 <= end <= len(y):
        raise ValueError(f"end={end} outside curve of length {len(y)}")
    if end == 1:
        return float(y[0])
    return float(np.trapezoid(y[:end]) / (end - 1))


def select_top(curves: list[np.ndarray], k: int = 5,
               window: int = 100) -> list[int]:
    """Indices of the ``k`` best curves by final trailing-window mean reward.

    Ties resolve toward the lower index (earlier seed); the returned indices
    are sorted ascending for determinism downstream.
    """
    scores = []
    for i, c in enumerate(curves):
        c = np.asarray(c, dtype=np.float64)
        tail = c[-min(window, len(c)):]
        scores.append((-tail.mean(), i))
    scores.sort()
    chosen = [i for _, i in scores[:k]]
    return sorted(chosen)


def ensemble_curve(curves: list[np.ndarray], indices=None) -> np.ndarray:
    """Mean episode-reward curve over the selected members (cropped to the
    shortest)."""
    if indices is None:
        indices = range(len(curves))
    picked = [np.asarray(curves[i], dtype=np.float64) for i in indices]
    n = min(len(c) for c in picked)
    return np.mean([c[:n] for c in picked], axis=0)


def ensemble_metrics(curves: list[np.ndarray], optimal: float,
                     k: int = 5, window: int = 100,
                     threshold_pct: float = 90.0,
                     ep_mode: str = "best") -> dict:
    """Selection + smoothing + normalization + AULC for one ensemble.

    ``ep_mode`` picks the reference episode for the integration window:
    'best' uses the earliest individual threshold crossing among the selected
    members; 'ensemble' uses the crossing of the mean curve.  Without any
    crossing the full budget is used.
    """
    if ep_mode not in ("best", "ensemble"):
        raise ValueError(f"unknown ep_mode {ep_mode!r}")
    idx = select_top(curves, k=k, window=window)
    mean_raw = ensemble_curve(curves, idx)
    mean_norm = normalize_curve(smooth_trailing(mean_raw, window), optimal,
                                threshold_pct)
    member_eps = []
    for i in idx:
        norm = normalize_curve(smooth_trailing(np.asarray(curves[i]), window),
                               optimal, threshold_pct)
        member_eps.append(threshold_episode(norm))
    if ep_mode == "best":
        crossed = [e for e in member_eps if e is not None]
        e_p = min(crossed) if crossed else None
    else:
        e_p = threshold_episode(mean_norm)
    end = e_p if e_p is not None else len(mean_norm)
    return {
        "selected": idx,
        "member_threshold_episodes": member_eps,
        "threshold_episode": e_p,
        "aulc": aulc(mean_norm, end),
        "mean_curve": mean_raw,
        "mean_normalized_smoothed": mean_norm,
    }


def compare_methods(method_curves: dict[str, list[np.ndarray]],
                    optimal: float, k: int = 5, window: int = 100,
                    threshold_pct: float = 90.0,
                    ep_mode: str = "best") -> dict:
    """Evaluate several ensembles on one shared integration window.

    The window ends at the smallest threshold episode across methods (full
    budget if nobody crosses), so faster learners are never penalized for
    also being evaluated further."""
    per = {name: ensemble_metrics(c, optimal, k, window, threshold_pct, ep_mode)
           for name, c in method_curves.items()}
    eps = [m["threshold_episode"] for m in per.values()]
    lengths = [len(m["mean_normalized_smoothed"]) for m in per.values()]
    crossed = [e for e in eps if e is not None]
    shared = min(crossed) if crossed else min(lengths)
    shared = min([shared] + lengths)
    out = {"shared_end": shared, "methods": {}}
    for name, m in per.items():
        out["methods"][name] = {
            "aulc": aulc(m["mean_normalized_smoothed"], shared),
            "threshold_episode": m["threshold_episode"],
            "selected": m["selected"],
        }
    return out
