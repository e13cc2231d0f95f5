"""Training regimes: source pre-training, target-only, fine-tuning, and
region-paired transfer.

All regimes share one loop: per epoch, gradients are accumulated over
every training window (backward per window, += semantics) and a single
ADAM step is taken, unless a positive batch size splits the epoch. The
transfer regime adds the weighted representation-alignment term: for each
window, the per-region hidden vectors of the target city are pulled
toward the vectors of their matched source regions, weighted by the
clamped correlation of the pair. Both sides of the alignment are computed
with the current parameters and both receive gradients; a frozen-anchor
mode (source side fixed at the pretrained parameters) exists behind a
config flag.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .data import SERVICE_CHANNELS, normalize
from .errors import DataError, NumericalError
from .network import apply_head, encode, init_params
from .optim import AdamState, adam_step
from .tensor import Tensor, gather_regions


@dataclass
class TrainReport:
    pred_losses: list = field(default_factory=list)
    rep_losses: list = field(default_factory=list)
    combined_losses: list = field(default_factory=list)
    wall_clock: float = 0.0

    @property
    def epochs_run(self):
        return len(self.combined_losses)

    def save_csv(self, path):
        with open(path, "w") as f:
            f.write("epoch,pred_loss,rep_loss,combined_loss\n")
            for n in range(self.epochs_run):
                f.write(f"{n},{self.pred_losses[n]!r},{self.rep_losses[n]!r},"
                        f"{self.combined_losses[n]!r}\n")


# ---- loss terms ---------------------------------------------------------

def prediction_loss(preds, truths):
    """Mean squared error over a batch of predictions.

    preds: list of Tensors [W,H,C]; truths: list of arrays of the same
    shape. The mean runs over windows, regions, and channels.
    """
    if len(preds) == 0:
        raise DataError("prediction_loss: empty batch")
    if len(preds) != len(truths):
        raise DataError(f"prediction_loss: {len(preds)} predictions vs "
                        f"{len(truths)} truths")
    total = None
    n = 0
    for p, y in zip(preds, truths):
        y = np.asarray(y, dtype=np.float64)
        if p.shape != y.shape:
            raise DataError(f"prediction_loss: shape mismatch "
                            f"{p.shape} vs {y.shape}")
        d = p - Tensor(y)
        s = (d * d).sum()
        total = s if total is None else total + s
        n += int(np.prod(y.shape))
    return total * (1.0 / n)


def representation_loss(target_vecs, source_vecs, weights):
    """Weighted mean squared distance between matched region vectors.

    target_vecs / source_vecs: Tensors [R, L]; weights: array [R] of
    clamped correlations. Returns mean over regions of w_r * ||delta_r||^2.
    """
    if target_vecs.shape != source_vecs.shape:
        raise DataError(f"representation_loss: shape mismatch "
                        f"{target_vecs.shape} vs {source_vecs.shape}")
    R, L = target_vecs.shape
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (R,):
        raise DataError(f"representation_loss: {R} region pairs but "
                        f"{weights.shape} weights")
    d = target_vecs - source_vecs
    sq = d * d
    wmat = Tensor(np.repeat(weights[:, None], L, axis=1))
    return (sq * wmat).sum() * (1.0 / R)


def combined_loss(pred_loss, rep_loss, w):
    """(1-w) * prediction term + w * representation term."""
    if not 0.0 <= w <= 1.0:
        raise DataError(f"w must lie in [0,1], got {w}")
    if w == 0.0:
        return pred_loss
    if w == 1.0:
        return rep_loss
    return pred_loss * (1.0 - w) + rep_loss * w


# ---- training data preparation ------------------------------------------

def stacked_frames(dataset, stats=None):
    """Normalized service frames stacked channel-last: [T, W, H, C].

    Channel order follows SERVICE_CHANNELS where present, so source and
    target cities stack identically.
    """
    if stats is None:
        stats = dataset.stats
    order = [ch for ch in SERVICE_CHANNELS if ch in dataset.service]
    order += [ch for ch in dataset.channels() if ch not in order]
    norm = [normalize(dataset.service[ch], stats).frames for ch in order]
    return np.stack(norm, axis=-1)


class _WindowSet:
    """Precomputed (X, Y, ext) windows over a normalized frame stack."""

    def __init__(self, frames, ext, k, stride=1):
        T = frames.shape[0]
        if T < k + 1:
            raise DataError(f"need at least {k + 1} frames for input "
                            f"length {k}, got {T}")
        self.frames = frames
        self.ext = ext
        self.k = k
        self.starts = list(range(0, T - k, stride))

    def __len__(self):
        return len(self.starts)

    def inputs(self, n):
        a = self.starts[n]
        k = self.k
        xs = [Tensor(self.frames[a + s]) for s in range(k)]
        e = self.ext[a + k - 1] if self.ext is not None else np.zeros(0)
        return xs, e

    def truth(self, n):
        return self.frames[self.starts[n] + self.k]


# ---- the shared loop ----------------------------------------------------

def _matching_arrays(matching, target_grid):
    coords = target_grid.coords()
    tgt_idx = np.array(coords)
    src_idx = np.array([matching.source_of(c) for c in coords])
    weights = np.array([matching.weight_of(c) for c in coords])
    return tgt_idx, src_idx, weights


def _train(params, windows, config, epochs, source_windows=None,
           matching=None, target_grid=None, anchor_params=None):
    w = config.w if matching is not None else 0.0
    if matching is not None:
        tgt_idx, src_idx, weights = _matching_arrays(matching, target_grid)
    tensors = params.all_tensors()
    state = AdamState(tensors, lr=config.lr)
    report = TrainReport()
    t0 = time.perf_counter()
    n_win = len(windows)
    batch = config.batch_size if config.batch_size > 0 else n_win
    best = np.inf
    stale = 0
    for epoch in range(epochs):
        epoch_pred = 0.0
        epoch_rep = 0.0
        params.zero_grads()
        since_step = 0
        for n in range(n_win):
            xs, ext = windows.inputs(n)
            y = windows.truth(n)
            rep = encode(xs, params)
            pred = apply_head(rep, ext, params)
            d = pred - Tensor(y)
            pred_term = (d * d).sum() * (1.0 / (n_win * y.size))
            loss = pred_term
            rep_term = None
            if matching is not None and w > 0.0:
                sxs, _ = source_windows.inputs(n)
                side = anchor_params if anchor_params is not None else params
                src_rep = encode(sxs, side)
                tv = gather_regions(rep, tgt_idx)
                sv = gather_regions(src_rep, src_idx)
                dd = tv - sv
                wmat = Tensor(weights[:, None] * np.ones((1, rep.shape[2])))
                rep_term = (dd * dd * wmat).sum() * \
                    (1.0 / (n_win * len(weights)))
                loss = combined_loss(pred_term, rep_term, w)
            if not np.isfinite(loss.data):
                raise NumericalError(f"non-finite loss at epoch {epoch}")
            loss.backward()
            epoch_pred += float(pred_term.data)
            if rep_term is not None:
                epoch_rep += float(rep_term.data)
            since_step += 1
            if since_step == batch:
                adam_step(tensors, state, checked=config.checked)
                params.zero_grads()
                since_step = 0
        if since_step:
            adam_step(tensors, state, checked=config.checked)
        combined = (1.0 - w) * epoch_pred + w * epoch_rep if w > 0.0 \
            else epoch_pred
        report.pred_losses.append(epoch_pred)
        report.rep_losses.append(epoch_rep)
        report.combined_losses.append(combined)
        if combined < best - config.early_stop_delta:
            best = combined
            stale = 0
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                break
    report.wall_clock = time.perf_counter() - t0
    return report


# ---- regimes ------------------------------------------------------------

def pretrain_source(source, config, stats=None):
    """Train a fresh network on the source city's full history."""
    frames = stacked_frames(source, stats)
    windows = _WindowSet(frames, source.ext, config.k,
                         stride=config.pretrain_window_stride)
    params = init_params(config, config.seed)
    report = _train(params, windows, config, config.pretrain_epochs)
    return params, report


def train_target_only(target, config, stats=None):
    """Baseline: fresh initialization, target history only."""
    frames = stacked_frames(target, stats)
    windows = _WindowSet(frames, target.ext, config.k)
    params = init_params(config, config.seed)
    report = _train(params, windows, config, config.transfer_epochs)
    return params, report


def regiontrans_train(pretrained, target, source, matching, config,
                      stats=None):
    """Region-paired transfer: continue from the pretrained parameters,
    minimizing the combined prediction + representation objective.

    ``source`` and ``matching`` may be None when w == 0 (plain
    fine-tuning); otherwise the source must cover the target timestamps.
    """
    frames = stacked_frames(target, stats)
    windows = _WindowSet(frames, target.ext, config.k)
    params = pretrained.copy(requires_grad=True)
    source_windows = None
    anchor = None
    if matching is not None and config.w > 0.0:
        if source is None:
            raise DataError("transfer with w > 0 requires source data")
        if source.t_start > target.t_start or \
                source.t_start + source.t_count < target.t_start + \
                target.t_count:
            raise DataError(
                f"source range [{source.t_start}, +{source.t_count}) does "
                f"not cover target range [{target.t_start}, "
                f"+{target.t_count})")
        src_slice = source.sliced(target.t_start, target.t_count)
        src_frames = stacked_frames(src_slice, stats)
        source_windows = _WindowSet(src_frames, src_slice.ext, config.k)
        if config.frozen_anchor:
            anchor = pretrained.copy(requires_grad=False)
        use_matching = matching
    else:
        use_matching = None
    report = _train(params, windows, config, config.transfer_epochs,
                    source_windows=source_windows, matching=use_matching,
                    target_grid=target.grid, anchor_params=anchor)
    return params, report


def finetune(pretrained, target, config, stats=None):
    """Fine-tuning is the transfer regime at w = 0 with no matching."""
    if config.w != 0.0:
        config = _with_w(config, 0.0)
    return regiontrans_train(pretrained, target, None, None, config,
                             stats=stats)


def _with_w(config, w):
    from dataclasses import replace
    return replace(config, w=w)
