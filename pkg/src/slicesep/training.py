"""Optimization and run orchestration for two-slice separation.

A run builds three deep generators (one per slice plus the weight network),
the mixing filters, and trains everything jointly against the two observed
images. All state needed to reproduce a run bit-for-bit is captured in the
configuration text and the seed.
"""

import csv
import dataclasses
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import config_from_file, config_to_text
from .errors import ConfigurationError, NonFiniteGradientError, TrainingDivergedError
from .imaging import (
    ImagePlane,
    destandardize,
    export_display,
    load_raw,
    save_raw,
    standardize,
)
from .model import FilterMode, alpha_from_dip3, synthesize, total_loss
from .networks import build_deep_dip

ADAM_LR = 1e-3
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class Adam:
    """First-order moment optimizer with bias correction.

    One instance owns every trainable tensor of a run: the three generators
    and the mixing filters share a single parameter group. Gradients are
    consumed (reset to None) by each step.
    """

    def __init__(
        self,
        params,
        names=None,
        lr=ADAM_LR,
        beta1=ADAM_BETA1,
        beta2=ADAM_BETA2,
        eps=ADAM_EPS,
    ):
        if lr <= 0:
            raise ConfigurationError(f"learning rate must be > 0, got {lr}")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ConfigurationError(f"betas must lie in [0,1), got {beta1}, {beta2}")
        if eps < 0:
            raise ConfigurationError(f"eps must be >= 0, got {eps}")
        self.params = list(params)
        if names is None:
            names = [f"param{i}" for i in range(len(self.params))]
        if len(names) != len(self.params):
            raise ConfigurationError(
                f"{len(names)} names for {len(self.params)} parameters"
            )
        self.names = list(names)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, epoch=None):
        """Apply one update from the accumulated gradients, then clear them."""
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is not None and not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(self.names[i], epoch)
            m, v = self.m[i], self.v[i]
            m *= self.beta1
            v *= self.beta2
            if g is not None:
                m += (1.0 - self.beta1) * g
                v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        for p in self.params:
            p.grad = None


def _network_parameter_names(net, prefix):
    # must mirror DipNetwork.parameters ordering exactly
    names = []
    for group, label in (
        (net.encoder, "enc"),
        (net.skips, "skip"),
        (net.decoder, "dec"),
        ([net.head], "head"),
    ):
        for i in range(len(group)):
            names.append(f"{prefix}.{label}{i}.kernel")
            names.append(f"{prefix}.{label}{i}.bias")
    return names


def _filter_parameter_names(filt):
    if filt.variant == "single_kernel":
        return ["filter.k1", "filter.k2"]
    return _network_parameter_names(filt.fdip1, "filter1") + _network_parameter_names(
        filt.fdip2, "filter2"
    )


def _build_filter(cfg, h, w):
    if cfg.filter_mode == "single_kernel":
        filt = FilterMode.single_kernel()
        if cfg.lowpass_slice == 1:
            # the averaging kernel seeds whichever ghost the low-pass slice casts
            filt = FilterMode(variant="single_kernel", k1=filt.k2, k2=filt.k1)
        return filt
    return FilterMode.shallow_dip(h, w, seed=cfg.seed)


@dataclass
class RunReport:
    """Everything a finished (or epoch-0) run produced."""

    config_text: str
    seed: int
    loss_series: list
    alpha_series: list
    alpha1: float
    alpha2: float
    y1: ImagePlane
    y2: ImagePlane
    i1_model: ImagePlane
    i2_model: ImagePlane
    norm1: object
    norm2: object
    checkpoint_epochs: list = field(default_factory=list)
    wall_seconds: float = 0.0
    metrics: object = None

    @property
    def digest(self):
        """Hash of the deterministic content; wall time is deliberately outside."""
        h = hashlib.sha256()
        h.update(self.config_text.encode("utf-8"))
        h.update(np.asarray([self.seed], np.int64).tobytes())
        rows = [
            (b.data_term, b.exclusion_term, b.alpha_anchor_term, b.total)
            for b in self.loss_series
        ]
        h.update(np.asarray(rows, np.float64).tobytes())
        h.update(np.asarray(self.alpha_series, np.float64).tobytes())
        h.update(np.asarray([self.alpha1, self.alpha2], np.float64).tobytes())
        for img in (self.y1, self.y2, self.i1_model, self.i2_model):
            h.update(np.ascontiguousarray(img.pixels, dtype=np.float64).tobytes())
        return h.hexdigest()


def _write_checkpoint(directory, epoch, images, alphas, breakdown):
    ck = os.path.join(directory, "checkpoints", f"epoch_{epoch:05d}")
    os.makedirs(ck, exist_ok=True)
    for name, img in images.items():
        save_raw(img, os.path.join(ck, name))
    snapshot = {
        "epoch": epoch,
        "alpha1": alphas[0],
        "alpha2": alphas[1],
        "total_loss": breakdown.total,
    }
    with open(os.path.join(ck, "snapshot.json"), "w", encoding="utf-8") as fh:
        json.dump(snapshot, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_separation(cfg, i1_obs, i2_obs, checkpoint_dir=None):
    """Train the full generator stack on one observation pair.

    Periodic checkpoints land under `checkpoint_dir` when given, so an
    aborted run leaves its most recent state on disk. The returned report
    holds de-standardized outputs on the input images' intensity scale.
    """
    if i1_obs.pixels.shape != i2_obs.pixels.shape:
        raise ConfigurationError(
            f"observations differ in shape: {i1_obs.pixels.shape} vs {i2_obs.pixels.shape}"
        )
    started = time.perf_counter()
    h, w = i1_obs.pixels.shape
    s1, norm1 = standardize(i1_obs)
    s2, norm2 = standardize(i2_obs)
    target1 = T.Tensor(s1.pixels[None].astype(np.float64))
    target2 = T.Tensor(s2.pixels[None].astype(np.float64))

    dip1 = build_deep_dip(
        h, w, seed=cfg.seed, label="dip1",
        depth=cfg.depth, channels=cfg.channels, skip_channels=cfg.skip_channels,
    )
    dip2 = build_deep_dip(
        h, w, seed=cfg.seed, label="dip2",
        depth=cfg.depth, channels=cfg.channels, skip_channels=cfg.skip_channels,
    )
    dip3 = build_deep_dip(
        h, w, out_channels=2, seed=cfg.seed, label="dip3",
        depth=cfg.depth, channels=cfg.channels, skip_channels=cfg.skip_channels,
    )
    filt = _build_filter(cfg, h, w)

    params = dip1.parameters + dip2.parameters + dip3.parameters + filt.parameters()
    names = (
        _network_parameter_names(dip1, "dip1")
        + _network_parameter_names(dip2, "dip2")
        + _network_parameter_names(dip3, "dip3")
        + _filter_parameter_names(filt)
    )
    opt = Adam(params, names=names, lr=cfg.learning_rate)

    def forward():
        y1 = dip1.forward()
        y2 = dip2.forward()
        alphas = alpha_from_dip3(dip3.forward())
        i1, i2 = synthesize(y1, y2, alphas, filt)
        return y1, y2, alphas, i1, i2

    loss_series = []
    alpha_series = []
    checkpoint_epochs = []
    for epoch in range(1, cfg.epochs + 1):
        y1, y2, alphas, i1, i2 = forward()
        loss, breakdown = total_loss(
            i1, i2, target1, target2, y1, y2, alphas, cfg.gamma_excl, epoch
        )
        if not np.isfinite(breakdown.total):
            raise TrainingDivergedError(epoch, f"total loss = {breakdown.total!r}")
        loss.backward()
        opt.step(epoch)
        loss_series.append(breakdown)
        alpha_series.append(alphas.as_floats())
        if checkpoint_dir is not None and epoch % cfg.checkpoint_interval == 0:
            images = _snapshot_images(y1, y2, i1, i2, norm1, norm2, i1_obs)
            _write_checkpoint(
                checkpoint_dir, epoch, images, alpha_series[-1], breakdown
            )
            checkpoint_epochs.append(epoch)

    y1, y2, alphas, i1, i2 = forward()
    a1, a2 = alphas.as_floats()
    images = _snapshot_images(y1, y2, i1, i2, norm1, norm2, i1_obs)
    return RunReport(
        config_text=config_to_text(cfg),
        seed=cfg.seed,
        loss_series=loss_series,
        alpha_series=alpha_series,
        alpha1=a1,
        alpha2=a2,
        y1=images["y1"],
        y2=images["y2"],
        i1_model=images["i1_model"],
        i2_model=images["i2_model"],
        norm1=norm1,
        norm2=norm2,
        checkpoint_epochs=checkpoint_epochs,
        wall_seconds=time.perf_counter() - started,
    )


def _snapshot_images(y1, y2, i1, i2, norm1, norm2, reference):
    """De-standardize the four generated planes onto the observation scale."""
    size = reference.pixel_size_nm

    def plane(t, rec, label):
        img = ImagePlane(t.data[0].copy(), pixel_size_nm=size, label=label)
        return destandardize(img, rec)

    return {
        "y1": plane(y1, norm1, "y1"),
        "y2": plane(y2, norm2, "y2"),
        "i1_model": plane(i1, norm1, "i1_model"),
        "i2_model": plane(i2, norm2, "i2_model"),
    }


def prepare_run_dir(path, force=False):
    """Create the run directory, refusing to reuse one unless forced."""
    if os.path.exists(path) and os.listdir(path) and not force:
        raise ConfigurationError(
            f"run directory {path} already exists; pass force to overwrite"
        )
    os.makedirs(path, exist_ok=True)
    return path


def persist_run(report, out_dir, render_figures=True):
    """Write the run directory: config, loss table, images, report, figures."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(report.config_text)

    with open(os.path.join(out_dir, "losses.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["epoch", "data_term", "exclusion_term", "alpha_anchor_term", "total",
             "alpha1", "alpha2"]
        )
        for epoch, (b, (a1, a2)) in enumerate(
            zip(report.loss_series, report.alpha_series), start=1
        ):
            writer.writerow(
                [epoch, repr(b.data_term), repr(b.exclusion_term),
                 repr(b.alpha_anchor_term), repr(b.total), repr(a1), repr(a2)]
            )

    outputs = {}
    for name in ("y1", "y2", "i1_model", "i2_model"):
        img = getattr(report, name)
        save_raw(img, os.path.join(out_dir, name))
        export_display(img, os.path.join(out_dir, name + ".pgm"))
        outputs[name] = name + ".f32"

    figure_paths = []
    if render_figures:
        from . import figures  # deferred: compute paths never touch the plotting stack

        figure_paths.append(
            figures.render_loss_curves(report, os.path.join(out_dir, "loss_curves.png"))
        )
        figure_paths.append(
            figures.render_separation_panel(
                report, os.path.join(out_dir, "separation.png")
            )
        )

    payload = {
        "alpha1": report.alpha1,
        "alpha2": report.alpha2,
        "checkpoint_epochs": report.checkpoint_epochs,
        "config": report.config_text,
        "digest": report.digest,
        "epochs_run": len(report.loss_series),
        "figures": [os.path.basename(p) for p in figure_paths],
        "final_loss": dataclasses.asdict(report.loss_series[-1])
        if report.loss_series
        else None,
        "metrics": _metrics_payload(report.metrics),
        "normalization": {
            "input1": {"mean": report.norm1.mean, "std": report.norm1.std},
            "input2": {"mean": report.norm2.mean, "std": report.norm2.std},
        },
        "outputs": outputs,
        "seed": report.seed,
        "wall_seconds": report.wall_seconds,
    }
    report_path = os.path.join(out_dir, "report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report_path


def _metrics_payload(metrics):
    if metrics is None:
        return None
    payload = dataclasses.asdict(metrics)
    payload["slices_confused"] = metrics.slices_confused
    return payload


def regenerate(run_dir):
    """Re-run a persisted run from its own config; inputs reload from disk."""
    cfg = config_from_file(os.path.join(run_dir, "config.txt"))
    i1 = load_raw(cfg.input1)
    i2 = load_raw(cfg.input2)
    return run_separation(cfg, i1, i2)


@dataclass
class UncertaintyReport:
    """Spread of the second recovered slice across repeated runs, per weight."""

    config_text: str
    gammas: tuple
    n_runs: int
    seeds: tuple
    std_maps: list
    mean_std_series: list
    wall_seconds: float = 0.0


def _derive_run_seeds(base_seed, n_runs):
    seeds = []
    for r in range(n_runs):
        state = np.random.SeedSequence([base_seed, r]).generate_state(1, np.uint32)
        seeds.append(int(state[0]))
    return seeds


def _uncertainty_worker(args):
    cfg, i1_obs, i2_obs = args
    report = run_separation(cfg, i1_obs, i2_obs)
    return report.y2


def run_uncertainty(
    cfg,
    i1_obs,
    i2_obs,
    n_runs,
    gammas,
    out_dir=None,
    forced_seeds=None,
    n_workers=1,
):
    """Repeat the separation per exclusion weight and map where runs disagree.

    The same seed list is reused across weights so the per-weight spread is
    compared on paired initializations. When `out_dir` is given, each
    completed weight's map is persisted immediately, so partial results
    survive a failure in a later run.
    """
    if n_runs < 2:
        raise ConfigurationError(f"n_runs must be >= 2, got {n_runs}")
    if not gammas:
        raise ConfigurationError("gammas must be non-empty")
    if any(g < 0 for g in gammas):
        raise ConfigurationError(f"gammas must be >= 0, got {list(gammas)}")
    started = time.perf_counter()
    if forced_seeds is not None:
        if len(forced_seeds) != n_runs:
            raise ConfigurationError(
                f"{len(forced_seeds)} forced seeds for {n_runs} runs"
            )
        seeds = [int(s) for s in forced_seeds]
    else:
        seeds = _derive_run_seeds(cfg.seed, n_runs)

    jobs = []
    for gamma in gammas:
        for seed in seeds:
            run_cfg = dataclasses.replace(cfg, gamma_excl=float(gamma), seed=seed)
            jobs.append((run_cfg, i1_obs, i2_obs))

    std_maps = []
    mean_series = []
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    try:
        if n_workers > 1:
            with ProcessPoolExecutor(max_workers=n_workers) as pool:
                y2_planes = list(pool.map(_uncertainty_worker, jobs))
            grouped = [
                y2_planes[gi * n_runs : (gi + 1) * n_runs]
                for gi in range(len(gammas))
            ]
            for gi, gamma in enumerate(gammas):
                _collect_gamma(
                    gamma, grouped[gi], std_maps, mean_series, out_dir
                )
        else:
            for gi, gamma in enumerate(gammas):
                planes = [
                    _uncertainty_worker(jobs[gi * n_runs + r])
                    for r in range(n_runs)
                ]
                _collect_gamma(gamma, planes, std_maps, mean_series, out_dir)
    finally:
        if out_dir is not None and mean_series:
            _write_mean_series(out_dir, gammas[: len(mean_series)], mean_series)

    report = UncertaintyReport(
        config_text=config_to_text(cfg),
        gammas=tuple(float(g) for g in gammas),
        n_runs=n_runs,
        seeds=tuple(seeds),
        std_maps=std_maps,
        mean_std_series=mean_series,
        wall_seconds=time.perf_counter() - started,
    )
    return report


def _gamma_map_name(gamma):
    return f"std_map_gamma_{gamma:g}"


def _collect_gamma(gamma, y2_planes, std_maps, mean_series, out_dir):
    from .analysis import std_map

    spread = std_map(y2_planes)
    img = ImagePlane(
        spread.pixels,
        pixel_size_nm=spread.pixel_size_nm,
        label=_gamma_map_name(gamma),
    )
    std_maps.append(img)
    mean_series.append(float(spread.pixels.mean()))
    if out_dir is not None:
        save_raw(img, os.path.join(out_dir, img.label))
        export_display(img, os.path.join(out_dir, img.label + ".pgm"))


def _write_mean_series(out_dir, gammas, mean_series):
    path = os.path.join(out_dir, "mean_std.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["gamma_excl", "mean_std"])
        for gamma, value in zip(gammas, mean_series):
            writer.writerow([repr(float(gamma)), repr(float(value))])
    return path


def persist_uncertainty(report, out_dir, render_figures=True):
    """Write the uncertainty directory: per-weight maps, series, figure."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(report.config_text)
    for img in report.std_maps:
        save_raw(img, os.path.join(out_dir, img.label))
        export_display(img, os.path.join(out_dir, img.label + ".pgm"))
    _write_mean_series(out_dir, report.gammas, report.mean_std_series)
    figure_paths = []
    if render_figures:
        from . import figures  # deferred: compute paths never touch the plotting stack

        figure_paths.append(
            figures.render_uncertainty(report, os.path.join(out_dir, "uncertainty.png"))
        )
    payload = {
        "gammas": list(report.gammas),
        "mean_std_series": report.mean_std_series,
        "n_runs": report.n_runs,
        "seeds": list(report.seeds),
        "std_maps": [img.label + ".f32" for img in report.std_maps],
        "figures": [os.path.basename(p) for p in figure_paths],
        "wall_seconds": report.wall_seconds,
    }
    path = os.path.join(out_dir, "report.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
