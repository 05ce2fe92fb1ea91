"""End-to-end orchestration of the progressive enhance-deblur-denoise loop.

A run executes: anchor generation, one blind initial deblur, then per
round noise-aware reconstruction, rendering, enhancement-parameter search
(skipped on the final round, where its output would be unused), and
prior-guided deblurring for the next round. Every inter-stage image and
checkpoint is stabilized to float32 before use so that an interrupted run
resumed from disk is bitwise identical to an uninterrupted one.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import devo, noisefield, splatter, trainer
from .deblur import DeblurStage, guided_deblur, initial_deblur
from .degrade import load_cameras
from .devo import DEConfig
from .enhance import EnhanceParams, enhance, log_interpolate
from .imagekit import psnr, read_image, ssim, write_image, write_metrics_csv
from .noisefield import NoiseMLP
from .splatter import GaussianCloud
from .trainer import TrainConfig, TrainView

CHECKPOINT_MAGIC = b"FGCK"
CHECKPOINT_VERSION = 1

SCENE_BOX = (np.array([-1.2, -1.2, -1.2]), np.array([1.2, 1.2, 1.2]))


class PipelineError(RuntimeError):
    pass


def _f32(img: np.ndarray) -> np.ndarray:
    """Persistence-stable rounding: every inter-stage artifact passes through
    float32 exactly once, whether or not it was reloaded from disk."""
    return np.float64(np.float32(img))


@dataclass(frozen=True)
class PipelineConfig:
    rounds: int = 2
    p0: EnhanceParams = EnhanceParams(0.1, 1.0)
    # exact inverse of the default darkening (gain 0.25, gamma 1.25):
    # ((1/0.25)^1.25 * (0.25 v)^1.25)^(1/1.25) == v on the unsaturated range
    pn: EnhanceParams = EnhanceParams(4.0**1.25 - 1.0, 0.8)
    de: DEConfig = DEConfig()
    train: TrainConfig = TrainConfig()
    deblur: DeblurStage = DeblurStage()
    splat_count: int = 120
    enable_pie: bool = True
    enable_ne: bool = True
    seed: int = 0
    output_dir: str = "run"

    def validate(self) -> "PipelineConfig":
        if self.rounds < 1:
            raise PipelineError(f"need at least one round, got {self.rounds}")
        self.pn.validate()
        if self.p0.alpha <= 0:
            raise PipelineError("initial alpha must be positive for log interpolation")
        return self

    @property
    def effective_rounds(self) -> int:
        return self.rounds if self.enable_pie else 1

    def as_dict(self) -> dict:
        return {
            "rounds": self.rounds,
            "p0": self.p0.as_dict(),
            "pn": self.pn.as_dict(),
            "de": self.de.as_dict(),
            "train": self.train.as_dict(),
            "deblur": self.deblur.as_dict(),
            "splat_count": self.splat_count,
            "enable_pie": self.enable_pie,
            "enable_ne": self.enable_ne,
            "seed": self.seed,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        d["p0"] = EnhanceParams.from_dict(d["p0"])
        d["pn"] = EnhanceParams.from_dict(d["pn"])
        d["de"] = DEConfig.from_dict(d["de"])
        d["train"] = TrainConfig.from_dict(d["train"])
        d["deblur"] = DeblurStage.from_dict(d["deblur"])
        return cls(**d)


@dataclass
class RunRecord:
    out_dir: Path
    config: PipelineConfig
    dataset_dir: str
    completed_rounds: int
    steps: list = field(default_factory=list)
    recovered_params: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    final_done: bool = False

    def manifest(self) -> dict:
        return {
            "config": self.config.as_dict(),
            "dataset_dir": str(self.dataset_dir),
            "completed_rounds": self.completed_rounds,
            "steps": self.steps,
            "recovered_params": {k: p.as_dict() for k, p in self.recovered_params.items()},
            "timings": self.timings,
            "final_done": self.final_done,
        }

    def save(self) -> None:
        with open(self.out_dir / "run_manifest.json", "w") as f:
            json.dump(self.manifest(), f, indent=1)
        with open(self.out_dir / "steps.log", "w") as f:
            f.write("".join(s + "\n" for s in self.steps))

    @classmethod
    def load(cls, out_dir) -> "RunRecord":
        out_dir = Path(out_dir)
        path = out_dir / "run_manifest.json"
        if not path.exists():
            raise PipelineError(f"no run manifest in {out_dir}")
        try:
            with open(path) as f:
                m = json.load(f)
            cfg = PipelineConfig.from_dict(m["config"])
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise PipelineError(f"corrupt run manifest {path}: {e}") from e
        return cls(
            out_dir=out_dir,
            config=cfg,
            dataset_dir=m["dataset_dir"],
            completed_rounds=int(m["completed_rounds"]),
            steps=list(m["steps"]),
            recovered_params={k: EnhanceParams.from_dict(v) for k, v in m["recovered_params"].items()},
            timings=dict(m["timings"]),
            final_done=bool(m["final_done"]),
        )


# ---------------------------------------------------------------------------
# Checkpoints: header + splat segment + noise segment + JSON metadata


def save_checkpoint(path, cloud: GaussianCloud, mlp: NoiseMLP, meta: dict) -> None:
    cloud_bytes = splatter.cloud_to_bytes(cloud)
    mlp_bytes = noisefield.mlp_to_bytes(mlp)
    meta_bytes = json.dumps(meta).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        for blob in (cloud_bytes, mlp_bytes, meta_bytes):
            f.write(struct.pack("<I", len(blob)))
            f.write(blob)


def load_checkpoint(path):
    path = Path(path)
    try:
        data = path.read_bytes()
        if data[:4] != CHECKPOINT_MAGIC:
            raise PipelineError(f"bad checkpoint magic in {path}")
        (version,) = struct.unpack_from("<I", data, 4)
        if version != CHECKPOINT_VERSION:
            raise PipelineError(f"unsupported checkpoint version {version} in {path}")
        offset = 8
        blobs = []
        for _ in range(3):
            (n,) = struct.unpack_from("<I", data, offset)
            offset += 4
            blobs.append(data[offset : offset + n])
            offset += n
        cloud = splatter.cloud_from_bytes(blobs[0])
        mlp = noisefield.mlp_from_bytes(blobs[1])
        meta = json.loads(blobs[2].decode("utf-8"))
    except (struct.error, ValueError, OSError) as e:
        raise PipelineError(f"corrupt checkpoint {path}: {e}") from e
    if "background" in meta:
        cloud.background = np.asarray(meta["background"], dtype=np.float64)
    return cloud, mlp, meta


def _stabilized_cloud(cloud: GaussianCloud) -> GaussianCloud:
    """Round-trip through the f32 checkpoint encoding (resume stability)."""
    bg = cloud.background.copy()
    out = splatter.cloud_from_bytes(splatter.cloud_to_bytes(cloud))
    out.background = bg
    return out


def _derived_seed(*parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _load_dataset(dataset_dir):
    dataset_dir = Path(dataset_dir)
    manifest_path = dataset_dir / "manifest.json"
    if not manifest_path.exists():
        raise PipelineError(f"no dataset manifest in {dataset_dir}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    cameras = load_cameras(dataset_dir / "cameras.json")
    train_ids = manifest.get("train_views", list(range(len(cameras))))
    low = [
        _f32(read_image(dataset_dir / manifest["views"][i]["degraded"])) for i in train_ids
    ]
    return manifest, cameras, train_ids, low


def _write_stage_images(dir_path: Path, images) -> None:
    dir_path.mkdir(parents=True, exist_ok=True)
    for v, img in enumerate(images):
        write_image(dir_path / f"{v:04d}.pfm", img)
        write_image(dir_path / f"{v:04d}.png", np.clip(img, 0.0, 1.0))


def _read_stage_images(dir_path: Path, n: int):
    out = []
    for v in range(n):
        path = dir_path / f"{v:04d}.pfm"
        if not path.exists():
            raise PipelineError(f"missing stage artifact {path}")
        out.append(read_image(path))
    return out


def run(dataset_dir, cfg: PipelineConfig, stop_after_round: int | None = None) -> RunRecord:
    """Execute the full loop from scratch; see `resume` for continuation."""
    cfg.validate()
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    record = RunRecord(
        out_dir=out_dir, config=cfg, dataset_dir=str(dataset_dir), completed_rounds=0
    )
    return _execute(record, start_round=1, stop_after_round=stop_after_round)


def resume(run_dir) -> RunRecord:
    """Continue a persisted run from its first incomplete round."""
    record = RunRecord.load(run_dir)
    n = record.config.effective_rounds
    if record.final_done and record.completed_rounds >= n:
        return record
    if record.completed_rounds < 1:
        raise PipelineError(f"{run_dir} has no completed round to resume from")
    return _execute(record, start_round=record.completed_rounds + 1, stop_after_round=None)


def _execute(record: RunRecord, start_round: int, stop_after_round) -> RunRecord:
    cfg = record.config
    out_dir = record.out_dir
    n_rounds = cfg.effective_rounds
    manifest, cameras, train_ids, low = _load_dataset(record.dataset_dir)
    train_cams = [cameras[i] for i in train_ids]
    n_views = len(low)
    t_start = time.perf_counter()

    def log(step: str):
        record.steps.append(step)

    # Step 1: anchors (deterministic; recomputed on resume)
    if cfg.enable_pie:
        schedule = log_interpolate(cfg.p0, cfg.pn, n_rounds)
    else:
        schedule = [cfg.pn]
    anchors = [[_f32(enhance(img, p)) for img in low] for p in schedule]
    if start_round == 1:
        log("STEP1 anchors")
        for i, imgs in enumerate(anchors, start=1):
            _write_stage_images(out_dir / "anchors" / f"h{i:02d}", imgs)

        # Step 2: blind initial deblur
        log("STEP2 initial-deblur")
        deblurred = [_f32(initial_deblur(img, cfg.deblur)) for img in anchors[0]]
        _write_stage_images(out_dir / "rounds" / "01" / "deblurred", deblurred)
        record.save()
    else:
        deblurred = _read_stage_images(
            out_dir / "rounds" / f"{start_round:02d}" / "deblurred", n_views
        )

    cloud = None
    mlp = None
    for i in range(start_round, n_rounds + 1):
        round_dir = out_dir / "rounds" / f"{i:02d}"
        round_dir.mkdir(parents=True, exist_ok=True)

        # Step 3: noise-aware reconstruction + renders. Each round rebuilds
        # the radiance field from scratch against that round's deblurred
        # images: carrying geometry fitted to the previous (dimmer, more
        # degraded) targets overfits the sparse training views.
        log(f"STEP3 round={i} reconstruct")
        cloud = splatter.init_cloud(count=cfg.splat_count, seed=cfg.seed, box=SCENE_BOX)
        # start at the data's mean color: a mismatched initial brightness
        # is a degenerate offset the noise field would otherwise absorb,
        # leaving the splats permanently off by that constant
        cloud.colors[:] = np.mean([img.mean(axis=(0, 1)) for img in deblurred], axis=0)
        # same MLP init every round: only the data changes between rounds
        mlp = NoiseMLP(seed=_derived_seed(cfg.seed, 7))
        views = [TrainView(img, cam) for img, cam in zip(deblurred, train_cams)]
        cloud, mlp, history = trainer.train(cloud, mlp, views, cfg.train, ne_enabled=cfg.enable_ne)
        save_checkpoint(
            round_dir / "checkpoint.bin",
            cloud,
            mlp,
            {
                "round": i,
                "iterations": len(history),
                "background": [float(v) for v in cloud.background],
                # output_dir excluded: checkpoints from identical runs in
                # different directories must be byte-identical
                "config": {k: v for k, v in cfg.as_dict().items() if k != "output_dir"},
            },
        )
        with open(round_dir / "loss.csv", "w") as f:
            f.write("iteration,loss\n")
            for it, v in enumerate(history):
                f.write(f"{it},{v:.9g}\n")
        # training state continues from the checkpoint encoding from here on
        cloud = _stabilized_cloud(cloud)
        mlp = noisefield.mlp_from_bytes(noisefield.mlp_to_bytes(mlp))
        renders = [_f32(img) for img in trainer.render_views(cloud, mlp, train_cams)]
        _write_stage_images(round_dir / "renders", renders)

        if i < n_rounds:
            # Step 4: enhancement parameter recovery against the next anchor
            log(f"STEP4 round={i} search-params")
            alphas, gammas = [], []
            for v in range(n_views):
                de_cfg = replace(cfg.de, seed=_derived_seed(cfg.seed, 11, i, v))
                result = devo.search_params(renders[v], anchors[i][v], de_cfg)
                alphas.append(result.params.alpha)
                gammas.append(result.params.gamma)
            p_r = EnhanceParams(float(np.mean(alphas)), float(np.mean(gammas)))
            record.recovered_params[str(i)] = p_r
            with open(round_dir / "params_recovered.json", "w") as f:
                json.dump(p_r.as_dict(), f)
            reenhanced = [_f32(enhance(img, p_r)) for img in renders]
            _write_stage_images(round_dir / "reenhanced", reenhanced)

            # Step 5: prior-guided deblur of the next anchor
            log(f"STEP5 round={i} guided-deblur")
            deblurred = [
                _f32(guided_deblur(anchors[i][v], reenhanced[v], cfg.deblur))
                for v in range(n_views)
            ]
            _write_stage_images(out_dir / "rounds" / f"{i + 1:02d}" / "deblurred", deblurred)
        else:
            log(f"STEP4 round={i} skipped (final round)")
            log(f"STEP5 round={i} skipped (final round)")

        record.completed_rounds = i
        record.save()
        if stop_after_round is not None and i >= stop_after_round:
            return record

    if start_round > n_rounds:
        # all rounds were already complete; reload the final model
        cloud, mlp, _ = load_checkpoint(out_dir / "rounds" / f"{n_rounds:02d}" / "checkpoint.bin")

    # Step 6: final renders
    log("STEP6 final-render")
    final = trainer.render_views(cloud, mlp, train_cams)
    _write_stage_images(out_dir / "final", final)
    record.final_done = True
    record.timings["total_s"] = record.timings.get("total_s", 0.0) + (
        time.perf_counter() - t_start
    )
    record.save()
    return record


def evaluate(record: RunRecord, gt_dir, novel_cameras, view_ids=None, csv_path=None):
    """Render novel views from the final checkpoint and score against GT.

    `novel_cameras` is a list of cameras; `view_ids` names the GT files
    (<id>.png in gt_dir), defaulting to 0..len-1. Returns the metric rows
    and writes metrics.csv into the run directory.
    """
    gt_dir = Path(gt_dir)
    n = record.config.effective_rounds
    ckpt = record.out_dir / "rounds" / f"{n:02d}" / "checkpoint.bin"
    cloud, mlp, _ = load_checkpoint(ckpt)
    renders = trainer.render_views(cloud, mlp, novel_cameras)
    if view_ids is None:
        view_ids = list(range(len(novel_cameras)))
    rows = []
    for vid, img in zip(view_ids, renders):
        gt_path = gt_dir / f"{int(vid):04d}.png"
        if not gt_path.exists():
            raise PipelineError(f"missing ground truth view {gt_path}")
        gt = read_image(gt_path)
        rows.append((vid, psnr(img, gt), ssim(img, gt)))
    out_csv = Path(csv_path) if csv_path else record.out_dir / "metrics.csv"
    write_metrics_csv(out_csv, rows)
    return rows
