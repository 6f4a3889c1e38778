"""
Dataset directory IO.

Layout written by `gen-data` and read by `train` / `eval`:

    <root>/manifest.json
    <root>/<pair_id>/template.pcf
    <root>/<pair_id>/target.pcf
    <root>/<pair_id>/view_00.fmf ... view_{K-1}.fmf
    <root>/<pair_id>/target.fmf
    <root>/<pair_id>/params.json
    <root>/<pair_id>/masks/mask_00.pgm ...   (optional previews)

Ground-truth masks are not stored; they are re-rendered from the target
cloud on load.
"""

import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Sequence, Union

from core.errors import FormatError
from core.formats import read_pcf, write_pcf, write_pgm

from ..models.config import SyntheticSpec, TrainConfig
from ..utils import logger, settings
from .features import load_feature_map, save_feature_map
from .network import PreparedPair, prepare_pair
from .renderer import mask_image
from .synthetic import SyntheticPair, render_gt_masks

MANIFEST = "manifest.json"
DATASET_FORMAT = "shapeflow-dataset"
DATASET_VERSION = 1


def _dump(data: dict, path: Path) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def save_pair(pair: SyntheticPair, pair_dir: Path, write_masks: bool = False) -> None:
    pair_dir.mkdir(parents=True, exist_ok=True)
    write_pcf(pair.template, pair_dir / "template.pcf")
    write_pcf(pair.target, pair_dir / "target.pcf")
    for k, fmap in enumerate(pair.template_views):
        save_feature_map(fmap, pair_dir / f"view_{k:02d}.fmf")
    save_feature_map(pair.target_view, pair_dir / "target.fmf")
    _dump({"pair_id": pair.pair_id, **pair.params}, pair_dir / "params.json")
    if write_masks:
        for k, mask in enumerate(pair.gt_masks):
            write_pgm(mask_image(mask), pair_dir / "masks" / f"mask_{k:02d}.pgm")


def save_dataset(
    pairs: Sequence[SyntheticPair],
    root,
    spec: SyntheticSpec,
    seed: int,
    sigma_px: float,
    write_masks: bool = False,
) -> Path:
    """Write every pair plus the manifest; byte-identical for identical inputs."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for pair in pairs:
        save_pair(pair, root / pair.pair_id, write_masks)
    _dump({
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "seed": seed,
        "sigma_px": sigma_px,
        "spec": spec.model_dump(mode="json"),
        "pairs": [p.pair_id for p in pairs],
    }, root / MANIFEST)
    logger.info(f"Dataset with {len(pairs)} pairs saved → {root}")
    return root


def read_manifest(root) -> dict:
    path = Path(root) / MANIFEST
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"Cannot read dataset manifest {path}: {e}") from e
    if manifest.get("format") != DATASET_FORMAT:
        raise FormatError(f"{path}: not a {DATASET_FORMAT} manifest")
    return manifest


def load_pair(pair_dir: Path, sigma_px: float) -> SyntheticPair:
    params = json.loads((pair_dir / "params.json").read_text(encoding="utf-8"))
    pair_id = params.pop("pair_id", pair_dir.name)
    views = sorted(pair_dir.glob("view_*.fmf"))
    if not views:
        raise FormatError(f"{pair_dir}: no view_XX.fmf files")
    pair = SyntheticPair(
        pair_id=pair_id,
        template=read_pcf(pair_dir / "template.pcf", cloud_id=f"{pair_id}_template"),
        target=read_pcf(pair_dir / "target.pcf", cloud_id=f"{pair_id}_target"),
        template_views=[load_feature_map(p) for p in views],
        target_view=load_feature_map(pair_dir / "target.fmf"),
        params=params,
    )
    pair.gt_masks = render_gt_masks(pair.target, pair.mask_poses, pair.target_view.intr, sigma_px)
    pair.params["sigma_px"] = sigma_px
    return pair


def load_dataset(root, sigma_px: float = None) -> List[SyntheticPair]:
    """Read a dataset directory; masks are rendered with `sigma_px` (manifest value by default)."""
    root = Path(root)
    manifest = read_manifest(root)
    sigma = sigma_px if sigma_px is not None else float(manifest.get("sigma_px", 1.5))
    with ThreadPoolExecutor(max_workers=settings.NUM_WORKERS) as pool:
        pairs = list(pool.map(lambda pid: load_pair(root / pid, sigma), manifest["pairs"]))
    logger.info(f"Loaded {len(pairs)} pairs from {root}")
    return pairs


def to_prepared(pair: SyntheticPair, config: TrainConfig) -> PreparedPair:
    """Precompute a pair for the model; masks follow the config's splat width."""
    intr = pair.target_view.intr
    masks = pair.gt_masks
    if pair.params.get("sigma_px") != config.sigma_px or len(masks) != len(pair.mask_poses):
        masks = render_gt_masks(pair.target, pair.mask_poses, intr, config.sigma_px)
    return prepare_pair(
        pair.template,
        pair.template_views,
        pair.target_view,
        config,
        target=pair.target,
        gt_masks=[(m, pose, intr) for m, pose in zip(masks, pair.mask_poses)],
        pair_id=pair.pair_id,
    )


def prepare_dataset(pairs: Sequence[SyntheticPair], config: TrainConfig) -> List[PreparedPair]:
    with ThreadPoolExecutor(max_workers=settings.NUM_WORKERS) as pool:
        return list(pool.map(lambda p: to_prepared(p, config), pairs))


def as_prepared(pairs: Sequence[Union[SyntheticPair, PreparedPair]], config: TrainConfig) -> List[PreparedPair]:
    """Prepare the synthetic pairs of a mixed list; already prepared pairs pass through."""
    synthetic = [p for p in pairs if isinstance(p, SyntheticPair)]
    prepared = iter(prepare_dataset(synthetic, config))
    return [next(prepared) if isinstance(p, SyntheticPair) else p for p in pairs]
