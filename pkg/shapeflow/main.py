"""
ShapeFlow Command Line
======================
    python -m shapeflow.main gen-data --family superquadric --count 64 --seed 0 --out data/train
    python -m shapeflow.main train --config cfg.json --data data/train --out runs/model.gdck
    python -m shapeflow.main eval --ckpt runs/model.gdck --data data/test --out runs/eval.tsv
    python -m shapeflow.main infer --ckpt runs/model.gdck --template t.pcf --views v0.fmf v1.fmf \\
        --target-feat obs.fmf --out deformed.pcf
    python -m shapeflow.main transfer --field deformed_field.pcf --template t.pcf --contact c.txt --out warped.pcf
    python -m shapeflow.main render --cloud deformed.pcf --pose cam.txt --out view.pgm
    python -m shapeflow.main gradcheck --config tiny.json

Exit status: 0 on success, 2 on invalid input (config, files, shapes),
1 on runtime failures (divergence, I/O, failed gradient check).
"""

import argparse
import json
import sys
from pathlib import Path

from core.errors import ConfigError, DivergedError, ShapeFlowError
from core.formats import read_contact, read_keypoints, read_pcf, read_pose, write_contact, write_keypoints, write_pcf

from .models.config import ShapeFamily, SyntheticSpec, TrainConfig, validated
from .utils import get_logger, run_log, settings

logger = get_logger("cli")


# ── Helpers ─────────────────────────────────────────────────────────

def _load_config(path, full_scale: bool = False) -> TrainConfig:
    if path is None:
        return TrainConfig.full_scale() if full_scale else TrainConfig()
    if not full_scale:
        return TrainConfig.from_json(path)
    try:
        overrides = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from e
    try:
        return TrainConfig.full_scale(**overrides)
    except ValueError as e:
        raise ConfigError(f"Invalid TrainConfig: {e}") from e


def _sibling(path, suffix: str, ext: str) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}{suffix}{ext}")


# ── Commands ────────────────────────────────────────────────────────

def cmd_gen_data(args) -> int:
    from .services.dataset import save_dataset
    from .services.synthetic import generate_synthetic_pairs

    config = _load_config(args.config) if args.config else TrainConfig()
    overrides = {"family": args.family, "count": args.count, "randomize_template": args.randomize_template}
    if args.n_points is not None:
        overrides["n_points"] = args.n_points
    if args.views is not None:
        overrides["n_views"] = args.views
    if args.feature_dim is not None:
        overrides["feature_dim"] = args.feature_dim
    spec = SyntheticSpec.for_config(config, **overrides)
    sigma = args.sigma_px if args.sigma_px is not None else config.sigma_px
    pairs = generate_synthetic_pairs(spec, args.seed, sigma_px=sigma)
    out = args.out or Path(settings.DATA_DIR) / f"{ShapeFamily(spec.family).value}_seed{args.seed}"
    save_dataset(pairs, out, spec, args.seed, sigma, write_masks=args.write_masks)
    return 0


def cmd_train(args) -> int:
    from .services.checkpoint import load_checkpoint, save_checkpoint
    from .services.dataset import load_dataset
    from .services.trainer import history_path_for, save_history, train

    config = _load_config(args.config, args.full_scale)
    if args.epochs is not None:
        config = validated(TrainConfig, {**config.model_dump(), "epochs": args.epochs})
    out = Path(args.out or Path(settings.OUTPUT_DIR) / "model.gdck")
    with run_log(_sibling(out, "_train", ".log")):
        logger.info(f"System: {settings.system_info()}")
        pairs = load_dataset(args.data, sigma_px=config.sigma_px)
        resume = load_checkpoint(args.resume) if args.resume else None
        result = train(config, pairs, resume=resume)
        save_checkpoint(result.checkpoint, out)
        history = save_history(result.history, history_path_for(out))
        logger.info(f"History → {history}")
    return 0


def cmd_eval(args) -> int:
    from .services.checkpoint import load_checkpoint
    from .services.dataset import load_dataset
    from .services.evaluator import evaluate

    ckpt = load_checkpoint(args.ckpt)
    pairs = load_dataset(args.data, sigma_px=ckpt.config.sigma_px)
    table = evaluate(ckpt, pairs)
    table.write(args.out)
    logger.info(f"Evaluation table → {args.out}")
    return 0


def cmd_infer(args) -> int:
    from .services.inference import infer

    infer(args.ckpt, args.template, args.views, args.target_feat, args.out, field_out=args.field_out)
    return 0


def cmd_transfer(args) -> int:
    from .services.transfer import ContactField, transfer_contact_map, transfer_keypoints

    template = read_pcf(args.template)
    field = read_pcf(args.field)
    contact = ContactField(read_contact(args.contact))
    deformed, warped = transfer_contact_map(field.points, template, contact)
    write_pcf(deformed, args.out)
    contact_out = args.contact_out or _sibling(args.out, "_contact", ".txt")
    write_contact(warped.values, contact_out)
    logger.info(f"Contact map over {len(warped)} points → {args.out}, {contact_out}")

    if args.keypoints:
        moved = transfer_keypoints(field.points, template, read_keypoints(args.keypoints))
        keypoints_out = args.keypoints_out or _sibling(args.out, "_keypoints", ".txt")
        write_keypoints(moved, keypoints_out)
        logger.info(f"{len(moved)} keypoints → {keypoints_out}")
    return 0


def cmd_render(args) -> int:
    from core.geometry import CameraIntrinsics
    from .services.renderer import render_cloud

    intr = CameraIntrinsics.centered(args.image_size, args.focal if args.focal is not None else float(args.image_size))
    render_cloud(read_pcf(args.cloud), read_pose(args.pose), intr, args.out, sigma_px=args.sigma_px)
    logger.info(f"Rendered {args.cloud} → {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .services.gradcheck import gradient_check, tiny_config

    overrides = {}
    if args.config:
        try:
            overrides = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read config {args.config}: {e}") from e
    report = gradient_check(tiny_config(**overrides), tolerance=args.tolerance, max_elements=args.max_elements)
    for block in report.blocks:
        status = "ok" if block.passed else "FAIL"
        print(f"{block.name}\t{block.n_params}\t{block.max_rel_error:.3e}\t{status}")
    if not report.passed:
        logger.error(f"Gradient check failed for: {', '.join(report.failed_blocks)}")
        return 1
    return 0


# ── Parser ──────────────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shapeflow", description="Template-to-target 3D deformation via flow matching")
    parser.add_argument("--log-level", default=None, help="Override LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="Generate a synthetic superquadric dataset")
    p.add_argument("--family", default="superquadric")
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="Dataset directory (default: DATA_DIR/<family>_seed<seed>)")
    p.add_argument("--config", help="TrainConfig JSON whose shapes and cameras the data should match")
    p.add_argument("--n-points", type=int)
    p.add_argument("--views", type=int)
    p.add_argument("--feature-dim", type=int)
    p.add_argument("--sigma-px", type=float)
    p.add_argument("--randomize-template", action="store_true", help="Draw templates from the family instead of the sphere")
    p.add_argument("--write-masks", action="store_true", help="Also write ground-truth mask previews (PGM)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="Train a model and write a checkpoint")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="Checkpoint path (default: OUTPUT_DIR/model.gdck)")
    p.add_argument("--resume", help="Continue from this checkpoint")
    p.add_argument("--paper-scale", "--full-scale", dest="full_scale", action="store_true", help="Start from the full-scale preset")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Score a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="Deform a template towards an observed target")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--views", nargs="+", required=True)
    p.add_argument("--target-feat", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--field-out")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("transfer", help="Carry a contact map (and keypoints) through a deformation field")
    p.add_argument("--field", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--contact", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--contact-out")
    p.add_argument("--keypoints")
    p.add_argument("--keypoints-out")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("render", help="Depth-shaded splat render of a cloud (PGM)")
    p.add_argument("--cloud", required=True)
    p.add_argument("--pose", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--focal", type=float)
    p.add_argument("--sigma-px", type=float, default=1.0)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("gradcheck", help="Finite-difference check of every parameter block")
    p.add_argument("--config", help="JSON overrides of the tiny check configuration")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--max-elements", type=int, help="Entries sampled per block (all by default)")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level:
        from .utils import setup_logging
        setup_logging(args.log_level)
    try:
        return args.func(args)
    except DivergedError as e:
        logger.error(f"Training diverged: {e}")
        return 1
    except ShapeFlowError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 2
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
