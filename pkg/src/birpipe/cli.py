"""Command-line pipeline driver.

Subcommands: postprocess (mask cleanup + compositing), mix (random-k
manifest mixing), train (toy embedding), eval (retrieval metrics),
ablate (protocol/k grid), synth (synthetic corpus generator).

Exit codes: 0 success, 1 validation error, 2 runtime failure. Every
command validates its inputs before writing any output. A config file
given with --config holds `key = value` lines mirroring flag names;
explicit flags win over config values. The BIRPIPE_ROOT environment
variable (or --root) anchors relative paths.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation, features, manifest, masks, synthetic, training
from .triplet import REDUCTION_SUM, REDUCTIONS, embed

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".pgm", ".tif", ".tiff"}


class CliError(Exception):
    """Bad arguments or unusable inputs; maps to exit code 1."""


def _root(args) -> Path:
    if getattr(args, "root", None):
        return Path(args.root)
    return Path(os.environ.get("BIRPIPE_ROOT", "."))


def _resolve(args, value) -> Path:
    path = Path(value)
    return path if path.is_absolute() else _root(args) / path


def _require_file(args, value, what: str) -> Path:
    path = _resolve(args, value)
    if not path.is_file():
        raise CliError(f"{what} not found: {path}")
    return path


def load_config(path: Path) -> dict[str, str]:
    config: dict[str, str] = {}
    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise CliError(f"{path}:{number}: expected 'key = value', got {stripped!r}")
        key, _, value = stripped.partition("=")
        config[key.strip().replace("-", "_")] = value.strip()
    return config


def _config_tokens(config: dict[str, str], subparser: argparse.ArgumentParser) -> list[str]:
    """Turn config entries into flag tokens; keys foreign to the subcommand are skipped."""
    tokens: list[str] = []
    actions = subparser._option_string_actions
    for key, raw in config.items():
        flag = "--" + key.replace("_", "-")
        action = actions.get(flag)
        if action is None:
            continue
        if isinstance(action, argparse.BooleanOptionalAction):
            truthy = raw.lower() in ("1", "true", "yes", "on")
            tokens.append(flag if truthy else "--no-" + flag[2:])
        else:
            tokens.extend([flag, raw])
    return tokens


def _merge_config(argv: list[str], commands: dict[str, argparse.ArgumentParser]) -> list[str]:
    command = next((token for token in argv if not token.startswith("-")), None)
    if command not in commands:
        return argv
    config_path: str | None = None
    for index, token in enumerate(argv):
        if token == "--config" and index + 1 < len(argv):
            config_path = argv[index + 1]
        elif token.startswith("--config="):
            config_path = token.split("=", 1)[1]
    if config_path is None:
        return argv
    path = Path(config_path)
    if not path.is_file():
        raise CliError(f"config file not found: {path}")
    injected = _config_tokens(load_config(path), commands[command])
    at = argv.index(command) + 1
    return argv[:at] + injected + argv[at:]


def _manifest_arrays(man: manifest.Manifest) -> tuple[np.ndarray, np.ndarray]:
    identities = np.asarray([record.identity for record in man.records], dtype=np.int64)
    cameras = np.asarray([record.camera for record in man.records], dtype=np.int64)
    return identities, cameras


def _variant_features(
    man: manifest.Manifest,
    original: np.ndarray,
    segmented: np.ndarray | None,
) -> np.ndarray:
    if original.shape[0] != len(man.records):
        raise CliError(
            f"feature file has {original.shape[0]} rows, manifest has {len(man.records)} records"
        )
    if segmented is None:
        return original
    if segmented.shape != original.shape:
        raise CliError("original and segmented feature files must have matching shapes")
    use_segmented = np.asarray(
        [record.variant == manifest.VARIANT_SEGMENTED for record in man.records]
    )
    return np.where(use_segmented[:, None], segmented, original)


def _load_manifest(args, value, what: str) -> manifest.Manifest:
    path = _require_file(args, value, what)
    try:
        return manifest.load_manifest(path)
    except ValueError as exc:
        raise CliError(f"{path}: {exc}") from exc


def _load_features(args, value, what: str) -> np.ndarray:
    path = _require_file(args, value, what)
    try:
        return features.read_feature_file(path)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


# ---------------------------------------------------------------------------
# postprocess

def _pair_by_stem(masks_dir: Path, images_dir: Path) -> list[tuple[str, Path, Path]]:
    def index(directory: Path) -> dict[str, Path]:
        table: dict[str, Path] = {}
        for entry in sorted(directory.iterdir()):
            if not entry.is_file() or entry.suffix.lower() not in _IMAGE_SUFFIXES:
                continue
            if entry.stem in table:
                raise CliError(f"duplicate stem {entry.stem!r} in {directory}")
            table[entry.stem] = entry
        return table

    mask_table = index(masks_dir)
    image_table = index(images_dir)
    if not mask_table:
        raise CliError(f"no mask files found in {masks_dir}")
    missing = sorted(set(mask_table) - set(image_table))
    if missing:
        raise CliError(f"masks without a matching image: {', '.join(missing)}")
    return [(stem, mask_table[stem], image_table[stem]) for stem in sorted(mask_table)]


def cmd_postprocess(args) -> int:
    masks_dir = _resolve(args, args.masks)
    images_dir = _resolve(args, args.images)
    out_dir = _resolve(args, args.out)
    if not masks_dir.is_dir():
        raise CliError(f"masks directory not found: {masks_dir}")
    if not images_dir.is_dir():
        raise CliError(f"images directory not found: {images_dir}")
    if not 0.0 <= args.threshold <= 1.0:
        raise CliError(f"threshold must be in [0, 1], got {args.threshold}")
    if args.edge_radius < 0:
        raise CliError("edge-radius must be non-negative")

    pairs = _pair_by_stem(masks_dir, images_dir)
    lines = ["# outcomes v1"]
    kept = discarded = errors = 0
    for stem, mask_path, image_path in pairs:
        try:
            mask = masks.load_mask(mask_path)
            image = masks.load_image(image_path)
            if image.shape[:2] != mask.shape:
                raise ValueError(
                    f"mask {mask.shape} does not match image {image.shape[:2]}"
                )
            if args.edge_radius > 0:
                mask = masks.refine_with_edges(mask, image, args.edge_radius)
            outcome = masks.postprocess(mask, args.threshold)
        except Exception as exc:  # per-file failures must not stop the batch
            errors += 1
            message = str(exc).replace("\t", " ").replace("\n", " ")
            lines.append(f"{stem}\terror\t{message}\t-")
            continue
        if outcome.kept:
            kept += 1
            masks.save_mask(out_dir / "masks" / f"{stem}.png", outcome.mask)
            composited = masks.apply_mask(image, outcome.mask)
            masks.save_image(out_dir / "images" / f"{stem}.png", composited)
            lines.append(f"{stem}\tkept\t-\t{outcome.ratio:.6f}")
        else:
            discarded += 1
            lines.append(f"{stem}\tdiscarded\t{outcome.reason}\t{outcome.ratio:.6f}")

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "outcomes.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"kept={kept} discarded={discarded} errors={errors}")
    if kept + discarded == 0:
        print("error: no mask was processed successfully", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


# ---------------------------------------------------------------------------
# mix

def cmd_mix(args) -> int:
    if not 0.0 <= args.k <= 1.0:
        raise CliError(f"k must be in [0, 1], got {args.k}")
    man = _load_manifest(args, args.manifest, "manifest")
    mixed = manifest.mix_random_selection(man, args.k, args.seed)
    manifest.save_manifest(_resolve(args, args.out), mixed)
    print(
        f"mixed {len(mixed.records)} records: "
        f"segmented={mixed.count_variant(manifest.VARIANT_SEGMENTED)} "
        f"original={mixed.count_variant(manifest.VARIANT_ORIGINAL)} "
        f"(k={args.k}, seed={args.seed})"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# train

def _train_config(args, seed: int) -> training.TrainConfig:
    config = training.TrainConfig(
        p=args.p,
        k=args.k_per_id,
        margin=args.margin,
        learning_rate=args.lr,
        epochs=args.epochs,
        seed=seed,
        dim_out=args.dim_out,
        normalize_output=args.normalize,
        reduction=args.reduction,
    )
    try:
        config.validate()
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    return config


def _training_arrays(args) -> tuple[np.ndarray, np.ndarray]:
    if args.features_text:
        path = _require_file(args, args.features_text, "feature file")
        try:
            identities, _, vectors = features.read_labeled_text_features(path)
        except ValueError as exc:
            raise CliError(str(exc)) from exc
        return vectors, identities
    if not args.manifest or not args.features:
        raise CliError("provide either --features-text or --manifest with --features")
    man = _load_manifest(args, args.manifest, "manifest")
    original = _load_features(args, args.features, "feature file")
    segmented = (
        _load_features(args, args.features_segmented, "segmented feature file")
        if args.features_segmented
        else None
    )
    identities, _ = _manifest_arrays(man)
    return _variant_features(man, original, segmented), identities


def cmd_train(args) -> int:
    vectors, identities = _training_arrays(args)
    config = _train_config(args, args.seed)
    print(
        f"training: batch size {config.batch_size} "
        f"(P={config.p} x K={config.k}), epochs={config.epochs}, lr={config.learning_rate}"
    )
    try:
        result = training.train_toy(vectors, identities, config)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    out = _resolve(args, args.out)
    training.save_model(out, result.model)
    loss_log = (
        _resolve(args, args.loss_log)
        if args.loss_log
        else out.parent / (out.stem + "_losses.tsv")
    )
    log_lines = [f"# batch_size={config.batch_size} epochs={config.epochs}"]
    log_lines += [f"{epoch}\t{loss:.17g}" for epoch, loss in enumerate(result.epoch_losses)]
    loss_log.parent.mkdir(parents=True, exist_ok=True)
    loss_log.write_text("\n".join(log_lines) + "\n", encoding="utf-8")
    print(f"model written to {out}; loss log to {loss_log}")
    print(f"first epoch loss {result.epoch_losses[0]:.6f}, final {result.epoch_losses[-1]:.6f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval

def _embedded_split(args, model, manifest_arg, features_arg, segmented_arg, what: str):
    man = _load_manifest(args, manifest_arg, f"{what} manifest")
    original = _load_features(args, features_arg, f"{what} feature file")
    segmented = (
        _load_features(args, segmented_arg, f"{what} segmented feature file")
        if segmented_arg
        else None
    )
    vectors = _variant_features(man, original, segmented)
    identities, cameras = _manifest_arrays(man)
    return embed(model, vectors), identities, cameras


def cmd_eval(args) -> int:
    model_path = _require_file(args, args.model, "model file")
    model = training.load_model(model_path)
    query = _embedded_split(
        args, model, args.query_manifest, args.query_features, args.query_features_segmented, "query"
    )
    gallery = _embedded_split(
        args,
        model,
        args.gallery_manifest,
        args.gallery_features,
        args.gallery_features_segmented,
        "gallery",
    )
    try:
        result = evaluation.evaluate(
            *query, *gallery, exclude_same_camera=args.exclude_same_camera
        )
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    results = {args.name: result}
    print(evaluation.format_report(results), end="")
    print(f"queries scored={result.num_queries} skipped={result.num_skipped}")
    if args.out:
        evaluation.save_report(_resolve(args, args.out), results)
    return EXIT_OK


# ---------------------------------------------------------------------------
# ablate

def parse_k_grid(text: str) -> list[float]:
    if not text:
        return []
    parts = text.split(":")
    if len(parts) != 3:
        raise CliError(f"k-grid must be start:stop:step, got {text!r}")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError as exc:
        raise CliError(f"k-grid must be numeric, got {text!r}") from exc
    if step <= 0 or start < 0 or stop > 1 or start > stop:
        raise CliError(f"k-grid must satisfy 0 <= start <= stop <= 1 with step > 0, got {text!r}")
    count = int(round((stop - start) / step)) + 1
    values = [round(start + i * step, 10) for i in range(count)]
    return [v for v in values if v <= stop + 1e-9]


def _parse_variants(text: str) -> list[str]:
    names = [name.strip() for name in text.split(",") if name.strip()]
    for name in names:
        if name not in manifest.PROTOCOLS or name == manifest.PROTOCOL_RANDOM_K:
            raise CliError(f"unknown ablation variant {name!r}")
    return names


def cmd_ablate(args) -> int:
    train_man = _load_manifest(args, args.train_manifest, "train manifest")
    test_man = _load_manifest(args, args.test_manifest, "test manifest")
    train_orig = _load_features(args, args.train_features, "train feature file")
    test_orig = _load_features(args, args.test_features, "test feature file")
    train_seg = (
        _load_features(args, args.train_features_segmented, "train segmented feature file")
        if args.train_features_segmented
        else None
    )
    test_seg = (
        _load_features(args, args.test_features_segmented, "test segmented feature file")
        if args.test_features_segmented
        else None
    )
    variants = _parse_variants(args.variants)
    grid = parse_k_grid(args.k_grid)
    rows = [(name, name, None) for name in variants]
    rows += [(f"k={value:g}", manifest.PROTOCOL_RANDOM_K, value) for value in grid]
    if not rows:
        raise CliError("nothing to run: no variants and an empty k grid")

    query_rows = [
        i for i, r in enumerate(test_man.records) if r.split == manifest.SPLIT_QUERY
    ]
    gallery_rows = [
        i for i, r in enumerate(test_man.records) if r.split == manifest.SPLIT_GALLERY
    ]
    if not query_rows or not gallery_rows:
        raise CliError("test manifest needs both test_query and test_gallery records")

    results: dict[str, evaluation.EvalResult] = {}
    failures: list[tuple[str, str]] = []
    for row_index, (label, protocol, k) in enumerate(rows):
        row_seed = manifest.derive_seed(args.seed, row_index)
        try:
            train_row, test_row = manifest.assemble_protocol(
                protocol, train_man, test_man, row_seed, outcomes=None, k=k
            )
            train_x = _variant_features(train_row, train_orig, train_seg)
            train_ids, _ = _manifest_arrays(train_row)
            config = _train_config(args, row_seed)
            model = training.train_toy(train_x, train_ids, config).model
            test_x = embed(model, _variant_features(test_row, test_orig, test_seg))
            test_ids, test_cams = _manifest_arrays(test_row)
            results[label] = evaluation.evaluate(
                test_x[query_rows],
                test_ids[query_rows],
                test_cams[query_rows],
                test_x[gallery_rows],
                test_ids[gallery_rows],
                test_cams[gallery_rows],
                exclude_same_camera=args.exclude_same_camera,
            )
        except Exception as exc:  # a failing row must not sink the remaining rows
            failures.append((label, str(exc).replace("\n", " ")))
            print(f"row failed: {label}: {exc}", file=sys.stderr)

    if results:
        print(evaluation.format_report(results), end="")
    if args.out:
        out = _resolve(args, args.out)
        text = evaluation.serialize_report(results) if results else "# report v1\n"
        for label, message in failures:
            text += f"# failed: {label}: {message}\n"
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
    return EXIT_OK if results else EXIT_RUNTIME


# ---------------------------------------------------------------------------
# synth

def cmd_synth(args) -> int:
    if args.identities < 2:
        raise CliError("need at least 2 identities")
    dataset = synthetic.make_cluster_dataset(
        num_identities=args.identities,
        per_identity=args.per_identity,
        dim=args.dim,
        separation=args.separation,
        intra_std=args.intra_std,
        segmented_std=args.segmented_std,
        queries_per_identity=args.queries_per_identity,
        gallery_per_identity=args.gallery_per_identity,
        num_cameras=args.cameras,
        seed=args.seed,
    )
    paths = synthetic.write_dataset(_resolve(args, args.out_dir), dataset)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="key = value file mirroring flag names")
    sub.add_argument("--root", default=None, help="root for relative paths (default: $BIRPIPE_ROOT)")


def _add_train_options(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--p", type=int, default=training.DEFAULT_P, help="identities per batch")
    sub.add_argument("--k-per-id", type=int, default=training.DEFAULT_K, help="images per identity")
    sub.add_argument("--margin", type=float, default=training.DEFAULT_MARGIN)
    sub.add_argument("--lr", type=float, default=training.DEFAULT_LEARNING_RATE)
    sub.add_argument("--epochs", type=int, default=training.DEFAULT_EPOCHS)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--dim-out", type=int, default=None)
    sub.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=False)
    sub.add_argument("--reduction", choices=REDUCTIONS, default=REDUCTION_SUM)


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="birpipe",
        description="Background-removal pipeline for vehicle re-identification experiments.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    commands: dict[str, argparse.ArgumentParser] = {}

    sub = subparsers.add_parser("postprocess", help="clean masks and composite background-removed images")
    sub.add_argument("--masks", required=True, help="directory of raw segmentation masks")
    sub.add_argument("--images", required=True, help="directory of matching images (paired by stem)")
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--threshold", type=float, default=masks.DEFAULT_AREA_THRESHOLD)
    sub.add_argument("--edge-radius", type=int, default=0)
    _add_common(sub)
    sub.set_defaults(func=cmd_postprocess)
    commands["postprocess"] = sub

    sub = subparsers.add_parser("mix", help="re-draw segmented/original variants with probability k")
    sub.add_argument("--manifest", required=True)
    sub.add_argument("--k", type=float, required=True)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out", required=True)
    _add_common(sub)
    sub.set_defaults(func=cmd_mix)
    commands["mix"] = sub

    sub = subparsers.add_parser("train", help="train the toy embedding with batch-hard triplet loss")
    sub.add_argument("--manifest")
    sub.add_argument("--features", help="binary feature file aligned with the manifest rows")
    sub.add_argument("--features-segmented", help="segmented-variant feature file")
    sub.add_argument("--features-text", help="labelled text features (identity,camera,values...)")
    sub.add_argument("--out", required=True, help="model file (.npz)")
    sub.add_argument("--loss-log", help="per-epoch loss log (default: next to the model)")
    _add_train_options(sub)
    _add_common(sub)
    sub.set_defaults(func=cmd_train)
    commands["train"] = sub

    sub = subparsers.add_parser("eval", help="rank a gallery and report mAP / CMC")
    sub.add_argument("--model", required=True)
    sub.add_argument("--query-manifest", required=True)
    sub.add_argument("--query-features", required=True)
    sub.add_argument("--query-features-segmented")
    sub.add_argument("--gallery-manifest", required=True)
    sub.add_argument("--gallery-features", required=True)
    sub.add_argument("--gallery-features-segmented")
    sub.add_argument("--exclude-same-camera", action=argparse.BooleanOptionalAction, default=True)
    sub.add_argument("--name", default="eval", help="row label in the report")
    sub.add_argument("--out", help="machine-readable report file")
    _add_common(sub)
    sub.set_defaults(func=cmd_eval)
    commands["eval"] = sub

    sub = subparsers.add_parser("ablate", help="run protocol variants and a random-k grid")
    sub.add_argument("--train-manifest", required=True)
    sub.add_argument("--train-features", required=True)
    sub.add_argument("--train-features-segmented")
    sub.add_argument("--test-manifest", required=True)
    sub.add_argument("--test-features", required=True)
    sub.add_argument("--test-features-segmented")
    sub.add_argument(
        "--variants",
        default="baseline,seg,seg-post,trains-testn",
        help="comma-separated protocol variants (may be empty)",
    )
    sub.add_argument("--k-grid", default="0.1:0.9:0.1", help="start:stop:step, empty to skip")
    sub.add_argument("--exclude-same-camera", action=argparse.BooleanOptionalAction, default=True)
    sub.add_argument("--out", help="machine-readable report file")
    _add_train_options(sub)
    _add_common(sub)
    sub.set_defaults(func=cmd_ablate)
    commands["ablate"] = sub

    sub = subparsers.add_parser("synth", help="generate a synthetic cluster corpus")
    sub.add_argument("--out-dir", required=True)
    sub.add_argument("--identities", type=int, default=10)
    sub.add_argument("--per-identity", type=int, default=20)
    sub.add_argument("--dim", type=int, default=2)
    sub.add_argument("--separation", type=float, default=5.0)
    sub.add_argument("--intra-std", type=float, default=1.0)
    sub.add_argument("--segmented-std", type=float, default=0.2)
    sub.add_argument("--queries-per-identity", type=int, default=2)
    sub.add_argument("--gallery-per-identity", type=int, default=4)
    sub.add_argument("--cameras", type=int, default=4)
    sub.add_argument("--seed", type=int, default=0)
    _add_common(sub)
    sub.set_defaults(func=cmd_synth)
    commands["synth"] = sub

    return parser, commands


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, commands = build_parser()
    try:
        argv = _merge_config(argv, commands)
        args = parser.parse_args(argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_VALIDATION
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
