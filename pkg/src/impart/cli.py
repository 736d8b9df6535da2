"""Command-line orchestration of the four attack phases.

Subcommands: make-dataset, train-surrogate, generate-poison, train-victim,
evaluate, defend, sweep. Exit codes: 0 success, 1 runtime failure,
2 validation failure.
"""

import argparse
import os
import sys

import numpy as np

from . import defense as defense_mod
from . import figures
from .config import (
    ConfigError,
    dump_effective,
    effective_hash,
    label_map_from,
    load_config,
    train_config_from,
    trigger_config_from,
)
from .data import (
    TEST,
    TRAIN,
    LabeledDataset,
    load_image_folder,
    make_desk_dataset,
    save_image_folder,
)
from .pipeline import (
    ModelCheckpoint,
    evaluate_accuracy,
    poison_test_set,
    poison_training_set,
    select_poison_subset,
    train_classifier,
)
from .reports import (
    output_lock,
    read_poison_manifest,
    write_poison_manifest,
    write_tsv,
)


def _require(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def _load_cfg(args, **extra) -> dict:
    overrides = {}
    if getattr(args, "out", None):
        overrides["output_dir"] = args.out
    if getattr(args, "seed", None) is not None:
        overrides.setdefault("poison", {})["seed"] = args.seed
        overrides.setdefault("trigger", {})["seed"] = args.seed
        overrides.setdefault("train_surrogate", {})["seed"] = args.seed
        overrides.setdefault("train_victim", {})["seed"] = args.seed
    if getattr(args, "rho", None) is not None:
        overrides.setdefault("poison", {})["rho"] = args.rho
    if getattr(args, "gamma", None) is not None:
        overrides.setdefault("trigger", {})["gamma"] = args.gamma
    if getattr(args, "mode", None):
        overrides.setdefault("label_map", {})["mode"] = args.mode
    overrides.update(extra)
    cfg = load_config(args.config, overrides)
    _require(cfg["dataset_root"], "dataset_root is required (config or flags)")
    _require(cfg["output_dir"], "output_dir is required (--out or config)")
    return cfg


def _load_split(cfg, split):
    root = cfg["dataset_root"]
    _require(os.path.isdir(root), f"dataset_root does not exist: {root}")
    return load_image_folder(root, split)


def _check_checkpoint_compat(ckpt: ModelCheckpoint, cfg: dict, section: str):
    """Refuse checkpoints whose producing config disagrees on the sections
    that determine their contents (audit chain)."""
    prod = ckpt.metadata.get("effective_config")
    if prod is None:
        raise ConfigError("checkpoint carries no producing config record")
    for key in ("dataset_root", section):
        if prod.get(key) != cfg.get(key):
            raise ConfigError(
                f"checkpoint/config mismatch on {key!r}: produced with "
                f"{prod.get(key)!r}, current {cfg.get(key)!r}"
            )


def cmd_make_dataset(args) -> int:
    train, test = make_desk_dataset(
        num_classes=args.classes,
        size=args.image_size,
        n_train=args.train_size,
        n_test=args.test_size,
        seed=args.seed if args.seed is not None else 0,
    )
    save_image_folder(train, args.root)
    save_image_folder(test, args.root)
    print(f"wrote {len(train)} train / {len(test)} test images under {args.root}")
    return 0


def _train_cmd(args, section: str, ckpt_name: str) -> int:
    cfg = _load_cfg(args)
    out = cfg["output_dir"]
    if section == "train_surrogate" or args.poisoned is None:
        train = _load_split(cfg, TRAIN)
    else:
        _require(
            os.path.isdir(args.poisoned),
            f"poisoned artifact not found: {args.poisoned}",
        )
        train = load_image_folder(args.poisoned, TRAIN)
    test = _load_split(cfg, TEST)
    h = effective_hash(cfg)
    with output_lock(out):
        dump_effective(cfg, out)
        tc = train_config_from(cfg, section)
        ckpt = train_classifier(train, tc, eval_dataset=test, config_hash=h)
        ckpt.metadata["effective_config"] = cfg
        path = os.path.join(out, ckpt_name)
        ckpt.save(path)
    print(
        f"{ckpt_name}: train_acc={ckpt.metadata['final_train_acc']:.4f} "
        f"test_acc={ckpt.metadata['final_test_acc']:.4f} -> {path}"
    )
    return 0


def cmd_train_surrogate(args) -> int:
    return _train_cmd(args, "train_surrogate", "surrogate.pt")


def cmd_train_victim(args) -> int:
    return _train_cmd(args, "train_victim", "victim.pt")


def cmd_generate_poison(args) -> int:
    cfg = _load_cfg(args)
    out = cfg["output_dir"]
    train = _load_split(cfg, TRAIN)
    _require(os.path.isfile(args.checkpoint), f"checkpoint missing: {args.checkpoint}")
    ckpt = ModelCheckpoint.load(args.checkpoint)
    _check_checkpoint_compat(ckpt, cfg, "train_surrogate")
    label_map = label_map_from(cfg, train.num_classes)
    plan = select_poison_subset(
        train, cfg["poison"]["rho"], cfg["poison"]["seed"], label_map
    )
    with output_lock(out):
        dump_effective(cfg, out)
        poisoned, rows = poison_training_set(
            train, ckpt.handle(), plan, trigger_config_from(cfg)
        )
        art = os.path.join(out, "poisoned_train")
        save_image_folder(poisoned, art)
        h = effective_hash(cfg)
        mpath = write_poison_manifest(
            os.path.join(art, "poison_manifest.tsv"), rows, h,
            extra_header=[f"rho={plan.rho} n_poisoned={len(rows)}"],
        )
    n_ok = sum(r["success"] for r in rows)
    print(f"poisoned {len(rows)}/{len(train)} samples ({n_ok} successful) -> {art}")
    print(f"manifest: {mpath}")
    return 0


def _poison_test(cfg, surrogate_ckpt: ModelCheckpoint, out: str):
    """Phase 4 with on-disk reuse keyed by the config hash."""
    art = os.path.join(out, "poisoned_test")
    manifest = os.path.join(art, "poison_manifest.tsv")
    h = effective_hash(cfg)
    if os.path.isfile(manifest):
        rows, attrs = read_poison_manifest(manifest)
        if attrs.get("config_hash") == h:
            return load_image_folder(art, TEST), rows
        raise ConfigError(
            f"existing poisoned test artifact was produced under config "
            f"{attrs.get('config_hash')}, current is {h}; use a fresh output dir"
        )
    test = _load_split(cfg, TEST)
    label_map = label_map_from(cfg, test.num_classes)
    poisoned, rows = poison_test_set(
        test, surrogate_ckpt.handle(), label_map, trigger_config_from(cfg)
    )
    save_image_folder(poisoned, art)
    write_poison_manifest(manifest, rows, h)
    return poisoned, rows


def compute_eval_report(victim, poisoned_test: LabeledDataset, rows,
                        clean_test: LabeledDataset,
                        acc_clean_reference: float | None) -> dict:
    preds = victim_predict(victim, poisoned_test)
    targets = np.asarray([r["target_label"] for r in rows])
    trivial = np.asarray([r["trivial"] for r in rows], dtype=bool)
    asr = float(np.mean(preds == targets)) * 100.0
    if (~trivial).any():
        asr_ex = float(np.mean(preds[~trivial] == targets[~trivial])) * 100.0
    else:
        asr_ex = float("nan")
    ba = evaluate_accuracy(victim, clean_test) * 100.0
    return {
        "ba": ba,
        "asr": asr,
        "asr_excluding_trivial": asr_ex,
        "acc_clean_reference": (
            acc_clean_reference * 100.0 if acc_clean_reference is not None
            else float("nan")
        ),
        "mean_e00": float(np.mean([r["mean_e00"] for r in rows])),
        "psnr_db": float(np.mean([r["psnr_db"] for r in rows])),
        "ssim": float(np.mean([r["ssim"] for r in rows])),
        "l2": float(np.mean([r["l2"] for r in rows])),
        "linf": float(np.mean([r["linf"] for r in rows])),
    }


def victim_predict(model, dataset: LabeledDataset) -> np.ndarray:
    import torch

    model.eval()
    x = torch.from_numpy(dataset.images_float()).permute(0, 3, 1, 2)
    preds = []
    with torch.no_grad():
        for lo in range(0, len(dataset), 512):
            preds.append(model(x[lo : lo + 512]).argmax(dim=1).numpy())
    return np.concatenate(preds)


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    out = cfg["output_dir"]
    _require(os.path.isfile(args.victim), f"victim checkpoint missing: {args.victim}")
    _require(
        os.path.isfile(args.surrogate),
        f"surrogate checkpoint missing: {args.surrogate}",
    )
    victim_ckpt = ModelCheckpoint.load(args.victim)
    surrogate_ckpt = ModelCheckpoint.load(args.surrogate)
    _check_checkpoint_compat(surrogate_ckpt, cfg, "train_surrogate")
    clean_test = _load_split(cfg, TEST)
    acc_ref = None
    if args.clean_victim:
        acc_ref = evaluate_accuracy(
            ModelCheckpoint.load(args.clean_victim).build(), clean_test
        )
    with output_lock(out):
        dump_effective(cfg, out)
        poisoned_test, rows = _poison_test(cfg, surrogate_ckpt, out)
        victim = victim_ckpt.build()
        report = compute_eval_report(
            victim, poisoned_test, rows, clean_test, acc_ref
        )
        h = effective_hash(cfg)
        cols = list(report.keys())
        path = write_tsv(
            os.path.join(out, "eval_report.tsv"), cols, [report],
            header_lines=[
                "ba/asr in percent; asr over poisoned test items only",
                "quality columns are means over the poisoned test manifest",
            ],
            cfg_hash=h,
        )
        fig_dir = figures.ensure_dir(os.path.join(out, "figures"))
        pairs = [
            (clean_test.image(i), poisoned_test.image(i)) for i in range(6)
        ]
        captions = [
            f"e00={rows[i]['mean_e00']:.2f} psnr={rows[i]['psnr_db']:.1f} "
            f"ssim={rows[i]['ssim']:.3f}"
            for i in range(6)
        ]
        figures.image_grid(pairs, captions, os.path.join(fig_dir, "pairs.png"))
    print(
        f"BA={report['ba']:.2f} ASR={report['asr']:.2f} "
        f"ASR_ex_trivial={report['asr_excluding_trivial']:.2f} -> {path}"
    )
    return 0


def cmd_defend(args) -> int:
    cfg = _load_cfg(args)
    out = cfg["output_dir"]
    if args.defense not in ("strip", "spectral"):
        raise ConfigError(f"unknown defense: {args.defense!r}")
    _require(os.path.isfile(args.victim), f"victim checkpoint missing: {args.victim}")
    victim = ModelCheckpoint.load(args.victim).build()
    h = effective_hash(cfg)
    with output_lock(out):
        dump_effective(cfg, out)
        if args.defense == "strip":
            clean_test = _load_split(cfg, TEST)
            art = os.path.join(out, "poisoned_test")
            _require(
                os.path.isdir(art),
                f"poisoned test artifact missing (run evaluate first): {art}",
            )
            poisoned_test = load_image_folder(art, TEST)
            n = min(args.samples, len(clean_test), len(poisoned_test))
            held = clean_test.subset(range(len(clean_test) // 2))
            scfg = defense_mod.StripConfig(held_out=held, seed=cfg["poison"]["seed"])
            benign = np.stack([clean_test.image(i) for i in range(n)])
            poisoned = np.stack([poisoned_test.image(i) for i in range(n)])
            stats = defense_mod.strip_sweep(victim, benign, poisoned, scfg)
            rows = [
                {"sample": i, "population": "benign",
                 "entropy_mean": stats["benign_entropy"][i],
                 "entropy_sum": stats["benign_entropy_sum"][i]}
                for i in range(n)
            ] + [
                {"sample": i, "population": "poisoned",
                 "entropy_mean": stats["poisoned_entropy"][i],
                 "entropy_sum": stats["poisoned_entropy_sum"][i]}
                for i in range(n)
            ]
            path = write_tsv(
                os.path.join(out, "strip_report.tsv"),
                ["sample", "population", "entropy_mean", "entropy_sum"],
                rows,
                header_lines=[
                    "entropy_mean = mean Shannon entropy (nats) over overlays; "
                    "bounded by ln(num_classes)",
                    "entropy_sum = unnormalized sum over overlays",
                    f"min_poisoned_entropy={stats['min_poisoned_entropy']:.6g}",
                    f"min_poisoned_entropy_sum={stats['min_poisoned_entropy_sum']:.6g}",
                    f"overlap={stats['overlap']:.6g}",
                    f"threshold={stats['threshold']} (applied to entropy_mean)",
                ],
                cfg_hash=h,
            )
            fig_dir = figures.ensure_dir(os.path.join(out, "figures"))
            figures.entropy_histogram(
                stats["benign_entropy"], stats["poisoned_entropy"],
                os.path.join(fig_dir, "strip_entropy.png"),
            )
            print(
                f"strip: min_poisoned_entropy={stats['min_poisoned_entropy']:.4f} "
                f"overlap={stats['overlap']:.3f} -> {path}"
            )
        else:
            art = os.path.join(out, "poisoned_train")
            manifest = os.path.join(art, "poison_manifest.tsv")
            _require(
                os.path.isfile(manifest),
                f"poison manifest missing (run generate-poison first): {manifest}",
            )
            mixed = load_image_folder(art, TRAIN)
            rows, _ = read_poison_manifest(manifest)
            scfg = defense_mod.SpectralConfig()
            scores = defense_mod.spectral_scores(victim, mixed, scfg)
            poisoned_idx = [r["index"] for r in rows]
            flagged, precision, recall = defense_mod.spectral_detect(
                scores, mixed.labels, poisoned_idx, scfg
            )
            flag_set = set(int(i) for i in flagged)
            poison_set = set(poisoned_idx)
            out_rows = [
                {"index": i, "class": int(mixed.labels[i]), "score": float(scores[i]),
                 "flagged": i in flag_set, "is_poisoned": i in poison_set}
                for i in range(len(mixed))
            ]
            path = write_tsv(
                os.path.join(out, "spectral_report.tsv"),
                ["index", "class", "score", "flagged", "is_poisoned"],
                out_rows,
                header_lines=[
                    "score = squared projection onto top singular vector of "
                    "class-centered latents",
                    f"removal_fraction={scfg.removal_fraction}",
                    f"precision={precision:.6g}",
                    f"recall={recall:.6g}",
                ],
                cfg_hash=h,
            )
            print(f"spectral: precision={precision:.3f} recall={recall:.3f} -> {path}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    out = cfg["output_dir"]
    values = [float(v) for v in args.values.split(",")]
    _require(values, "sweep needs at least one value")
    _require(os.path.isfile(args.surrogate), f"surrogate missing: {args.surrogate}")
    surrogate_ckpt = ModelCheckpoint.load(args.surrogate)
    train = _load_split(cfg, TRAIN)
    label_map = label_map_from(cfg, train.num_classes)

    if args.sweep == "gamma":
        # forging-only sweep: quality of the perturbations vs gamma
        from .trigger import forge_batch

        handle = surrogate_ckpt.handle()
        n = min(args.samples, len(train))
        samples = [(train.image(i), int(train.labels[i])) for i in range(n)]
        rows = []
        for gamma in values:
            tcfg = trigger_config_from(
                load_config(args.config, {"trigger": {"gamma": gamma}})
            )
            results, _ = forge_batch(handle, samples, label_map, tcfg)
            rows.append(
                {
                    "gamma": gamma,
                    "success_rate": float(np.mean([r.success for r in results])),
                    "mean_delta_l2": float(
                        np.mean([np.linalg.norm(r.delta) for r in results])
                    ),
                    "mean_e00": float(
                        np.mean([r.quality.mean_ciede2000 for r in results])
                    ),
                    "mean_psnr_db": float(
                        np.mean([r.quality.psnr_db for r in results])
                    ),
                }
            )
        with output_lock(out):
            dump_effective(cfg, out)
            path = write_tsv(
                os.path.join(out, "gamma_sweep.tsv"),
                ["gamma", "success_rate", "mean_delta_l2", "mean_e00",
                 "mean_psnr_db"],
                rows,
                cfg_hash=effective_hash(cfg),
            )
        print(f"gamma sweep -> {path}")
        return 0

    # rho sweep: full generate/train/evaluate per value in subdirectories;
    # the poisoned test set does not depend on rho, so it is forged once
    _require(args.sweep == "rho", f"unknown sweep kind: {args.sweep!r}")
    test = _load_split(cfg, TEST)
    with output_lock(out):
        dump_effective(cfg, out)
        poisoned_test, test_rows = _poison_test(cfg, surrogate_ckpt, out)
    curve = []
    for rho in values:
        sub = os.path.join(out, f"rho_{rho:g}")
        sub_cfg = load_config(
            args.config, {"poison": {"rho": rho}, "output_dir": sub}
        )
        plan = select_poison_subset(
            train, rho, sub_cfg["poison"]["seed"], label_map
        )
        with output_lock(sub):
            dump_effective(sub_cfg, sub)
            poisoned, rows = poison_training_set(
                train, surrogate_ckpt.handle(), plan, trigger_config_from(sub_cfg)
            )
            art = os.path.join(sub, "poisoned_train")
            save_image_folder(poisoned, art)
            write_poison_manifest(
                os.path.join(art, "poison_manifest.tsv"), rows,
                effective_hash(sub_cfg),
            )
            vck = train_classifier(
                poisoned, train_config_from(sub_cfg, "train_victim"),
                eval_dataset=test, config_hash=effective_hash(sub_cfg),
            )
            vck.metadata["effective_config"] = sub_cfg
            vck.save(os.path.join(sub, "victim.pt"))
            report = compute_eval_report(
                vck.build(), poisoned_test, test_rows, test, None
            )
        curve.append({"rho": rho, "asr": report["asr"], "ba": report["ba"]})
        print(f"rho={rho:g}: ASR={report['asr']:.2f} BA={report['ba']:.2f}")
    with output_lock(out):
        path = write_tsv(
            os.path.join(out, "rho_sweep.tsv"),
            ["rho", "asr", "ba"], curve, cfg_hash=effective_hash(cfg),
        )
        fig_dir = figures.ensure_dir(os.path.join(out, "figures"))
        figures.sweep_curves(
            [r["rho"] for r in curve], [r["asr"] for r in curve],
            [r["ba"] for r in curve], "poison ratio",
            os.path.join(fig_dir, "rho_sweep.png"), logx=True,
        )
    print(f"rho sweep -> {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="impart",
        description="surrogate-guided label-specific backdoor attack toolkit",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", default=None, help="YAML config file")
            sp.add_argument("--out", default=None, help="output directory")
            sp.add_argument("--seed", type=int, default=None)
            sp.add_argument("--rho", type=float, default=None)
            sp.add_argument("--gamma", type=float, default=None)
            sp.add_argument(
                "--mode", choices=["all2all", "all2one"], default=None
            )

    sp = sub.add_parser("make-dataset", help="synthesize the desk benchmark")
    sp.add_argument("--root", required=True)
    sp.add_argument("--classes", type=int, default=10)
    sp.add_argument("--image-size", type=int, default=32)
    sp.add_argument("--train-size", type=int, default=10_000)
    sp.add_argument("--test-size", type=int, default=2_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_make_dataset)

    sp = sub.add_parser("train-surrogate", help="phase 1: train the surrogate")
    common(sp)
    sp.set_defaults(func=cmd_train_surrogate, poisoned=None)

    sp = sub.add_parser("generate-poison", help="phase 2: poison the training set")
    common(sp)
    sp.add_argument("--checkpoint", required=True, help="surrogate checkpoint")
    sp.set_defaults(func=cmd_generate_poison)

    sp = sub.add_parser("train-victim", help="phase 3: train the victim")
    common(sp)
    sp.add_argument(
        "--poisoned", default=None,
        help="poisoned dataset artifact (omit for a clean victim)",
    )
    sp.set_defaults(func=cmd_train_victim)

    sp = sub.add_parser("evaluate", help="phase 4: poison test set and score")
    common(sp)
    sp.add_argument("--victim", required=True)
    sp.add_argument("--surrogate", required=True)
    sp.add_argument("--clean-victim", default=None)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("defend", help="run a defense against the victim")
    common(sp)
    sp.add_argument("--victim", required=True)
    sp.add_argument("--defense", required=True)
    sp.add_argument("--samples", type=int, default=200)
    sp.set_defaults(func=cmd_defend)

    sp = sub.add_parser("sweep", help="rho or gamma grid")
    common(sp)
    sp.add_argument("--sweep", required=True, help="rho or gamma")
    sp.add_argument("--values", required=True, help="comma-separated values")
    sp.add_argument("--surrogate", required=True)
    sp.add_argument("--samples", type=int, default=100)
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
