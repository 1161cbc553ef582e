"""Command-line surface: dataset synthesis, staged training, evaluation,
and single-video inference.

Exit codes: 0 success, 2 user error (arguments, files, config mismatches),
3 numeric failure during training.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .audio import read_wav, wav_to_audio_features, EMBED_DIM, N_MELS, PATCH_FRAMES
from .config import RunConfig, load_run_config
from .corpus import (
    TRACKS,
    SynthConfig,
    build_vocabulary,
    load_dataset,
    load_feature_matrix,
    synth_dataset,
)
from .model import greedy_decode, sample_decode, encode
from .training import (
    CheckpointError,
    NumericError,
    Trainer,
    load_checkpoint,
    prepare_split,
)

EXIT_OK = 0
EXIT_USER_ERROR = 2
EXIT_NUMERIC_FAILURE = 3

# Fixed seed for the stand-in WAV embedding projection; there is no trained
# audio trunk, so inference from raw WAV uses a frozen random projection.
WAV_EMBED_SEED = 0


class CliError(Exception):
    """User-facing error mapped to exit code 2."""


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="run config JSON")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--out", type=Path, help="output location")
    p.add_argument("--force", action="store_true", help="replace existing outputs")
    p.add_argument("--track", choices=list(TRACKS), help="caption language track")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="capstage",
                                     description="Staged multi-modal caption training pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _common_flags(p)
    p.add_argument("--videos", type=int, help="override the training-split video count")

    p = sub.add_parser("train", help="run the staged training loop")
    _common_flags(p)
    p.add_argument("--data", type=Path, help="dataset directory (default: config dataset_dir)")

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    _common_flags(p)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--data", type=Path, help="dataset directory (default: config dataset_dir)")
    p.add_argument("--split", choices=["train", "val", "test"], default="val")

    p = sub.add_parser("infer", help="caption one video from feature files")
    _common_flags(p)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--appearance", type=Path, required=True)
    p.add_argument("--motion", type=Path, required=True)
    p.add_argument("--audio", type=Path, help="audio feature file (.f32)")
    p.add_argument("--wav", type=Path, help="16 kHz mono WAV instead of audio features")
    p.add_argument("--topic", type=int, required=True)
    p.add_argument("--sample", type=int, metavar="N", help="print N sampled captions")
    p.add_argument("--max-len", type=int, dest="max_len", help="decoding length cap")
    return parser


def _run_config(args) -> RunConfig:
    flags = {"seed": args.seed, "track": args.track}
    return load_run_config(args.config, flag_overrides=flags)


def _caption_text(tokens: list[str], track: str) -> str:
    return " ".join(tokens) if track == "english" else "".join(tokens)


def _dataset_n_topics(dataset_dir: Path, split) -> int:
    cfg_path = Path(dataset_dir) / "synth_config.json"
    if cfg_path.exists():
        return SynthConfig.from_dict(json.loads(cfg_path.read_text(encoding="utf-8"))).n_topics
    return 1 + max(r.topic_id for part in (split.train, split.val, split.test) for r in part)


def _check_feature_dims(records, config) -> None:
    want = {"appearance": config.d_app, "motion": config.d_mot, "audio": config.d_aud}
    for rec in records:
        for modality, d in want.items():
            if rec.dims[modality][1] != d:
                raise CliError(
                    f"{rec.video_id}: {modality} width {rec.dims[modality][1]} does not "
                    f"match checkpoint width {d}"
                )


def cmd_synth(args) -> int:
    cfg = _run_config(args)
    synth_cfg = cfg.synth
    if args.videos is not None:
        synth_cfg = SynthConfig(**{**asdict(synth_cfg), "n_train": args.videos})
        synth_cfg.tracks = tuple(synth_cfg.tracks)
    out_dir = Path(args.out) if args.out is not None else Path(cfg.dataset_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        if not args.force:
            raise CliError(f"{out_dir} exists and is not empty; pass --force to replace it")
        shutil.rmtree(out_dir)
    split = synth_dataset(synth_cfg, out_dir, seed=cfg.seed)
    print(f"wrote {len(split.train)} train / {len(split.val)} val / "
          f"{len(split.test)} test videos to {out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    data_dir = Path(args.data) if args.data is not None else Path(cfg.dataset_dir)
    split = load_dataset(data_dir)
    out_dir = Path(args.out) if args.out is not None else Path(cfg.out_dir)
    if args.force and out_dir.exists():
        shutil.rmtree(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    last_ckpt = out_dir / "checkpoints" / "last.ckpt"
    if last_ckpt.exists():
        probe = load_checkpoint(last_ckpt)
        _check_feature_dims(split.train + split.val, probe.config)
        train_data = prepare_split(split.train, data_dir, probe.vocab, probe.track, probe.config)
        val_data = prepare_split(split.val, data_dir, probe.vocab, probe.track, probe.config)
        trainer = load_checkpoint(last_ckpt, train_data, val_data)
        trainer.stage_config = cfg.stages.validate()
        print(f"resuming from {last_ckpt} at epoch {trainer.state.epoch}")
    else:
        track = cfg.track
        vocab = build_vocabulary(seq for rec in split.train for seq in rec.captions.get(track, []))
        model_cfg = cfg.model_config(len(vocab), _dataset_n_topics(data_dir, split))
        _check_feature_dims(split.train + split.val, model_cfg)
        train_data = prepare_split(split.train, data_dir, vocab, track, model_cfg)
        val_data = prepare_split(split.val, data_dir, vocab, track, model_cfg)
        trainer = Trainer(model_cfg, cfg.stages, vocab, track, train_data, val_data, seed=cfg.seed)

    trainer.train(out_dir=out_dir)
    best = max((e for e in trainer_history(trainer, out_dir) if e.get("val")),
               key=lambda e: e["val"]["cider"], default=None)
    if best is None:
        print("training finished; no validation metrics recorded")
    else:
        print(f"best validation CIDEr {best['val']['cider']:.4f} "
              f"at epoch {best['epoch']} (stage {best['stage']})")
    return EXIT_OK


def trainer_history(trainer: Trainer, out_dir: Path) -> list[dict]:
    log = Path(out_dir) / "train_log.jsonl"
    if not log.exists():
        return []
    return [json.loads(line) for line in log.read_text(encoding="utf-8").splitlines() if line]


def cmd_eval(args) -> int:
    trainer = load_checkpoint(args.ckpt)
    cfg = _run_config(args)
    data_dir = Path(args.data) if args.data is not None else Path(cfg.dataset_dir)
    split = load_dataset(data_dir)
    records = split.part(args.split)
    _check_feature_dims(records, trainer.config)
    data = prepare_split(records, data_dir, trainer.vocab, trainer.track, trainer.config)
    report = trainer.evaluate(data)
    text = report.to_json()
    print(text)
    if args.out is not None:
        out = Path(args.out)
        if out.exists() and not args.force:
            raise CliError(f"{out} exists; pass --force to replace it")
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


def _load_infer_features(args, config):
    d_app = config.d_app
    size = args.appearance.stat().st_size
    if size % (4 * d_app) != 0:
        raise CliError(f"{args.appearance}: size {size} is not a whole number of "
                       f"{d_app}-wide float32 rows")
    t_frames = size // (4 * d_app)
    mats = {
        "appearance": load_feature_matrix(args.appearance, "appearance", t_frames, d_app),
        "motion": load_feature_matrix(args.motion, "motion", t_frames, config.d_mot),
    }
    if args.wav is not None and args.audio is not None:
        raise CliError("--audio and --wav are mutually exclusive")
    if args.wav is not None:
        rng = np.random.Generator(np.random.PCG64(WAV_EMBED_SEED))
        weight = rng.uniform(-0.08, 0.08, (EMBED_DIM, PATCH_FRAMES * N_MELS))
        bias = np.zeros(EMBED_DIM)
        audio_mat = wav_to_audio_features(read_wav(args.wav), weight, bias)
        if audio_mat.shape != (t_frames, config.d_aud):
            raise CliError(f"WAV front end produced {audio_mat.shape}, expected "
                           f"({t_frames}, {config.d_aud}); appearance features must have "
                           f"{audio_mat.shape[0]} rows to pair with WAV input")
        mats["audio"] = audio_mat
    elif args.audio is not None:
        mats["audio"] = load_feature_matrix(args.audio, "audio", t_frames, config.d_aud)
    else:
        raise CliError("provide --audio features or a --wav file")
    return mats


def cmd_infer(args) -> int:
    trainer = load_checkpoint(args.ckpt)
    config = trainer.config
    if args.max_len is not None:
        if args.max_len < 1:
            raise CliError("--max-len must be >= 1")
        config = type(config)(**{**config.to_dict(), "max_len": args.max_len})
    mats = _load_infer_features(args, config)
    enc = encode(
        torch.tensor(np.ascontiguousarray(mats["appearance"]), dtype=torch.float32),
        torch.tensor(np.ascontiguousarray(mats["motion"]), dtype=torch.float32),
        torch.tensor(np.ascontiguousarray(mats["audio"]), dtype=torch.float32),
        args.topic,
        trainer.params,
        config,
    )
    seed = args.seed if args.seed is not None else 0
    if args.sample:
        for i in range(args.sample):
            gen = torch.Generator().manual_seed(seed + i)
            ids, _ = sample_decode(enc, trainer.params, config, gen)
            text = _caption_text(trainer.vocab.decode_ids(ids), trainer.track)
            print(f"[seed {seed + i}] {text}")
    else:
        ids = greedy_decode(enc, trainer.params, config)
        print(_caption_text(trainer.vocab.decode_ids(ids), trainer.track))
    return EXIT_OK


_COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "infer": cmd_infer}


def main(argv=None) -> int:
    torch.set_num_threads(1)
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC_FAILURE
    except (CliError, CheckpointError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USER_ERROR


if __name__ == "__main__":
    sys.exit(main())
