"""Command-line orchestration: pack, gen-data, train, sample, eval.

Configuration uses INI-style key=value sections (see README for the
grammar); CLI flags override the seed and output directory.  Every command
validates inputs before any heavy compute and fails with a single
machine-parsable line ``GMDIFF_ERR <code>: <message>`` on stderr.  JSON
outputs embed the effective config hash and seed; text outputs (datasets,
samples) stay in the plain line format and get a sidecar ``*.meta.json``.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, codec, geometry, metrics, predictor, sampling, synthdata, training
from .diffusion import linear_schedule

__all__ = ["main"]


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _config_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def _load_config(path: str | None) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise CliError("config", f"config file not found: {p}")
        parser.read(p)
    return parser


def _section(cfg: configparser.ConfigParser, name: str) -> dict:
    return dict(cfg[name]) if cfg.has_section(name) else {}


def _get(section: dict, key: str, cast, default):
    if key not in section:
        if default is None:
            raise CliError("config", f"missing required config key {key!r}")
        return default
    raw = section[key]
    try:
        if cast is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if cast is float and raw.strip().lower() in ("inf", "infinity"):
            return math.inf
        return cast(raw)
    except ValueError:
        raise CliError("config", f"cannot parse {key}={raw!r}") from None


def _seed(args, section: dict, default: int = 0) -> int:
    if args.seed is not None:
        return args.seed
    return _get(section, "seed", int, default)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _require_file(path: str | None, what: str) -> Path:
    if not path:
        raise CliError("args", f"missing {what}")
    p = Path(path)
    if not p.is_file():
        raise CliError("data", f"{what} not found: {p}")
    return p


def _parse_ratio(text: str) -> float:
    text = text.strip()
    if "/" in text:
        num, _, den = text.partition("/")
        return float(num) / float(den)
    return float(text)


# ---------------------------------------------------------------------------
# subcommands

def _packing_config(section: dict, args, seed: int) -> geometry.PackingConfig:
    K = args.k if getattr(args, "k", None) else _get(section, "num_categories", int, None)
    d = args.d if getattr(args, "d", None) else _get(section, "latent_dim", int, None)
    try:
        return geometry.PackingConfig(
            num_categories=K,
            latent_dim=d,
            initial_temperature=_get(section, "initial_temperature", float, 10.0),
            cooling_factor=_get(section, "cooling_factor", float, 0.9),
            steps_per_temperature=_get(section, "steps_per_temperature", int, 100),
            convergence_delta=_get(section, "convergence_delta", float, 0.001),
            min_steps=_get(section, "min_steps", int, 500),
            max_steps=_get(section, "max_steps", int, 10_000),
            rng_seed=seed,
        )
    except ValueError as exc:
        raise CliError("config", str(exc)) from None


def cmd_pack(args) -> int:
    cfg = _load_config(args.config)
    section = _section(cfg, "packing")
    seed = _seed(args, section)
    packing_cfg = _packing_config(section, args, seed)
    out = _out_dir(args)
    result = geometry.pack_sphere(packing_cfg)
    sigma_override = _get(section, "sigma_override", float, 0.0)
    if sigma_override > 0.0:
        result = result.with_sigma(sigma_override)
    path = out / "packing.json"
    geometry.save_packing(path, result)
    _write_json(
        out / "packing.meta.json",
        {"config_hash": _config_hash(packing_cfg.__dict__), "seed": seed, "file": path.name},
    )
    print(f"packed K={result.num_categories} d={result.latent_dim} "
          f"min_sq_dist={result.min_pair_sq_dist:.6f} sigma={result.sigma:.6f} -> {path}")
    return 0


def cmd_gen_data(args) -> int:
    cfg = _load_config(args.config)
    section = _section(cfg, "data")
    seed = _seed(args, section)
    K = args.k if args.k else _get(section, "num_categories", int, None)
    N = args.n if args.n else _get(section, "num_sequences", int, None)
    split_raw = args.split or section.get("split", "1/3,1/3,1/3")
    try:
        ratios = [_parse_ratio(part) for part in split_raw.split(",")]
    except ValueError:
        raise CliError("args", f"cannot parse split ratios {split_raw!r}") from None
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise CliError("args", f"split ratios must be three non-negative numbers summing to 1, got {split_raw!r}")
    if K is None or K < 2 or N is None or N < 3:
        raise CliError("args", "gen-data needs K >= 2 and N >= 3")

    out = _out_dir(args)
    rng = np.random.default_rng(seed)
    data = synthdata.sample_truth(K, N, rng)
    counts = [int(round(N * r)) for r in ratios[:2]]
    counts.append(N - sum(counts))
    alphabet = codec.Alphabet.integers(K)
    codec.save_alphabet(out / "alphabet.txt", alphabet)
    names = ["train.txt", "valid.txt", "test.txt"]
    start = 0
    for name, count in zip(names, counts):
        codec.save_dataset(out / name, data[start : start + count], alphabet)
        start += count
    manifest = {
        "K": K,
        "N": N,
        "seq_len": K,
        "split_sizes": counts,
        "files": names,
        "alphabet": "alphabet.txt",
        "seed": seed,
        "config_hash": _config_hash({"K": K, "N": N, "ratios": ratios, "seed": seed}),
    }
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {N} sequences (splits {counts}) to {out}")
    return 0


def _load_pack_schedule_data(cfg, args, seed):
    data_section = _section(cfg, "data")
    train_path = _require_file(data_section.get("train"), "training dataset ([data] train)")
    valid_path = _require_file(data_section.get("valid"), "validation dataset ([data] valid)")
    alphabet = codec.load_alphabet(_require_file(data_section.get("alphabet"), "alphabet file ([data] alphabet)"))

    train_x = codec.load_dataset(train_path, alphabet)
    valid_x = codec.load_dataset(valid_path, alphabet)
    if train_x.shape[1] != valid_x.shape[1]:
        raise CliError("shape", "train/valid sequence lengths differ")

    pack_section = _section(cfg, "packing")
    if "packing_file" in pack_section:
        pack = geometry.load_packing(_require_file(pack_section["packing_file"], "packing file"))
    else:
        pack_cfg = _packing_config(pack_section, argparse.Namespace(k=None, d=None), seed)
        pack = geometry.pack_sphere(pack_cfg)
    sigma_override = _get(pack_section, "sigma_override", float, 0.0)
    if sigma_override > 0.0:
        pack = pack.with_sigma(sigma_override)
    if pack.num_categories != len(alphabet):
        raise CliError("shape", f"packing K={pack.num_categories} but alphabet has {len(alphabet)} tokens")

    tr = _section(cfg, "training")
    try:
        train_cfg = training.TrainConfig(
            batch_size=_get(tr, "batch_size", int, 1024),
            max_iterations=_get(tr, "max_iterations", int, 2000),
            learning_rate=_get(tr, "learning_rate", float, 7.5e-4),
            lr_decay=_get(tr, "lr_decay", float, 0.999975),
            omega=_get(tr, "omega", float, math.inf),
            T=_get(tr, "t", int, 10),
            beta_start=_get(tr, "beta_start", float, 1e-4),
            beta_end=_get(tr, "beta_end", float, 0.3),
            early_stop_patience=_get(tr, "early_stop_patience", int, 10),
            eval_interval=_get(tr, "eval_interval", int, 100),
            valid_subset=_get(tr, "valid_subset", int, 4096),
            overfit_threshold=_get(tr, "overfit_threshold", float, 0.01),
            monitor_samples=_get(tr, "monitor_samples", int, 0),
            seed=seed,
        )
        sched = linear_schedule(train_cfg.T, train_cfg.beta_start, train_cfg.beta_end)
    except ValueError as exc:
        raise CliError("config", str(exc)) from None

    pr = _section(cfg, "predictor")
    try:
        pred_cfg = predictor.PredictorConfig(
            seq_len=train_x.shape[1],
            latent_dim=pack.latent_dim,
            num_categories=pack.num_categories,
            arch=pr.get("arch", "mlp"),
            hidden_size=_get(pr, "hidden_size", int, 96),
            depth=_get(pr, "depth", int, 3),
            num_heads=_get(pr, "num_heads", int, 8),
            time_embed_dim=_get(pr, "time_embed_dim", int, 16),
            position_embed_dim=_get(pr, "position_embed_dim", int, 8),
            dropout=_get(pr, "dropout", float, 0.0),
        )
    except ValueError as exc:
        raise CliError("config", str(exc)) from None
    return train_x, valid_x, alphabet, pack, sched, train_cfg, pred_cfg


def cmd_train(args) -> int:
    if args.config is None:
        raise CliError("args", "train needs --config")
    cfg = _load_config(args.config)
    seed = _seed(args, _section(cfg, "training"))
    train_x, valid_x, alphabet, pack, sched, train_cfg, pred_cfg = _load_pack_schedule_data(cfg, args, seed)
    out = _out_dir(args)

    config_hash = _config_hash({"train": train_cfg.to_dict(), "predictor": pred_cfg.to_dict()})
    initial = None
    if args.resume:
        initial, sched_ck, pack_ck, _ = checkpoint.load_checkpoint(
            _require_file(args.resume, "resume checkpoint")
        )
        if initial.config != pred_cfg:
            raise CliError("checkpoint", "resume checkpoint config does not match the run config")
        pack, sched = pack_ck, sched_ck
    best, report = training.fit(
        train_x, valid_x, pack, sched, pred_cfg, train_cfg, initial_params=initial
    )

    ckpt_path = out / "checkpoint.ckpt"
    checkpoint.save_checkpoint(
        ckpt_path,
        best,
        sched,
        pack,
        meta={"config_hash": config_hash, "seed": seed, "alphabet": alphabet.symbols},
    )
    report.best_checkpoint_path = str(ckpt_path)
    _write_json(out / "train_report.json", report.to_dict() | {"config_hash": config_hash, "seed": seed})
    print(
        f"trained {best.count} params for {report.iterations[-1]} iterations "
        f"(best valid loss {report.best_valid_loss:.4f} @ {report.best_iteration}) -> {ckpt_path}"
    )
    return 0


def cmd_sample(args) -> int:
    ckpt_path = _require_file(args.checkpoint, "checkpoint (--checkpoint)")
    cfg = _load_config(args.config)
    section = _section(cfg, "sampling")
    seed = _seed(args, section)
    M = args.m if args.m else _get(section, "num_samples", int, 10_000)
    if M < 1:
        raise CliError("args", "number of samples must be >= 1")
    out = _out_dir(args)

    params, sched, pack, meta = checkpoint.load_checkpoint(ckpt_path)
    req = sampling.SampleRequest(
        num_samples=M, seed=seed, map_categories=args.map or _get(section, "map_categories", bool, False)
    )
    result = sampling.sample_many(params, pack, sched, req, workers=args.workers)
    if meta.get("alphabet"):
        alphabet = codec.Alphabet(meta["alphabet"])
    else:
        alphabet = codec.Alphabet.integers(pack.num_categories)
    samples_path = out / "samples.txt"
    codec.save_dataset(samples_path, result.samples, alphabet)
    _write_json(
        out / "samples.meta.json",
        {
            "checkpoint": str(ckpt_path),
            "num_samples": M,
            "seed": seed,
            "config_hash": meta.get("config_hash", ""),
        },
    )
    if args.entropy:
        n_chains = _get(section, "entropy_chains", int, 512)
        entropy = sampling.entropy_trajectory(params, pack, sched, n_chains, seed + 1)
        with open(out / "entropy.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "mean_entropy"])
            for t, h in enumerate(entropy, start=1):
                writer.writerow([t, f"{h:.8f}"])
    print(f"wrote {M} samples -> {samples_path}")
    return 0


def cmd_eval(args) -> int:
    samples_path = _require_file(args.samples, "samples file (--samples)")
    cfg = _load_config(args.config)
    section = _section(cfg, "eval")
    seed = _seed(args, section)
    trials = args.trials if args.trials else _get(section, "trials", int, 1)
    if trials < 1:
        raise CliError("args", "trials must be >= 1")
    out = _out_dir(args)

    if args.truth_k is None and args.reference is None:
        raise CliError("args", "eval needs --truth-k K (synthetic) or --reference FILE (pattern mode)")

    if args.truth_k is not None:
        K = args.truth_k
        if K < 2:
            raise CliError("args", "--truth-k must be >= 2")
        alphabet = codec.Alphabet.integers(K)
        samples = codec.load_dataset(samples_path, alphabet)
        if samples.shape[1] != K:
            raise CliError("shape", f"synthetic sequences must have length K={K}, got {samples.shape[1]}")
        m = args.m if args.m else _get(section, "m", int, 10_000)
        report = metrics.MetricsReport("synthetic", m, trials, seed, len(samples))
        source = metrics.pool_source(samples)
        for trial_ss in np.random.SeedSequence(seed).spawn(trials):
            rng = np.random.default_rng(trial_ss)
            phat = metrics.poissonized_empirical(source, m, rng, seed)
            report.add_trial(metrics.evaluate_synthetic(phat, K))
    else:
        ref_path = _require_file(args.reference, "reference samples (--reference)")
        alphabet_path = section.get("alphabet")
        if alphabet_path:
            alphabet = codec.load_alphabet(_require_file(alphabet_path, "alphabet file"))
        else:
            raise CliError("config", "pattern mode needs [eval] alphabet = path")
        samples = codec.load_dataset(samples_path, alphabet)
        reference = codec.load_dataset(ref_path, alphabet)
        if samples.shape[1] != reference.shape[1]:
            raise CliError("shape", "samples and reference sequence lengths differ")
        lengths = [int(v) for v in section.get("pattern_lengths", "2,3,4,5").split(",")]
        n_positions = _get(section, "n_positions", int, 1000)
        top_k = _get(section, "top_k", int, 20)
        report = metrics.MetricsReport("reference", len(samples), trials, seed, len(samples))
        for trial_ss in np.random.SeedSequence(seed).spawn(trials):
            rng = np.random.default_rng(trial_ss)
            report.add_rho_trial(
                metrics.evaluate_patterns(reference, samples, lengths, n_positions, top_k, rng)
            )

    doc = report.summary() | {"config_hash": _config_hash({"seed": seed, "trials": trials})}
    _write_json(out / "metrics.json", doc)
    header, row = report.csv_row()
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerow(row)
    print(f"wrote metrics -> {out / 'metrics.json'}")
    return 0


# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gmdiff", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--seed", type=int, default=None, help="global seed override")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--workers", type=int, default=1, help="parallel worker cap")

    p = sub.add_parser("pack", help="place category means on the unit sphere")
    common(p)
    p.add_argument("--k", type=int, default=None, help="number of categories")
    p.add_argument("--d", type=int, default=None, help="latent dimension")
    p.set_defaults(fn=cmd_pack)

    p = sub.add_parser("gen-data", help="generate synthetic permutation datasets")
    common(p)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--n", type=int, default=None, help="total number of sequences")
    p.add_argument("--split", default=None, help="three comma-separated ratios")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train the denoising predictor")
    common(p)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sample", help="draw sequences from a trained model")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--m", type=int, default=None, help="number of samples")
    p.add_argument("--entropy", action="store_true", help="also write the entropy trajectory CSV")
    p.add_argument("--map", action="store_true", help="argmax intermediate category draws")
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("eval", help="evaluate a sample file")
    common(p)
    p.add_argument("--samples", default=None)
    p.add_argument("--truth-k", type=int, default=None, help="synthetic mode: ground-truth K")
    p.add_argument("--reference", default=None, help="pattern mode: reference sample file")
    p.add_argument("--m", type=int, default=None, help="Poissonization budget")
    p.add_argument("--trials", type=int, default=None)
    p.set_defaults(fn=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"GMDIFF_ERR {exc.code}: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FloatingPointError) as exc:
        print(f"GMDIFF_ERR invalid: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
