"""Command-line surface tying the pipeline together.

Every subcommand accepts --seed and --config (plain ``key = value`` lines,
'#' comments; keys are the long option names with '-' replaced by '_').
Failures print one line ``error:<category>: message`` and exit nonzero
with a per-category code.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io as avse_io
from .dsp import magnitude, stft
from .errors import AvseError, ConfigError, FormatError, UsageError
from .gan import GanConfig, GanOptimState, GanWeights, gan_train_step, generator_forward
from .masking import BINARY, MaskConfig, SpectralMask, SOFT, binarize, ideal_binary_mask, resynthesize
from .metrics import si_sdr, stoi
from .mixture import MixtureSpec, SNR_GRID_DB, TrainingItem, make_segments, mix, synth_corpus
from .model import MaskStreamer, ModelConfig, train
from .nn import NamedTensorStore, Tensor
from .streaming import profile


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(p: _Parser) -> None:
    p.add_argument("--seed", type=int, default=0, help="seed for all randomized choices")
    p.add_argument("--config", default=None, help="key=value file overriding flag defaults")


def build_parser() -> _Parser:
    p = _Parser(prog="avse", description="Real-time audio-visual speech enhancement harness")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("mix", help="mix clean speech with noise at an exact SNR")
    m.add_argument("--clean", required=True)
    m.add_argument("--noise", required=True)
    m.add_argument("--snr", type=float, required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--out-noise", default=None, help="also write the scaled noise")
    _add_common(m)

    o = sub.add_parser("oracle-ibm", help="ideal binary mask from clean speech and scaled noise")
    o.add_argument("--clean", required=True)
    o.add_argument("--noise", required=True, help="the scaled noise actually mixed")
    o.add_argument("--lc", type=float, default=0.0, help="local criterion in dB")
    o.add_argument("--out", required=True)
    _add_common(o)

    e = sub.add_parser("enhance", help="mask-based enhancement of a noisy wav")
    e.add_argument("--in", dest="infile", required=True)
    e.add_argument("--emb", default=None, help="LIPE embedding file (omit with --audio-only)")
    e.add_argument("--weights", default=None)
    e.add_argument("--out", required=True)
    e.add_argument("--mask-mode", choices=[SOFT, BINARY], default=SOFT)
    e.add_argument("--audio-only", action="store_true")
    e.add_argument("--debug-ones-mask", action="store_true", help="bypass the model with an all-ones mask")
    _add_common(e)

    t = sub.add_parser("train", help="train the mask predictor on a directory of items")
    t.add_argument("--data", required=True)
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--lr", type=float, default=3e-4)
    t.add_argument("--out", required=True)
    t.add_argument("--toy", action="store_true", help="reduced widths for desk-scale runs")
    t.add_argument("--audio-only", action="store_true")
    t.add_argument("--batch-size", type=int, default=1)
    t.add_argument("--history", default=None, help="write per-epoch log lines here")
    _add_common(t)

    s = sub.add_parser("synth", help="generate the hermetic synthetic training corpus")
    s.add_argument("--items", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seconds", type=int, default=3)
    _add_common(s)

    v = sub.add_parser("eval", help="objective metrics over a manifest of utterances")
    v.add_argument("--pairs", required=True, help="TSV: id, snr_db, clean, noisy, enhanced")
    v.add_argument("--out", required=True)
    _add_common(v)

    pr = sub.add_parser("profile", help="per-stage latency report")
    pr.add_argument("--seconds", type=float, default=10.0)
    pr.add_argument("--toy", action="store_true")
    pr.add_argument("--weights", default=None)
    pr.add_argument("--records", action="store_true", help="also print line-delimited records")
    _add_common(pr)

    g = sub.add_parser("gan-demo", help="toy adversarial run on a synthetic domain pair")
    g.add_argument("--out", required=True)
    g.add_argument("--steps", type=int, default=200)
    g.add_argument("--size", type=int, default=32)
    g.add_argument("--base-channels", type=int, default=8)
    _add_common(g)

    return p


def _load_config(path) -> dict[str, str]:
    cfg = {}
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected 'key = value'")
        key, value = line.split("=", 1)
        cfg[key.strip().replace("-", "_")] = value.strip()
    return cfg


def _apply_config(parser: _Parser, argv: list[str], args: argparse.Namespace) -> argparse.Namespace:
    if not args.config:
        return args
    overrides = _load_config(args.config)
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    chosen = sub.choices[args.command]
    defaults = {}
    for action in chosen._actions:
        if action.dest in overrides:
            raw = overrides[action.dest]
            if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                defaults[action.dest] = raw.lower() in ("1", "true", "yes", "on")
            elif action.type is not None:
                defaults[action.dest] = action.type(raw)
            else:
                defaults[action.dest] = raw
    chosen.set_defaults(**defaults)
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_mix(args) -> int:
    clean = avse_io.read_wav(args.clean)
    noise = avse_io.read_wav(args.noise)
    noisy, scaled = mix(MixtureSpec(clean, noise, args.snr), seed=args.seed)
    avse_io.write_wav(args.out, noisy)
    if args.out_noise:
        avse_io.write_wav(args.out_noise, scaled)
    print(f"wrote {args.out} at target {args.snr:+.1f} dB")
    return 0


def _cmd_oracle_ibm(args) -> int:
    clean = avse_io.read_wav(args.clean)
    noise = avse_io.read_wav(args.noise)
    if len(clean) != len(noise):
        raise UsageError(f"clean ({len(clean)}) and noise ({len(noise)}) lengths differ")
    mask = ideal_binary_mask(stft(clean), stft(noise), MaskConfig(lc_db=args.lc))
    store = NamedTensorStore()
    store.add("mask", Tensor(mask.values))
    store.add("lc_db", Tensor(np.array([args.lc])))
    avse_io.write_weights(args.out, store)
    print(f"wrote {args.out}: {mask.values.shape[0]} frames, density {mask.values.mean():.3f}")
    return 0


def _predict_mask_rows(mag: np.ndarray, emb: np.ndarray | None, weights: NamedTensorStore) -> np.ndarray:
    streamer = MaskStreamer(weights)
    rows = []
    for t in range(mag.shape[0]):
        if emb is not None and t % 3 == 0:
            idx = t // 3
            if idx >= emb.shape[0]:
                raise UsageError(f"need at least {mag.shape[0] // 3 + 1} embeddings, file has {emb.shape[0]}")
            streamer.push_embedding(emb[idx])
        row = streamer.push_frame(mag[t])
        if row is not None:
            rows.append(row)
    rows.extend(streamer.flush())
    return np.stack(rows)


def _cmd_enhance(args) -> int:
    noisy = avse_io.read_wav(args.infile)
    spec = stft(noisy)  # validates the 16 kHz mono pipeline contract
    if args.debug_ones_mask:
        mask = SpectralMask(np.ones((spec.n_frames, spec.config.fft_bins)), BINARY)
    else:
        if args.weights is None:
            raise UsageError("enhance needs --weights (or --debug-ones-mask)")
        weights = avse_io.read_weights(args.weights)
        from .model import config_from_store

        cfg = config_from_store(weights)
        if cfg.audio_only != args.audio_only:
            mode = "audio-only" if cfg.audio_only else "audio-visual"
            raise UsageError(f"weights are {mode}; pass matching --audio-only flag")
        emb = None
        if not cfg.audio_only:
            if args.emb is None:
                raise UsageError("audio-visual enhancement needs --emb")
            emb = avse_io.read_embeddings(args.emb)
        values = _predict_mask_rows(magnitude(spec), emb, weights)
        mask = SpectralMask(np.clip(values, 0.0, 1.0), SOFT)
        if args.mask_mode == BINARY:
            mask = binarize(mask, 0.5)
    out, clipped = resynthesize(noisy, mask)
    avse_io.write_wav(args.out, out)
    print(f"wrote {args.out} ({len(out)} samples, {clipped} clipped)")
    return 0


def _read_dataset(data_dir) -> list[TrainingItem]:
    files = sorted(Path(data_dir).glob("*.avse"))
    if not files:
        raise UsageError(f"no .avse items in {data_dir}")
    items = []
    for f in files:
        store = avse_io.read_weights(f)
        for key in ("noisy_mag", "ibm", "embeddings"):
            if key not in store:
                raise FormatError(f"{f}: missing tensor {key!r}")
        snr = float(store["snr_db"].data[0]) if "snr_db" in store else 0.0
        items.append(
            TrainingItem(
                store["noisy_mag"].data.astype(np.float64),
                store["ibm"].data.astype(np.float64),
                store["embeddings"].data.astype(np.float64),
                snr,
            )
        )
    return items


def _cmd_train(args) -> int:
    items = _read_dataset(args.data)
    cfg = ModelConfig.toy(audio_only=args.audio_only) if args.toy else ModelConfig(audio_only=args.audio_only)
    lines: list[str] = []

    def log(line):
        lines.append(line)
        print(line)

    result = train(
        items,
        epochs=args.epochs,
        lr=args.lr,
        cfg=cfg,
        seed=args.seed,
        batch_size=args.batch_size,
        log=log,
    )
    avse_io.write_weights(args.out, result.weights)
    if args.history:
        Path(args.history).write_text("\n".join(lines) + "\n")
    first, last = result.history[0], result.history[-1]
    print(f"wrote {args.out}; train BCE {first.train_bce:.4f} -> {last.train_bce:.4f}")
    return 0


def _cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = synth_corpus(args.seed, args.items, seconds=args.seconds)
    rng = np.random.default_rng(args.seed + 1)
    count = 0
    for i, item in enumerate(corpus):
        snr = SNR_GRID_DB[i % len(SNR_GRID_DB)]
        segs = make_segments(
            item.clean, item.noise, item.embeddings, snr, seg_seconds=args.seconds, seed=int(rng.integers(0, 2**31))
        )
        for seg in segs:
            store = NamedTensorStore()
            store.add("noisy_mag", Tensor(seg.noisy_mag))
            store.add("ibm", Tensor(seg.ibm))
            store.add("embeddings", Tensor(seg.embeddings))
            store.add("snr_db", Tensor(np.array([seg.snr_db])))
            avse_io.write_weights(out / f"item_{count:04d}.avse", store)
            count += 1
    print(f"wrote {count} items to {out}")
    return 0


def _cmd_eval(args) -> int:
    rows = []
    for ln, line in enumerate(Path(args.pairs).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise FormatError(f"{args.pairs}:{ln}: expected 5 tab-separated fields, got {len(parts)}")
        rows.append(parts)
    results = []
    by_snr: dict[float, list[tuple[float, float, float, float]]] = {}
    for uid, snr_s, clean_p, noisy_p, enh_p in rows:
        snr = float(snr_s)
        clean = avse_io.read_wav(clean_p)
        noisy = avse_io.read_wav(noisy_p)
        enhanced = avse_io.read_wav(enh_p)
        vals = (
            si_sdr(noisy, clean),
            si_sdr(enhanced, clean),
            stoi(noisy, clean, clean.sample_rate),
            stoi(enhanced, clean, clean.sample_rate),
        )
        results.append((uid, snr) + vals)
        by_snr.setdefault(snr, []).append(vals)
    lines = ["# id\tsnr_db\tsi_sdr_noisy\tsi_sdr_enhanced\tstoi_noisy\tstoi_enhanced"]
    for uid, snr, a, b, c, d in results:
        lines.append(f"{uid}\t{snr:.1f}\t{a:.3f}\t{b:.3f}\t{c:.4f}\t{d:.4f}")
    for snr in sorted(by_snr):
        arr = np.asarray(by_snr[snr])
        m = arr.mean(axis=0)
        lines.append(f"summary\t{snr:.1f}\t{m[0]:.3f}\t{m[1]:.3f}\t{m[2]:.4f}\t{m[3]:.4f}")
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"wrote {args.out}: {len(results)} utterances, {len(by_snr)} SNR groups")
    return 0


def _cmd_profile(args) -> int:
    if args.weights:
        weights = avse_io.read_weights(args.weights)
    else:
        from .model import init_weights

        cfg = ModelConfig.toy() if args.toy else ModelConfig()
        weights = init_weights(cfg, seed=args.seed)
    report = profile(weights, seconds=args.seconds, seed=args.seed)
    print(report.format_table())
    if args.records:
        for rec in report.to_records():
            print(rec)
    return 0


def _write_pgm(path, img: np.ndarray) -> None:
    """Single-channel [-1,1] image as a binary portable graymap."""
    g = np.clip((img[:, :, 0] + 1.0) * 127.5, 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{g.shape[1]} {g.shape[0]}\n255\n".encode())
        f.write(g.tobytes())


def _gan_domains(rng: np.random.Generator, n: int, size: int) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Domain A: darkened blob images; domain B: normal-brightness ones."""
    a, b = [], []
    for _ in range(n):
        base = np.zeros((size, size, 1))
        for _ in range(3):
            cy, cx = rng.uniform(0, size, 2)
            r = rng.uniform(size / 8, size / 3)
            yy, xx = np.mgrid[0:size, 0:size]
            base[:, :, 0] += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
        base = base / max(base.max(), 1e-9)
        a.append(np.clip(base * 0.8 - 0.9, -1, 1))  # dark version
        b.append(np.clip(base * 1.6 - 0.8, -1, 1))  # bright version
    return a, b


def _cmd_gan_demo(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    cfg = GanConfig(residual_blocks=2, base_channels=args.base_channels)
    gw = GanWeights.create(cfg, seed=args.seed)
    opt = GanOptimState.create(gw)
    imgs_a, imgs_b = _gan_domains(rng, 16, args.size)
    g_losses = []
    for step in range(1, args.steps + 1):
        ia = rng.integers(0, len(imgs_a))
        ib = rng.integers(0, len(imgs_b))
        rec = gan_train_step([imgs_a[ia]], [imgs_b[ib]], gw, opt)
        g_losses.append(rec.g_loss)
        if step % 50 == 0 or step == 1:
            print(f"step {step:4d}: d_a {rec.d_a_loss:.3f} d_b {rec.d_b_loss:.3f} g {rec.g_loss:.3f}")
    for i in range(4):
        _write_pgm(out / f"a_{i}_input.pgm", imgs_a[i])
        _write_pgm(out / f"a_{i}_translated.pgm", generator_forward(imgs_a[i], gw.g_ab, cfg).data)
    early = float(np.mean(g_losses[5:15]))
    late = float(np.mean(g_losses[-10:]))
    print(f"generator loss moving average: {early:.3f} (step 10) -> {late:.3f} (end)")
    return 0


_COMMANDS = {
    "mix": _cmd_mix,
    "oracle-ibm": _cmd_oracle_ibm,
    "enhance": _cmd_enhance,
    "train": _cmd_train,
    "synth": _cmd_synth,
    "eval": _cmd_eval,
    "profile": _cmd_profile,
    "gan-demo": _cmd_gan_demo,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _apply_config(parser, argv, args)
        return _COMMANDS[args.command](args)
    except AvseError as err:
        print(f"error:{err.category}: {err}", file=sys.stderr)
        return err.exit_code
    except FileNotFoundError as err:
        print(f"error:io: {err}", file=sys.stderr)
        return 10


if __name__ == "__main__":
    sys.exit(main())
