"""Command-line driver.

Subcommands: fit-quantizer, train-round1, train-round2, infer, eval, bench.
Exit codes: 1 for configuration problems, 2 for file/IO problems, 3 for
numeric/data problems.  Report-producing commands write CSVs plus rendered
PNG figures into the configured output directory; bench prints to stdout
only (its timings are inherently non-deterministic).
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import figures
from .audio import read_wav, stft, write_wav
from .bitkernel import pack_network, run_sequence
from .config import RunConfig, load_config
from .dataset import build_pairs, collect_train_magnitudes
from .errors import (
    BgruError,
    ConfigError,
    DomainError,
    FormatError,
    NumericError,
    ShapeError,
    StateError,
)
from .gru import MaskSet, Network, WeightMask
from .model_io import (
    MODE_COMPRESSED,
    MODE_PACKED,
    ModelFile,
    float_payload_bytes,
    load_model,
    packed_payload_bytes,
    write_text_atomic,
)
from .numerics import SeededRng
from .pipeline import (
    evaluate_pairs,
    evaluate_pairs_packed,
    mean_sdr,
    median_sdr,
    predict_ibm,
    predict_ibm_packed,
    reconstruct,
)
from .quantizer import fit_codebook_for_magnitudes, log_compress, qad_encode
from .trainer import LOSS_CSV_HEADER, train_round1, train_round2

EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_NUMERIC = 3


def _write_reports_csv(path, reports) -> None:
    lines = [LOSS_CSV_HEADER] + [r.csv_row() for r in reports]
    write_text_atomic(path, "\n".join(lines) + "\n")


def _print_progress(prefix):
    def hook(report):
        pi = "" if report.pi is None else f" pi={report.pi:g}"
        print(f"[{prefix}]{pi} epoch {report.epoch} "
              f"loss {report.loss:.6f} grad {report.grad_norm:.4f}")

    return hook


def _load_corpus(cfg: RunConfig, codebook, split: str):
    return build_pairs(cfg.corpus_spec(), codebook, split)


def cmd_fit_quantizer(args) -> int:
    cfg = load_config(args.config)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    mags = collect_train_magnitudes(cfg.corpus_spec())
    cb, diag = fit_codebook_for_magnitudes(mags)
    lines = ["index,level,threshold"]
    for i, level in enumerate(cb.levels):
        thr = repr(float(cb.thresholds[i])) if i < cb.thresholds.size else ""
        lines.append(f"{i},{float(level)!r},{thr}")
    write_text_atomic(out / "codebook.csv", "\n".join(lines) + "\n")
    figures.save_codebook_figure(log_compress(mags), cb, out / "codebook.png")
    print(f"fitted 16-level codebook in {diag.iterations} iterations, "
          f"final mse {diag.final_mse:.6g}"
          + (" (degenerate)" if diag.degenerate else ""))
    print(f"wrote {out / 'codebook.csv'} and {out / 'codebook.png'}")
    return 0


def cmd_train_round1(args) -> int:
    cfg = load_config(args.config)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    spec = cfg.corpus_spec()
    tc = cfg.train_config()
    cb, _ = fit_codebook_for_magnitudes(collect_train_magnitudes(spec))
    pairs = build_pairs(spec, cb, "train")
    val = build_pairs(spec, cb, "test")
    net, reports = train_round1(tc, pairs, val_pairs=val,
                                progress=_print_progress("round1"))
    model_path = out / "round1.bgru"
    from .model_io import save_model

    save_model(model_path, ModelFile(mode=MODE_COMPRESSED, codebook=cb, net=net))
    _write_reports_csv(out / "metrics_round1.csv", reports)
    figures.save_loss_curve(reports, out / "loss_round1.png",
                            "Round-1 pretraining loss")
    if reports:
        final = reports[-1]
        tail = (f", val SDR {final.val_sdr:.2f} dB"
                if final.val_sdr is not None else "")
        print(f"round-1 done: final loss {final.loss:.6f}{tail}")
    print(f"wrote {model_path}")
    return 0


def cmd_train_round2(args) -> int:
    cfg = load_config(args.config)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    spec = cfg.corpus_spec()
    tc = cfg.train_config()
    model = load_model(args.model)
    if model.mode != MODE_COMPRESSED:
        raise ConfigError(
            "round-2 training needs a round-1 (mode 1) model, "
            f"got mode {model.mode}"
        )
    cb = model.codebook
    pairs = build_pairs(spec, cb, "train")
    val = build_pairs(spec, cb, "test")
    from .model_io import save_model

    def snapshot(pi, net):
        path = out / f"round2_pi_{pi:.2f}.bgru"
        save_model(path, ModelFile(mode=MODE_COMPRESSED, codebook=cb, net=net))
        print(f"[round2] snapshot {path}")

    net, final_masks, reports = train_round2(
        tc, model.net, pairs, val_pairs=val, snapshot_hook=snapshot,
        progress=_print_progress("round2"),
    )
    packed = pack_network(net, final_masks)
    packed_path = out / "round2_packed.bgru"
    save_model(packed_path, ModelFile(mode=MODE_PACKED, codebook=cb, packed=packed))
    _write_reports_csv(out / "metrics_round2.csv", reports)
    figures.save_loss_curve(reports, out / "loss_round2.png",
                            "Round-2 incremental binarization loss")
    stage_points = [(r.pi, r.val_sdr) for r in reports
                    if r.val_sdr is not None and not np.isnan(r.val_sdr)]
    if stage_points:
        from .trainer import evaluate_compressed_sdr

        round1_sdr = evaluate_compressed_sdr(model.net, val, tc)
        figures.save_sdr_vs_pi(stage_points, out / "sdr_vs_pi.png",
                               round1_sdr=round1_sdr)
        for pi, s in stage_points:
            print(f"[round2] stage pi={pi:g}: val SDR {s:.2f} dB")
    print(f"wrote {packed_path}")
    return 0


def _features_for(wav_spec, codebook) -> np.ndarray:
    return np.stack(
        [qad_encode(m, codebook).features() for m in wav_spec.magnitudes()]
    )


def _model_ibm(model: ModelFile, features: np.ndarray) -> np.ndarray:
    if model.mode == MODE_PACKED:
        return predict_ibm_packed(model.packed, features)
    mode = "compressed" if model.mode == MODE_COMPRESSED else "real"
    return predict_ibm(model.net, features, mode)


def cmd_infer(args) -> int:
    model = load_model(args.model)
    wav = read_wav(args.input)
    if wav.rms() == 0.0:
        raise DomainError(f"silent input signal: {args.input}")
    spec = stft(wav)
    features = _features_for(spec, model.codebook)
    ibm = _model_ibm(model, features)
    est = reconstruct(spec, ibm)
    write_wav(args.output, est)
    print(f"wrote {args.output} ({len(est)} samples, "
          f"{int(ibm.sum())}/{ibm.size} mask bins kept)")
    if args.ref:
        ref = read_wav(args.ref)
        if ref.sample_rate != wav.sample_rate:
            print(f"warning: reference sample rate {ref.sample_rate} != "
                  f"input {wav.sample_rate}", file=sys.stderr)
        w = spec.window_size
        n = len(est)
        sl = slice(w, n - w)
        from .audio import sdr as sdr_db

        print(f"SDR vs reference: {sdr_db(ref.samples[sl], est.samples[sl]):.2f} dB")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    model = load_model(args.model)
    pairs = _load_corpus(cfg, model.codebook, "test")
    if model.mode == MODE_PACKED:
        rows = evaluate_pairs_packed(model.packed, pairs)
    else:
        mode = "compressed" if model.mode == MODE_COMPRESSED else "real"
        rows = evaluate_pairs(model.net, pairs, mode)
    lines = ["utterance,sdr_mix,sdr_est"]
    for r in rows:
        lines.append(f"{r.utterance},{r.sdr_mix!r},{r.sdr_est!r}")
    mix_mean = float(np.mean([r.sdr_mix for r in rows]))
    mix_median = float(np.median([r.sdr_mix for r in rows]))
    lines.append(f"mean,{mix_mean!r},{mean_sdr(rows)!r}")
    lines.append(f"median,{mix_median!r},{median_sdr(rows)!r}")
    write_text_atomic(out / "eval.csv", "\n".join(lines) + "\n")
    figures.save_eval_figure(rows, out / "eval.png")
    print(f"evaluated {len(rows)} utterances: mean SDR {mean_sdr(rows):.2f} dB "
          f"(mixture {mix_mean:.2f} dB)")
    print(f"wrote {out / 'eval.csv'}")
    return 0


def _emulation_network(packed) -> tuple[Network, MaskSet]:
    """Float twin of a packed network: ternary weights plus C=1 masks."""
    from .gru import GRU_MATRIX_NAMES, GruLayer, OutputLayer

    layers = []
    masks = {}
    for i, pl in enumerate(packed.layers):
        mats = {}
        for name in GRU_MATRIX_NAMES:
            pm = getattr(pl, name)
            dense = pm.to_dense()
            mats[name] = dense
            nz = (dense != 0).astype(np.float64)
            masks[f"l{i}.{name}"] = WeightMask(
                B=nz * pm.mu, C=np.ones_like(dense), beta=pm.mu, mu=pm.mu
            )
        layers.append(GruLayer(**mats))
    pm = packed.out.Wo
    dense = pm.to_dense()
    out_layer = OutputLayer(Wo=dense)
    masks["out.Wo"] = WeightMask(
        B=(dense != 0).astype(np.float64) * pm.mu,
        C=np.ones_like(dense), beta=pm.mu, mu=pm.mu,
    )
    net = Network(layers=layers, out=out_layer)
    return net, MaskSet(rho=1.0, pi=1.0, masks=masks)


def cmd_bench(args) -> int:
    model = load_model(args.model)
    if model.mode != MODE_PACKED:
        raise ConfigError("bench needs a packed (mode 2) model")
    packed = model.packed
    rng = SeededRng(20260809)
    n_frames = int(args.frames)
    frames = np.where(rng.gen.random((n_frames, packed.input_dim)) < 0.5, -1.0, 1.0)

    t0 = time.perf_counter()
    packed_masks = run_sequence(packed, frames)
    packed_s = time.perf_counter() - t0

    net, msk = _emulation_network(packed)
    act_rng = SeededRng(1)
    h0s = [np.ones(layer.units) for layer in packed.layers]
    t0 = time.perf_counter()
    float_masks = predict_ibm(net, frames, "bgru", masks=msk, act_rng=act_rng,
                              h0s=h0s)
    float_s = time.perf_counter() - t0

    dims = [(l.input_dim, l.units) for l in packed.layers]
    fbytes = float_payload_bytes(dims, packed.out_dim)
    pbytes = packed_payload_bytes(dims, packed.out_dim)
    print(f"frames={n_frames}")
    print(f"packed_frames_per_s={n_frames / packed_s:.1f}")
    print(f"float_frames_per_s={n_frames / float_s:.1f}")
    print(f"packed_file_bytes={os.path.getsize(args.model)}")
    print(f"float_equiv_payload_bytes={fbytes}")
    print(f"packed_payload_bytes={pbytes}")
    print(f"size_ratio={fbytes / pbytes!r}")
    print(f"masks_match={int(np.array_equal(packed_masks, float_masks))}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="bgru",
        description="Bitwise GRU speech denoising: training and inference.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, **flags):
        sp = sub.add_parser(name)
        for flag, kwargs in flags.items():
            sp.add_argument(flag, **kwargs)
        sp.set_defaults(func=func)
        return sp

    add("fit-quantizer", cmd_fit_quantizer,
        **{"--config": dict(required=True)})
    add("train-round1", cmd_train_round1,
        **{"--config": dict(required=True)})
    add("train-round2", cmd_train_round2,
        **{"--config": dict(required=True), "--model": dict(required=True)})
    add("infer", cmd_infer,
        **{"--model": dict(required=True),
           "--in": dict(required=True, dest="input"),
           "--out": dict(required=True, dest="output"),
           "--ref": dict(default=None)})
    add("eval", cmd_eval,
        **{"--config": dict(required=True), "--model": dict(required=True)})
    add("bench", cmd_bench,
        **{"--model": dict(required=True),
           "--frames": dict(default=100, type=int)})
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (DomainError, ShapeError, StateError, NumericError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except BgruError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
