"""Command-line surface for the pipeline.

Subcommands: preprocess, encode, train, score, features, diagnose, evaluate,
plot, run-all.  Results go to files or stdout; structured logs go to stderr
as ``level=.. stage=.. msg=..`` lines.  Exit codes: 0 success, 2 I/O error,
3 validation error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import os
import sys

import numpy as np

from . import diagnosis, features, hypnodensity, neuralnet, preprocess, signal_io
from .encoding import EncodedRecording, encode_recording
from .errors import CholeskyFailure, HypnopipeError, NaNGradient
from .plot import hypnodensity_svg

EXIT_IO = 2
EXIT_VALIDATION = 3
EXIT_NUMERIC = 4

CONFIG_KEYS = {
    "recording", "out_dir", "mode", "models_dir", "gp_model", "hla",
    "seed", "resolution", "ref", "jobs",
}


def log(stage: str, msg: str, level: str = "info") -> None:
    print(f"level={level} stage={stage} msg={msg}", file=sys.stderr)


def load_config(path: str, overrides: dict | None = None) -> dict:
    with open(path) as f:
        cfg = json.load(f)
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise HypnopipeError(f"unknown config keys: {sorted(unknown)}")
    if overrides:
        cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cfg


def _load_ref(path):
    if path is None:
        return None
    with open(path) as f:
        return preprocess.ReferenceDistribution.from_json(f.read())


def cmd_preprocess(args) -> int:
    psg = signal_io.load_recording(args.input)
    montage, report = preprocess.preprocess_recording(psg, _load_ref(args.ref))
    signal_io.save_recording(montage, args.out)
    with open(os.path.join(args.out, f"{psg.recording_id}.selection.json"), "w") as f:
        json.dump(report, f, indent=1, sort_keys=True)
    log("preprocess", f"wrote montage for {psg.recording_id}")
    return 0


def cmd_encode(args) -> int:
    montage = signal_io.load_recording(args.input)
    enc = encode_recording(montage, args.mode)
    enc.save(args.out)
    log("encode", f"{montage.recording_id}: {args.mode} encoding written")
    return 0


def _labels_for_windows(hyp, segment_s, n_windows):
    reps = max(1, hyp.epoch_s // segment_s)
    labels = []
    for s in hyp.stages:
        idx = hypnodensity.STAGE_INDEX.get(s, 0)
        labels.extend([idx] * reps)
    return labels[:n_windows]


def cmd_train(args) -> int:
    config = neuralnet.NetworkConfig.from_json(open(args.config).read())
    dataset = []
    for enc_path in sorted(glob.glob(os.path.join(args.data, "*.enc.json"))):
        enc = EncodedRecording.load(enc_path)
        hyp_path = enc_path.replace(f".{enc.mode}.enc.json", ".hyp.txt")
        hyp = signal_io.load_hypnogram(hyp_path)
        windows = neuralnet.windows_from_encoded(enc, config)
        labels = _labels_for_windows(hyp, config.segment_s, len(windows))
        dataset.append((windows[:len(labels)], labels))
    configs = neuralnet.make_ensemble(config, n=args.n_models, seed=config.seed)
    for i, cfg in enumerate(configs):
        params, history = neuralnet.train(dataset, cfg)
        neuralnet.save_params(params, cfg, args.out, f"model{i:02d}")
        log("train", f"model{i:02d}: {len(history)} validations, "
                     f"best={max(history) if history else float('nan'):.3f}")
    return 0


def _score_ensemble(models_dir, enc):
    members = []
    for path in sorted(glob.glob(os.path.join(models_dir, "*.model.json"))):
        params, cfg = neuralnet.load_params(path)
        probs = neuralnet.score_recording(params, enc, cfg)
        members.append(hypnodensity.Hypnodensity(
            probs=probs, resolution_s=cfg.segment_s,
            recording_id=enc.recording_id))
    if not members:
        raise HypnopipeError(f"no models found in {models_dir}")
    return members


def cmd_score(args) -> int:
    enc = EncodedRecording.load(args.input)
    members = _score_ensemble(args.models, enc)
    ens = hypnodensity.ensemble_hypnodensity(members)
    with open(args.out, "w") as f:
        f.write(ens.to_csv())
    log("score", f"{enc.recording_id}: {ens.n_models} models, "
                 f"{len(ens.mean.probs)} segments")
    return 0


def _read_hypnodensity_csv(path):
    with open(path) as f:
        return hypnodensity.Hypnodensity.from_csv(f.read())


def cmd_features(args) -> int:
    hd = _read_hypnodensity_csv(args.input)
    epoch_s = 30 if 30 % hd.resolution_s == 0 else hd.resolution_s
    hyp = hypnodensity.to_hypnogram(hd, epoch_s=epoch_s)
    vec = features.assemble(hd, hyp, hla=args.hla)
    with open(args.out, "w") as f:
        if args.out.endswith(".json"):
            f.write(vec.to_json())
        else:
            f.write(vec.to_csv())
    log("features", f"481 features written to {args.out}")
    return 0


def cmd_diagnose(args) -> int:
    if args.fit:
        X, y = _load_matrix(args.matrix)
        sel = diagnosis.rfe(X, y, seed=args.seed)
        cols = sel.selected if len(sel.selected) else np.arange(X.shape[1])
        model = diagnosis.gp_fit(X[:, cols], np.where(y > 0, 1.0, -1.0),
                                 seed=args.seed)
        os.makedirs(args.out, exist_ok=True)
        model.save(args.out)
        with open(os.path.join(args.out, "selection.json"), "w") as f:
            json.dump({"selected": cols.tolist(),
                       "frequency": sel.frequency.tolist()}, f)
        log("diagnose", f"GP fit on {len(cols)} selected features")
        return 0
    model = diagnosis.GPModel.load(os.path.join(args.model, "gp.gp.json"))
    with open(os.path.join(args.model, "selection.json")) as f:
        cols = np.array(json.load(f)["selected"], dtype=int)
    vec = features.FeatureVector.from_json(open(args.input).read())
    score, var = gp_score_vector(model, cols, vec.values)
    report = diagnosis.ensemble_diagnose([score])
    hla = vec.hla_positive if args.hla is None else args.hla
    if hla is not None:
        report = diagnosis.apply_hla(report, bool(hla))
    out = report.to_json()
    if args.out:
        with open(args.out, "w") as f:
            f.write(out)
    else:
        print(out)
    log("diagnose", f"score={report.score:.4f} label={report.label}")
    return 0


def gp_score_vector(model, cols, values):
    return diagnosis.gp_predict(model, np.asarray(values)[cols][None, :])


def _load_matrix(path):
    with open(path) as f:
        rows = list(csv.reader(f))
    body = rows[1:] if not _is_float(rows[0][0]) else rows
    data = np.array([[float(v) for v in r] for r in body])
    return data[:, :-1], data[:, -1]


def _is_float(tok):
    try:
        float(tok)
        return True
    except ValueError:
        return False


def cmd_evaluate(args) -> int:
    with open(args.scores) as f:
        rows = list(csv.reader(f))
    body = rows[1:] if not _is_float(rows[0][0]) else rows
    scores = [float(r[0]) for r in body]
    truth = [bool(int(float(r[1]))) for r in body]
    res = diagnosis.evaluate(scores, truth, threshold=args.threshold)
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["fpr", "tpr"])
        for fpr, tpr in res["roc"]:
            w.writerow([f"{fpr:.6g}", f"{tpr:.6g}"])
    log("evaluate", f"auc={res['auc']:.4f} sens={res['sensitivity']:.4f} "
                    f"spec={res['specificity']:.4f}")
    print(json.dumps({k: res[k] for k in
                      ("sensitivity", "specificity", "auc", "threshold")}))
    return 0


def cmd_plot(args) -> int:
    try:
        hd = _read_hypnodensity_csv(args.input)
    except (ValueError, IndexError) as e:
        raise HypnopipeError(f"malformed hypnodensity CSV: {e}") from e
    with open(args.out, "w") as f:
        f.write(hypnodensity_svg(hd))
    log("plot", f"wrote {args.out}")
    return 0


def cmd_run_all(args) -> int:
    cfg = load_config(args.config, {
        "recording": args.recording, "out_dir": args.out_dir,
    })
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    psg = signal_io.load_recording(cfg["recording"])
    rid = psg.recording_id

    montage, report = preprocess.preprocess_recording(psg, _load_ref(cfg.get("ref")))
    log("preprocess", f"{rid}: channel selection {report}")
    enc = encode_recording(montage, cfg.get("mode", "cc"))
    log("encode", f"{rid}: {enc.mode} encoding done")

    members = _score_ensemble(cfg["models_dir"], enc)
    target_res = int(cfg.get("resolution", members[0].resolution_s))
    members = [hypnodensity.aggregate_resolution(m, target_res)
               if target_res != m.resolution_s else m for m in members]
    ens = hypnodensity.ensemble_hypnodensity(members)
    hd_path = os.path.join(out_dir, f"{rid}.hypnodensity.csv")
    with open(hd_path, "w") as f:
        f.write(ens.to_csv())
    svg_path = os.path.join(out_dir, f"{rid}.hypnodensity.svg")
    with open(svg_path, "w") as f:
        f.write(hypnodensity_svg(ens.mean))
    log("score", f"{rid}: hypnodensity over {len(ens.mean.probs)} segments")

    epoch_s = 30 if 30 % ens.mean.resolution_s == 0 else ens.mean.resolution_s
    hyp = hypnodensity.to_hypnogram(ens.mean, epoch_s=epoch_s)
    hla = cfg.get("hla")
    vec = features.assemble(ens.mean, hyp, hla=hla)
    feat_path = os.path.join(out_dir, f"{rid}.features.csv")
    with open(feat_path, "w") as f:
        f.write(vec.to_csv())
    log("features", f"{rid}: feature vector written")

    gp_dir = cfg["gp_model"]
    model = diagnosis.GPModel.load(os.path.join(gp_dir, "gp.gp.json"))
    with open(os.path.join(gp_dir, "selection.json")) as f:
        cols = np.array(json.load(f)["selected"], dtype=int)
    scores = []
    for member in members:
        m_hyp = hypnodensity.to_hypnogram(member, epoch_s=epoch_s)
        m_vec = features.assemble(member, m_hyp)
        s, _ = gp_score_vector(model, cols, m_vec.values)
        scores.append(s)
    rep = diagnosis.ensemble_diagnose(scores)
    if hla is not None:
        rep = diagnosis.apply_hla(rep, bool(hla))
    diag_path = os.path.join(out_dir, f"{rid}.diagnosis.json")
    with open(diag_path, "w") as f:
        f.write(rep.to_json())
    log("diagnose", f"{rid}: score={rep.score:.4f} label={rep.label}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hypnopipe",
                                description="PSG to hypnodensity and "
                                            "narcolepsy score pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("preprocess", help="band-limit, resample, select channels")
    sp.add_argument("input", help="path to .psgmeta.json")
    sp.add_argument("out", help="output directory")
    sp.add_argument("--ref", help="reference distribution JSON")
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("encode", help="octave or CC encoding")
    sp.add_argument("input")
    sp.add_argument("out")
    sp.add_argument("--mode", choices=("octave", "cc"), default="cc")
    sp.set_defaults(func=cmd_encode)

    sp = sub.add_parser("train", help="train a sleep-stage model ensemble")
    sp.add_argument("--config", required=True, help="NetworkConfig JSON")
    sp.add_argument("--data", required=True, help="dir of *.enc.json + *.hyp.txt")
    sp.add_argument("--out", required=True)
    sp.add_argument("--n-models", type=int, default=neuralnet.ENSEMBLE_SIZE)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("score", help="ensemble hypnodensity for a recording")
    sp.add_argument("input", help="path to .enc.json")
    sp.add_argument("--models", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_score)

    sp = sub.add_parser("features", help="481-dim feature vector from hypnodensity")
    sp.add_argument("input", help="hypnodensity CSV")
    sp.add_argument("--out", required=True)
    sp.add_argument("--hla", type=int, choices=(0, 1), default=None)
    sp.set_defaults(func=cmd_features)

    sp = sub.add_parser("diagnose", help="fit or apply the GP classifier")
    sp.add_argument("--fit", action="store_true")
    sp.add_argument("--matrix", help="CSV of features + last column label (fit)")
    sp.add_argument("--model", help="GP model directory (predict)")
    sp.add_argument("--input", help="feature vector JSON (predict)")
    sp.add_argument("--out")
    sp.add_argument("--hla", type=int, choices=(0, 1), default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_diagnose)

    sp = sub.add_parser("evaluate", help="ROC statistics for scores vs truth")
    sp.add_argument("scores", help="CSV: score,label")
    sp.add_argument("--out", required=True, help="ROC CSV output")
    sp.add_argument("--threshold", type=float, default=diagnosis.THRESHOLD_NO_HLA)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("plot", help="stacked-area SVG of a hypnodensity")
    sp.add_argument("input", help="hypnodensity CSV")
    sp.add_argument("out", help="SVG output path")
    sp.set_defaults(func=cmd_plot)

    sp = sub.add_parser("run-all", help="full pipeline on one recording")
    sp.add_argument("--config", required=True, help="pipeline config JSON")
    sp.add_argument("--recording")
    sp.add_argument("--out-dir")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_run_all)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CholeskyFailure, NaNGradient, np.linalg.LinAlgError,
            FloatingPointError) as e:
        log(args.command, str(e), level="error")
        return EXIT_NUMERIC
    except HypnopipeError as e:
        log(args.command, str(e), level="error")
        return EXIT_VALIDATION
    except OSError as e:
        log(args.command, str(e), level="error")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
