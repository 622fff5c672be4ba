"""Command-line front door wiring all modules into reproducible runs.

Exit codes: 0 success, 2 usage, 3 numeric divergence, 4 I/O.
Every command echoes a config hash and seed into its outputs; numeric output
files carry no timestamps so equal-hash runs are byte-identical.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import baselines, data, evaluation, ttadapt
from .errors import DivergedError, FormatError, InvalidInputError, ProjTuneError
from .model import FeatureBank, class_logits, predict
from .objective import finite_diff_grad, grad_total_loss
from .trainer import (DEFAULT_LAMBDA_GRID, DEFAULT_LR_GRID, LambdaSchedule,
                      TrainConfig, grid_sweep, resolve_lambda, train)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_IO = 4


def _hash_args(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def _write(path, text: str):
    data._atomic_write(path, text.encode())


def _parse_lambda(raw: str, shots: int) -> LambdaSchedule:
    if raw == "inv_shots":
        return LambdaSchedule("inverse_shots", shots=shots)
    if raw in ("inv_shots2", "inv_shots_squared"):
        return LambdaSchedule("inverse_shots_squared", shots=shots)
    try:
        value = float(raw)
    except ValueError:
        raise InvalidInputError(f"bad --lambda value {raw!r}")
    if value == 0.0:
        return LambdaSchedule("zero")
    return LambdaSchedule("constant", value=value)


def cmd_synth(args) -> int:
    cfg = data.SynthConfig(
        n_classes=args.classes, d_pre=args.d_pre, d_embed=args.d_embed,
        shots=args.shots, views=args.views, test_per_class=args.test_per_class,
        sigma_x=args.sigma_x, sigma_t=args.sigma_t, sigma_w=args.sigma_w,
        seed=args.seed)
    scenario = data.synth_generate(cfg)
    out = args.out
    os.makedirs(out, exist_ok=True)
    data.write_fbank(scenario.train, os.path.join(out, "train.fbank"))
    data.write_fbank(scenario.val, os.path.join(out, "val.fbank"))
    data.write_fbank(scenario.test, os.path.join(out, "test.fbank"))
    data.write_tcls(scenario.cls, os.path.join(out, "classes.tcls"))
    data.write_proj(scenario.head0, os.path.join(out, "anchor.proj"),
                    method_tag=baselines.METHOD_PROLIP)
    data.write_manifest(os.path.join(out, "manifest.json"),
                        dataset="synthetic", source="synth_generate",
                        seed=cfg.seed, config_hash=cfg.config_hash(),
                        zero_shot_accuracy=scenario.zero_shot_acc)
    print(f"config_hash={cfg.config_hash()} seed={cfg.seed} "
          f"zero_shot_accuracy={scenario.zero_shot_acc:.4f}")
    return EXIT_OK


def _load_train_inputs(args):
    bank = data.read_fbank(args.bank)
    cls = data.read_tcls(args.tcls)
    head, _ = data.read_proj(args.proj)
    if bank.labels is None:
        raise InvalidInputError("training bank must be labeled")
    return bank, cls, head


def cmd_train(args) -> int:
    bank, cls, head = _load_train_inputs(args)
    cfg = TrainConfig(lr=args.lr, epochs=args.epochs, optimizer=args.optimizer,
                      seed=args.seed, lam=_parse_lambda(args.lam, args.shots))
    os.makedirs(args.out, exist_ok=True)
    method = args.method
    tag = {"prolip": baselines.METHOD_PROLIP,
           "linear_probe": baselines.METHOD_LINEAR_PROBE,
           "linear_adapter": baselines.METHOD_LINEAR_ADAPTER,
           "taskres": baselines.METHOD_TASKRES,
           "textproj": baselines.METHOD_TEXTPROJ}[method]
    try:
        if method == "prolip":
            trained, history = train(head, cls, bank, bank.labels, cfg)
            data.write_proj(trained, os.path.join(args.out, "trained.proj"), tag)
            _write(os.path.join(args.out, "history.jsonl"), history.to_jsonl())
        elif method == "linear_probe":
            probe = baselines.linear_probe_train(bank, bank.labels, cls, head, cfg)
            _save_matrix_container(probe.C, cls.T, head.temp, tag, args.out)
        elif method == "linear_adapter":
            adapter = baselines.linear_adapter_train(bank, bank.labels, cls, head, cfg)
            _save_matrix_container(adapter.A, adapter.A0, head.temp, tag, args.out)
        elif method == "taskres":
            tr = baselines.taskres_train(bank, bank.labels, cls, head, cfg,
                                         alpha=args.alpha)
            _save_matrix_container(tr.r, np.zeros_like(tr.r), head.temp, tag, args.out)
        else:  # textproj
            if not args.text_pre:
                raise InvalidInputError("--method textproj requires --text-pre")
            text_bank = data.read_fbank(args.text_pre)
            text_pre = text_bank.X[:, 0, :]
            tp_head, _ = data.read_proj(args.text_proj) if args.text_proj else (None, 0)
            wt0 = tp_head.W0 if tp_head is not None else np.eye(text_pre.shape[1], cls.dim)
            tp = baselines.text_proj_train(text_pre, bank, bank.labels, head, wt0, cfg)
            _save_matrix_container(tp.Wt, tp.Wt0, head.temp, tag, args.out)
    except DivergedError as exc:
        print(f"diverged at epoch {exc.epoch}", file=sys.stderr)
        return EXIT_DIVERGED
    lam = {"kind": cfg.lam.kind, "resolved": resolve_lambda(cfg.lam)}
    summary = {"config_hash": cfg.config_hash(), "seed": cfg.seed,
               "method": method, "lambda": lam, "lr": cfg.lr,
               "epochs": cfg.epochs}
    _write(os.path.join(args.out, "train_summary.json"),
           json.dumps(summary, indent=2, sort_keys=True))
    print(f"config_hash={cfg.config_hash()} seed={cfg.seed} lambda={lam['resolved']}")
    return EXIT_OK


def _save_matrix_container(w, w0, temp, tag, out_dir):
    from .model import ProjectionHead
    head = ProjectionHead(W=np.asarray(w, float), W0=np.asarray(w0, float),
                          temp=temp)
    data.write_proj(head, os.path.join(out_dir, "trained.proj"), tag)


def cmd_eval(args) -> int:
    bank = data.read_fbank(args.bank)
    cls = data.read_tcls(args.tcls)
    head, method_tag = data.read_proj(args.proj)
    if bank.labels is None:
        raise InvalidInputError("evaluation bank must be labeled")
    os.makedirs(args.out, exist_ok=True)
    run_hash = _hash_args({"proj": os.path.basename(args.proj),
                           "bank": os.path.basename(args.bank),
                           "seed": args.seed, "base_new": args.base_new})
    if args.base_new:
        (cls_b, bank_b), (cls_n, bank_n) = data.split_base_new(cls, bank)
        acc_b, acc_n, hm = evaluation.base_new_evaluate(
            head, cls_b, cls_n, bank_b, bank_b.labels, bank_n, bank_n.labels)
        report = {"acc_base": acc_b, "acc_new": acc_n, "harmonic_mean": hm,
                  "config_hash": run_hash, "seed": args.seed}
        _write(os.path.join(args.out, "report.json"),
               json.dumps(report, indent=2, sort_keys=True))
        rows = [
            {"method": f"tag{method_tag}", "dataset": args.dataset,
             "shots": args.shots, "seed": args.seed, "lr": 0.0, "lambda": 0.0,
             "split": split, "accuracy": acc}
            for split, acc in (("base", acc_b), ("new", acc_n))
        ]
        print(f"config_hash={run_hash} acc_base={acc_b:.4f} "
              f"acc_new={acc_n:.4f} H={hm:.4f}")
    else:
        report = evaluation.evaluate(head, cls, bank, bank.labels,
                                     method=f"tag{method_tag}", seed=args.seed,
                                     config_hash=run_hash)
        _write(os.path.join(args.out, "report.json"), report.to_json())
        rows = [report.to_csv_row(dataset=args.dataset, shots=args.shots)]
        print(f"config_hash={run_hash} accuracy={report.accuracy:.4f}")
    _write(os.path.join(args.out, "report.csv"), evaluation.report_csv(rows))
    return EXIT_OK


def cmd_sweep(args) -> int:
    train_bank = data.read_fbank(args.bank)
    val_bank = data.read_fbank(args.val_bank)
    cls = data.read_tcls(args.tcls)
    head, _ = data.read_proj(args.proj)
    lr_grid = [float(x) for x in args.lr_grid.split(",")] if args.lr_grid \
        else list(DEFAULT_LR_GRID)
    lam_grid = [float(x) for x in args.lambda_grid.split(",")] if args.lambda_grid \
        else list(DEFAULT_LAMBDA_GRID)
    best_cfg, table = grid_sweep(head, cls, train_bank, train_bank.labels,
                                 val_bank, val_bank.labels,
                                 lr_grid=lr_grid, lambda_grid=lam_grid,
                                 epochs=args.epochs, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    out = {"config_hash": best_cfg.config_hash(), "seed": args.seed,
           "best": {"lr": best_cfg.lr, "lambda": best_cfg.lam.value},
           "table": table}
    _write(os.path.join(args.out, "sweep.json"),
           json.dumps(out, indent=2, sort_keys=True))
    print(f"config_hash={best_cfg.config_hash()} cells={len(table)} "
          f"best_lr={best_cfg.lr} best_lambda={best_cfg.lam.value}")
    return EXIT_OK


def cmd_ttadapt(args) -> int:
    bank = data.read_fbank(args.bank)
    cls = data.read_tcls(args.tcls)
    head, _ = data.read_proj(args.proj)
    cfg = ttadapt.TTConfig(rho=args.rho, steps=args.steps, lr=args.lr)
    stream = [bank.X[i] for i in range(bank.n_samples)]
    out = ttadapt.tt_adapt_stream(head, cls, stream, cfg)
    os.makedirs(args.out, exist_ok=True)
    run_hash = _hash_args({"rho": args.rho, "steps": args.steps, "lr": args.lr,
                           "seed": args.seed})
    _write(os.path.join(args.out, "ttadapt.jsonl"), ttadapt.stream_to_jsonl(out))
    _write(os.path.join(args.out, "tt_summary.json"), json.dumps(
        {"config_hash": run_hash, "seed": args.seed, "n_samples": len(stream),
         "rho": args.rho, "steps": args.steps, "lr": args.lr},
        indent=2, sort_keys=True))
    if bank.labels is not None:
        preds = np.array([r.get("pred", -1) for r in out["results"]])
        acc = float(np.mean(preds == bank.labels))
        print(f"config_hash={run_hash} accuracy={acc:.4f} "
              f"samples_per_s={out['samples_per_s']:.1f}")
    else:
        print(f"config_hash={run_hash} samples={len(stream)}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    lines = []
    max_rel = 0.0
    for i in range(args.instances):
        d_pre = int(rng.integers(3, args.max_dim + 1))
        d_emb = int(rng.integers(2, min(d_pre, 8) + 1))
        k = int(rng.integers(2, 9))
        n = int(rng.integers(1, 33))
        v = int(rng.integers(1, 4))
        lam = float(rng.choice([0.0, 0.1, 1.0]))
        from .model import ProjectionHead, TextClassifier
        from .numerics import l2_normalize_rows
        head = ProjectionHead(W=rng.standard_normal((d_pre, d_emb)),
                              W0=rng.standard_normal((d_pre, d_emb)),
                              b=rng.standard_normal(d_emb) if i % 2 else None)
        cls = TextClassifier(T=l2_normalize_rows(
            rng.standard_normal((k, d_emb))))
        bank = FeatureBank(X=rng.standard_normal((n, v, d_pre)),
                           labels=rng.integers(0, k, size=n))
        analytic = grad_total_loss(head, cls, bank, bank.labels, lam)
        if args.inject_wrong_sign:  # test hook for the detector itself
            analytic = -analytic
        numeric = finite_diff_grad(head, cls, bank, bank.labels, lam,
                                   step=args.step)
        # infinity-norm relative error (elementwise ratios are dominated by
        # round-off where the true gradient entry is ~0)
        rel = float(np.max(np.abs(analytic - numeric))
                    / max(np.max(np.abs(numeric)), 1e-12))
        max_rel = max(max_rel, rel)
        lines.append(f"instance {i}: D_o={d_pre} D={d_emb} K={k} N={n} V={v} "
                     f"lambda={lam} rel_err={rel:.3e}")
    ok = max_rel <= args.tol
    for line in lines:
        print(line)
    print(f"max_rel_err={max_rel:.3e} tol={args.tol:.1e} "
          f"{'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="projtune",
                                description="few-shot projection-matrix tuning "
                                            "on cached features")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic scenario")
    sp.add_argument("--out", required=True)
    sp.add_argument("--classes", type=int, default=10)
    sp.add_argument("--d-pre", dest="d_pre", type=int, default=32)
    sp.add_argument("--d-embed", dest="d_embed", type=int, default=16)
    sp.add_argument("--shots", type=int, default=4)
    sp.add_argument("--views", type=int, default=4)
    sp.add_argument("--test-per-class", dest="test_per_class", type=int, default=20)
    sp.add_argument("--sigma-x", dest="sigma_x", type=float, default=0.5)
    sp.add_argument("--sigma-t", dest="sigma_t", type=float, default=0.25)
    sp.add_argument("--sigma-w", dest="sigma_w", type=float, default=1.4)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)

    tp = sub.add_parser("train", help="fine-tune on a labeled bank")
    tp.add_argument("--bank", required=True)
    tp.add_argument("--tcls", required=True)
    tp.add_argument("--proj", required=True)
    tp.add_argument("--out", required=True)
    tp.add_argument("--method", default="prolip",
                    choices=["prolip", "linear_probe", "linear_adapter",
                             "taskres", "textproj"])
    tp.add_argument("--lr", type=float, default=1e-4)
    tp.add_argument("--epochs", type=int, default=300)
    tp.add_argument("--lambda", dest="lam", default="inv_shots")
    tp.add_argument("--shots", type=int, default=1)
    tp.add_argument("--alpha", type=float, default=0.1)
    tp.add_argument("--optimizer", default="adaptive_moments",
                    choices=["adaptive_moments", "plain_gd"])
    tp.add_argument("--seed", type=int, default=0)
    tp.add_argument("--text-pre", dest="text_pre", default=None)
    tp.add_argument("--text-proj", dest="text_proj", default=None)
    tp.set_defaults(func=cmd_train)

    ep = sub.add_parser("eval", help="evaluate a head on a labeled bank")
    ep.add_argument("--bank", required=True)
    ep.add_argument("--tcls", required=True)
    ep.add_argument("--proj", required=True)
    ep.add_argument("--out", required=True)
    ep.add_argument("--base-new", dest="base_new", action="store_true")
    ep.add_argument("--dataset", default="synthetic")
    ep.add_argument("--shots", type=int, default=0)
    ep.add_argument("--seed", type=int, default=0)
    ep.set_defaults(func=cmd_eval)

    wp = sub.add_parser("sweep", help="grid search over lr x lambda")
    wp.add_argument("--bank", required=True)
    wp.add_argument("--val-bank", dest="val_bank", required=True)
    wp.add_argument("--tcls", required=True)
    wp.add_argument("--proj", required=True)
    wp.add_argument("--out", required=True)
    wp.add_argument("--lr-grid", dest="lr_grid", default=None)
    wp.add_argument("--lambda-grid", dest="lambda_grid", default=None)
    wp.add_argument("--epochs", type=int, default=300)
    wp.add_argument("--seed", type=int, default=0)
    wp.set_defaults(func=cmd_sweep)

    ap = sub.add_parser("ttadapt", help="test-time adaptation over a stream")
    ap.add_argument("--bank", required=True, help="FBANK; views are the "
                                                  "augmented views per sample")
    ap.add_argument("--tcls", required=True)
    ap.add_argument("--proj", required=True,
                    help="anchor or fine-tuned head (--from-trained composition)")
    ap.add_argument("--out", required=True)
    ap.add_argument("--rho", type=float, default=0.1)
    ap.add_argument("--steps", type=int, default=1)
    ap.add_argument("--lr", type=float, default=1e-4)
    ap.add_argument("--seed", type=int, default=0)
    ap.set_defaults(func=cmd_ttadapt)

    gp = sub.add_parser("gradcheck", help="analytic vs finite-difference check")
    gp.add_argument("--instances", type=int, default=20)
    gp.add_argument("--max-dim", dest="max_dim", type=int, default=16)
    gp.add_argument("--step", type=float, default=1e-5)
    gp.add_argument("--tol", type=float, default=1e-6)
    gp.add_argument("--seed", type=int, default=0)
    gp.add_argument("--inject-wrong-sign", dest="inject_wrong_sign",
                    action="store_true", help=argparse.SUPPRESS)
    gp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ProjTuneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
