"""Command-line front end: ``permdyn <subcommand> [flags]``.

Every subcommand that writes an artifact also writes ``<artifact>.manifest.json``
recording the resolved arguments, seeds and paths; ``permdyn replay`` re-runs
a manifest to regenerate its artifact.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .models import (KINDS, ModelConfig, build_model, gradcheck_point, kebab, load_checkpoint,
                     model_gradcheck, save_checkpoint)
from .pdyn import read_pdyn, write_pdyn
from .sim import SimConfig, generate_trajectories, random_labels
from .train import (HeteroConfig, TrainConfig, build_dataset, evaluate, generalization_matrix,
                    heterogeneous_experiment, rollout, train, write_history_csv, write_rollout)

log = logging.getLogger("permdyn")

ARCH_NAMES = [kebab(k) for k in KINDS]


def _radii(text: str) -> tuple:
    return tuple(float(v) for v in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="permdyn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="simulate hard-disc trajectories into a PDYN file")
    g.add_argument("--discs", type=int, default=8)
    g.add_argument("--radius", type=float, default=0.2)
    g.add_argument("--radii", type=_radii, help="comma-separated per-disc radii")
    g.add_argument("--n-traj", type=int, default=100)
    g.add_argument("--steps", type=int, default=400, help="recorded steps per trajectory")
    g.add_argument("--seed", type=int, default=0, help="trajectory k uses seed + k")
    g.add_argument("--labels", action="store_true",
                   help="attach a persistent random 2-vector label to each disc")
    g.add_argument("--label-seed", type=int, default=12345)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train an architecture on a PDYN file")
    t.add_argument("--arch", required=True, choices=ARCH_NAMES)
    t.add_argument("--data", required=True)
    t.add_argument("--eval-data")
    t.add_argument("--steps", type=int, default=30_000)
    t.add_argument("--batch", type=int, default=32)
    t.add_argument("--hidden", type=int, help="default 64 (perm) / 256 (dense)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="checkpoint path (.json)")

    e = sub.add_parser("eval", help="MSE of a checkpoint on a PDYN file")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", help="CSV output")

    gen = sub.add_parser("generalize", help="evaluate checkpoints across disc counts")
    gen.add_argument("--model", action="append", required=True)
    gen.add_argument("--data", action="append", required=True)
    gen.add_argument("--out", help="CSV output")

    r = sub.add_parser("rollout", help="closed-loop prediction from a recorded state")
    r.add_argument("--model", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--index", type=int, default=0, help="trajectory index in --data")
    r.add_argument("--length", type=int, default=40)
    r.add_argument("--out", required=True, help="PDYN output")

    c = sub.add_parser("gradcheck", help="central-difference check of a whole network")
    c.add_argument("--arch", required=True, choices=ARCH_NAMES)
    c.add_argument("--discs", type=int, default=8)
    c.add_argument("--hidden", type=int)
    c.add_argument("--seed", type=int, default=0)

    h = sub.add_parser("hetero", help="labelled vs unlabelled mixed-radius experiment")
    h.add_argument("--n-traj", type=int, default=2000)
    h.add_argument("--eval-traj", type=int, default=200)
    h.add_argument("--steps", type=int, default=30_000)
    h.add_argument("--batch", type=int, default=32)
    h.add_argument("--hidden", type=int, default=64)
    h.add_argument("--seed", type=int, default=0)
    h.add_argument("--out", help="CSV output")

    rp = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    rp.add_argument("manifest")
    return p


def _print_table(header, rows) -> None:
    print("\t".join(header))
    for row in rows:
        print("\t".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in row))


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_manifest(artifact, args, argv, started: float, inputs=(), outputs=()) -> Path:
    resolved = {k: v for k, v in vars(args).items() if k not in ("verbose",)}
    doc = {
        "subcommand": args.command,
        "argv": list(argv),
        "config": resolved,
        "seeds": {k: v for k, v in resolved.items() if "seed" in k},
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs] or [str(artifact)],
        "tool_version": __version__,
        "started_at": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "wall_clock_seconds": time.time() - started,
    }
    path = Path(f"{artifact}.manifest.json")
    path.write_text(json.dumps(doc, indent=1, default=str))
    return path


def cmd_gen(args, argv, started):
    radii = args.radii
    cfg = SimConfig(n_discs=args.discs, radius=args.radius, radii=radii,
                    record_steps=args.steps)
    labels = random_labels(args.discs, args.label_seed) if args.labels else None
    trajs = generate_trajectories(cfg, args.n_traj, args.seed, labels)
    write_pdyn(args.out, trajs)
    write_manifest(args.out, args, argv, started)
    print(f"wrote {args.n_traj} trajectories of {args.discs} discs to {args.out}")


def cmd_train(args, argv, started):
    ds = build_dataset(args.data, split="train")
    ev = build_dataset(args.eval_data, split="eval") if args.eval_data else None
    mc = ModelConfig(kebab_to_kind(args.arch), n_features=ds.n_features,
                     n_objects=ds.n_discs, hidden_width=args.hidden, seed=args.seed)
    tc = TrainConfig(batch_size=args.batch, total_steps=args.steps, seed=args.seed)
    model = build_model(mc)
    args.hidden = model.config.hidden_width
    res = train(model, ds, tc, ev)
    save_checkpoint(model, args.out)
    hist = Path(args.out).with_suffix(".history.csv")
    write_history_csv(res.history, hist)
    write_manifest(args.out, args, argv, started,
                   inputs=[args.data] + ([args.eval_data] if args.eval_data else []),
                   outputs=[args.out, hist])
    last = res.history[-1] if res.history else None
    _print_table(["arch", "steps", "params", "train_mse", "final_eval_mse", "trailing_eval_mse"],
                 [[args.arch, args.steps, model.n_params,
                   last.train_mse if last else float("nan"),
                   res.final_eval_mse, res.trailing_eval_mse]])


def kebab_to_kind(name: str) -> str:
    return {kebab(k): k for k in KINDS}[name]


def cmd_eval(args, argv, started):
    model = load_checkpoint(args.model)
    ds = build_dataset(args.data, split="eval")
    mse = evaluate(model, ds)
    header = ["model", "data", "n_samples", "mse"]
    rows = [[args.model, args.data, len(ds), mse]]
    _print_table(header, rows)
    if args.out:
        _write_csv(args.out, header, [[a, b, c, repr(d)] for a, b, c, d in rows])
        write_manifest(args.out, args, argv, started, inputs=[args.model, args.data])


def cmd_generalize(args, argv, started):
    models = {}
    for path in args.model:
        m = load_checkpoint(path)
        n = m.config.n_objects or _trained_discs(path)
        models[n] = m
    datasets = {}
    for path in args.data:
        ds = build_dataset(path, split="eval")
        datasets[ds.n_discs] = ds
    table = generalization_matrix(models, datasets)
    header = ["train_discs"] + [f"test_{n}" for n in table.test_counts]
    _print_table(header, [[n] + [float(v) for v in row]
                          for n, row in zip(table.train_counts, table.mse)])
    if args.out:
        table.write_csv(args.out)
        write_manifest(args.out, args, argv, started, inputs=args.model + args.data)


def _trained_discs(checkpoint) -> int:
    """Training disc count recorded by ``permdyn train`` in the checkpoint's manifest."""
    manifest = Path(f"{checkpoint}.manifest.json")
    if manifest.exists():
        data = json.loads(manifest.read_text())["config"]["data"]
        from .pdyn import read_header
        if Path(data).exists():
            return read_header(data)["n_discs"]
    raise ValueError(
        f"cannot tell how many discs {checkpoint} was trained on (no manifest next to it)")


def cmd_rollout(args, argv, started):
    model = load_checkpoint(args.model)
    trajs = read_pdyn(args.data)
    if not 0 <= args.index < len(trajs):
        raise IndexError(f"--index {args.index} out of range for {len(trajs)} trajectories")
    res = rollout(model, trajs[args.index].state(0), args.length)
    write_rollout(res, args.out)
    write_manifest(args.out, args, argv, started, inputs=[args.model, args.data])
    from .sim import pair_penetration
    pens = [pair_penetration(s[:, :2], res.trajectory.radii) for s in res.trajectory.states]
    _print_table(["predictions", "model_calls", "truncated_at", "mean_pair_penetration",
                  "max_pair_penetration"],
                 [[res.trajectory.n_states - 1, res.n_calls, res.truncated_at,
                   float(np.mean(pens)), float(np.max(pens))]])


def cmd_gradcheck(args, argv, started):
    mc = ModelConfig(kebab_to_kind(args.arch), n_objects=args.discs, hidden_width=args.hidden,
                     seed=args.seed)
    model = build_model(mc)
    x, target = gradcheck_point(model, args.discs, seed=args.seed)
    rep = model_gradcheck(model, x, target, seed=args.seed)
    _print_table(["arch", "discs", "params", "probes", "skipped_kinks", "max_rel_err"],
                 [[args.arch, args.discs, model.n_params, rep.n_checked, rep.n_skipped,
                   float(rep.max_rel_error)]])


def cmd_hetero(args, argv, started):
    tc = TrainConfig(n_train_traj=args.n_traj, eval_traj=args.eval_traj,
                     total_steps=args.steps, batch_size=args.batch, seed=args.seed)
    cfg = HeteroConfig(hidden_width=args.hidden, train=tc, data_seed=args.seed,
                       model_seed=args.seed)
    out = heterogeneous_experiment(cfg)
    header = ["inputs", "trailing_eval_mse", "final_eval_mse"]
    rows = [["unlabeled", out["mse_unlabeled"], out["final_mse_unlabeled"]],
            ["labeled", out["mse_labeled"], out["final_mse_labeled"]]]
    _print_table(header, rows)
    if args.out:
        _write_csv(args.out, header, [[a, repr(b), repr(c)] for a, b, c in rows])
        write_manifest(args.out, args, argv, started)


def cmd_replay(args, argv, started):
    doc = json.loads(Path(args.manifest).read_text())
    return main(doc["argv"])


COMMANDS = {
    "gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "generalize": cmd_generalize,
    "rollout": cmd_rollout, "gradcheck": cmd_gradcheck, "hetero": cmd_hetero,
    "replay": cmd_replay,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    started = time.time()
    try:
        rc = COMMANDS[args.command](args, argv, started)
    except (OSError, ValueError, IndexError, FloatingPointError, RuntimeError) as exc:
        print(f"permdyn {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return int(rc or 0)


if __name__ == "__main__":
    sys.exit(main())
