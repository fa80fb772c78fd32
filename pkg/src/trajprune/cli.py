"""Command-line interface.

Subcommands: synth (toy containers), score, search, prune, schedule, eval,
report. Every command is a deterministic function of its inputs and --seed;
engine failures exit nonzero with one-line error JSON on stderr.

Pruning modes: beta = heads+neurons only; tau = heads+neurons at a relaxed
ratio, token schedule closes the rest; tau-inf = token schedule only.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import container, synth
from .cnn import ChannelMask, CnnGraph, cnn_forward
from .cost import CnnCostModel, CostModel
from .errors import EngineError, ParameterError, ScheduleError
from .importance import (
    ImportanceTable,
    ScoreConfig,
    channel_importance,
    kd_loss,
    score_all,
)
from .model import ModelGraph, PruneMask, forward
from .search import (
    SearchResult,
    channel_search,
    mask_search,
    token_schedule_steps,
)

# RunConfig files are flat key=value lines; these are the recognized keys
# and their parsers.
_CONFIG_KEYS = {
    "task": str,
    "lambda": float,
    "temperature": float,
    "tap": str,
    "depth": str,
    "aggregation": str,
    "batch_size": int,
    "keep_ratio": float,
    "head_keep_ratio": float,
    "mode": str,
    "seed": int,
    "with_tokens": lambda s: s.lower() in ("1", "true", "yes"),
    "random_masks": int,
    "budgets": str,
}
_CONFIG_DESTS = {"lambda": "lam"}


def _load_runconfig(path: str) -> dict:
    out = {}
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParameterError(f"{path}:{ln}: expected key=value")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise ParameterError(f"{path}:{ln}: unknown config key {key!r}")
        out[_CONFIG_DESTS.get(key, key)] = _CONFIG_KEYS[key](value.strip())
    return out


def _add_score_flags(p: argparse.ArgumentParser):
    p.add_argument("--task", choices=("language", "vision"), default="language")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="KL weight (default 0.1 language / 0.01 vision)")
    p.add_argument("--temperature", type=float, default=4.0)
    p.add_argument("--tap", choices=("ffn", "l_norm", "im_dense"), default="ffn")
    p.add_argument("--depth", dest="depth", default="[i+1,N]",
                   choices=("[i]", "[i+1]", "[i,N]", "[i+1,N]"),
                   help="which downstream layers accumulate the feature loss")
    p.add_argument("--aggregation", choices=("sum", "mean"), default="sum")
    p.add_argument("--batch-size", type=int, default=32)


def _cfg(args) -> ScoreConfig:
    return ScoreConfig(task=args.task, lam=args.lam,
                       temperature=args.temperature, aggregation=args.aggregation,
                       trajectory_range=args.depth, tap=args.tap,
                       batch_size=args.batch_size)


def _emit(obj, out_path: str | None):
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if out_path:
        Path(out_path).write_text(text)
    else:
        sys.stdout.write(text)


def _load_table(path: str) -> ImportanceTable:
    return ImportanceTable.from_dict(json.loads(Path(path).read_text()))


def _mask_to_dict(mask: PruneMask) -> dict:
    return {"schema": "prune-mask/1", "heads": mask.heads,
            "neurons": mask.neurons, "token_counts": mask.token_counts}


def _mask_from_dict(d: dict) -> PruneMask:
    if d.get("schema") != "prune-mask/1":
        raise ParameterError("not a prune-mask/1 document")
    return PruneMask(heads=[list(map(int, r)) for r in d["heads"]],
                     neurons=[list(map(int, r)) for r in d["neurons"]],
                     token_counts=d.get("token_counts"))


def _channel_mask_to_dict(mask: ChannelMask) -> dict:
    return {"schema": "channel-mask/1", "channels": mask.channels}


def _channel_mask_from_dict(d: dict) -> ChannelMask:
    if d.get("schema") != "channel-mask/1":
        raise ParameterError("not a channel-mask/1 document")
    return ChannelMask(channels=[list(map(int, r)) for r in d["channels"]])


def _load_mask(path: str):
    d = json.loads(Path(path).read_text())
    if d.get("schema") == "channel-mask/1":
        return _channel_mask_from_dict(d)
    return _mask_from_dict(d)


def _search_report(res: SearchResult, cost: CostModel, budget: int) -> dict:
    return {
        "schema": "search-report/1",
        "baseline_flops": cost.baseline,
        "budget_flops": budget,
        "budget_ratio": budget / cost.baseline,
        "achieved_flops": res.achieved_flops,
        "achieved_ratio": res.achieved_flops / cost.baseline,
        "cumulative_importance": res.cumulative_importance,
        "steps": [{"heads": k, "neurons": m, "cumulative": c}
                  for k, m, c in res.step_log],
    }


# ------------------------------------------------------------------ commands

def cmd_synth(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.arch == "cnn":
        g = synth.toy_cnn(seed=args.seed, channels=tuple(args.channels),
                          n_classes=args.classes)
        container.save_cnn(out / "model.optn", g)
        feats = synth.toy_cnn_batch(seed=args.seed + 1, cnn=g,
                                    batch_size=args.batch, hw=args.hw)
        labels = np.random.default_rng(args.seed + 2).integers(
            0, args.classes, size=args.batch).astype(np.int32)
        container.save_cnn_batch(out / "batch.optn", feats, labels)
    else:
        vocab = args.vocab if args.arch == "language" else None
        model = synth.toy_encoder(
            seed=args.seed, n_blocks=args.blocks, n_heads=args.heads,
            head_dim=args.head_dim, ffn_dim=args.ffn_dim,
            n_classes=args.classes, vocab_size=vocab,
            max_seq=max(args.seq_len, 2 * args.seq_len), pooling=args.pooling)
        container.save_model(out / "model.optn", model)
        batch = synth.toy_batch(seed=args.seed + 1, model=model,
                                batch_size=args.batch, seq_len=args.seq_len)
        container.save_batch(out / "batch.optn", batch)
    sys.stdout.write(json.dumps({
        "model": str(out / "model.optn"), "batch": str(out / "batch.optn"),
        "arch": args.arch, "seed": args.seed}, sort_keys=True) + "\n")
    return 0


def cmd_score(args) -> int:
    graph = container.load_container(args.model)
    if isinstance(graph, CnnGraph):
        feats, _ = container.load_batch(args.batch)
        cfg = _cfg(args)
        feats = feats[: cfg.batch_size]
        table = ImportanceTable(head_scores=[], neuron_scores=[],
                                channel_scores=channel_importance(graph, feats, cfg))
    else:
        batch = container.load_batch(args.batch)
        table = score_all(graph, batch, _cfg(args), with_tokens=args.with_tokens)
    _emit(table.to_dict(), args.out)
    return 0


def cmd_search(args) -> int:
    graph = container.load_container(args.model)
    table = _load_table(args.table)
    if isinstance(graph, CnnGraph):
        feats, _ = container.load_batch(args.batch)
        cost = CnnCostModel(graph, input_hw=feats.shape[2:])
        if table.channel_scores is None:
            raise ParameterError("table has no channel scores for a cnn model")
        budget = cost.budget_from_ratio(args.keep_ratio)
        mask = channel_search(table.channel_scores, cost, budget)
        _emit(_channel_mask_to_dict(mask), args.out)
        if args.report:
            _emit({"schema": "search-report/1",
                   "baseline_flops": cost.baseline,
                   "budget_flops": budget,
                   "budget_ratio": budget / cost.baseline,
                   "achieved_flops": cost.flops(mask),
                   "achieved_ratio": cost.flops(mask) / cost.baseline},
                  args.report)
        return 0
    batch = container.load_batch(args.batch)
    cost = CostModel(graph, seq_len=batch.seq_len)
    budget = cost.budget_from_ratio(args.keep_ratio)
    res = mask_search(table, cost, budget)
    _emit(_mask_to_dict(res.mask), args.out)
    if args.report:
        _emit(_search_report(res, cost, budget), args.report)
    return 0


def _tau_mask(table: ImportanceTable, cost: CostModel, graph: ModelGraph,
              keep_ratio: float, head_keep_ratio: float | None) -> PruneMask:
    """Heads+neurons at a milder ratio, then tokens close the gap. Token
    removal cannot shrink the first block (counts apply after each block), so
    the default head ratio auto-tightens toward the final budget when the
    token phase alone cannot reach it. An explicit ratio is honored strictly."""
    budget = cost.budget_from_ratio(keep_ratio)
    if head_keep_ratio is not None:
        res = mask_search(table, cost, cost.budget_from_ratio(head_keep_ratio))
        counts, _ = token_schedule_steps(table.token_scores, cost, graph,
                                         res.mask, budget)
        mask = res.mask
        mask.token_counts = counts
        return mask
    ratio = (1.0 + keep_ratio) / 2.0
    while True:
        res = mask_search(table, cost, cost.budget_from_ratio(ratio))
        try:
            counts, _ = token_schedule_steps(table.token_scores, cost, graph,
                                             res.mask, budget)
            mask = res.mask
            mask.token_counts = counts
            return mask
        except ScheduleError:
            if ratio - keep_ratio <= 1e-9:
                raise
            ratio = keep_ratio + (ratio - keep_ratio) / 2.0


def cmd_schedule(args) -> int:
    graph = container.load_container(args.model)
    if isinstance(graph, CnnGraph):
        raise ParameterError("token schedules apply to transformer models only")
    batch = container.load_batch(args.batch)
    table = _load_table(args.table)
    if table.token_scores is None:
        raise ParameterError(
            "table has no token scores; run `score --with-tokens` first")
    cost = CostModel(graph, seq_len=batch.seq_len)
    budget = cost.budget_from_ratio(args.keep_ratio)
    if args.mode == "tau":
        mask = _tau_mask(table, cost, graph, args.keep_ratio, args.head_keep_ratio)
    else:  # tau-inf: tokens only
        mask = PruneMask.full(graph)
        counts, _ = token_schedule_steps(table.token_scores, cost, graph,
                                         mask, budget)
        mask.token_counts = counts
    _emit(_mask_to_dict(mask), args.out)
    if args.report:
        _emit({"schema": "schedule-report/1",
               "baseline_flops": cost.baseline,
               "budget_flops": budget,
               "budget_ratio": budget / cost.baseline,
               "achieved_flops": cost.flops(mask),
               "achieved_ratio": cost.flops(mask) / cost.baseline,
               "token_counts": mask.token_counts}, args.report)
    return 0


def _bake_transformer(model: ModelGraph, mask: PruneMask) -> ModelGraph:
    """Zero dropped head slices; physically drop pruned neurons."""
    mask.validate(model)
    dh = model.head_dim
    blocks = []
    ffn_dims = []
    for i, blk in enumerate(model.blocks):
        wq, wk, wv, wo = (w.copy() for w in (blk.wq, blk.wk, blk.wv, blk.wo))
        for h in mask.dropped_heads(i, model.n_heads):
            sl = slice(h * dh, (h + 1) * dh)
            wq[:, sl] = 0
            wk[:, sl] = 0
            wv[:, sl] = 0
            wo[sl, :] = 0
        kept = mask.neurons[i]
        if kept and blk.w1 is not None:
            w1 = np.ascontiguousarray(blk.w1[:, kept])
            w2 = np.ascontiguousarray(blk.w2[kept, :])
        else:
            w1 = w2 = None
        ffn_dims.append(len(kept) if blk.w1 is not None else 0)
        blocks.append(type(blk)(
            wq=wq, wk=wk, wv=wv, wo=wo, w1=w1, w2=w2,
            ln1_gamma=blk.ln1_gamma, ln1_beta=blk.ln1_beta,
            ln2_gamma=blk.ln2_gamma, ln2_beta=blk.ln2_beta))
    return ModelGraph(
        n_blocks=model.n_blocks, d_model=model.d_model, n_heads=model.n_heads,
        head_dim=model.head_dim, ffn_dims=ffn_dims, n_classes=model.n_classes,
        blocks=blocks, classifier=model.classifier, pooling=model.pooling,
        embedding=model.embedding, positional=model.positional)


def _bake_cnn(g: CnnGraph, mask: ChannelMask) -> CnnGraph:
    """Zero dropped producing channels and the matching consumer slices."""
    mask.validate(g)
    filts = [layer.filters.copy() for layer in g.layers]
    scales = [layer.scale.copy() for layer in g.layers]
    shifts = [layer.shift.copy() for layer in g.layers]
    for i in range(len(g.layers)):
        dropped = [c for c in range(filts[i].shape[0])
                   if c not in set(mask.channels[i])]
        filts[i][dropped] = 0
        scales[i][dropped] = 0
        shifts[i][dropped] = 0
        if i + 1 < len(g.layers):
            filts[i + 1][:, dropped] = 0
    layers = [type(layer)(filters=filts[i], scale=scales[i], shift=shifts[i],
                          stride=layer.stride, pad=layer.pad, pool=layer.pool)
              for i, layer in enumerate(g.layers)]
    return CnnGraph(layers=layers, classifier=g.classifier, n_classes=g.n_classes)


def cmd_prune(args) -> int:
    graph = container.load_container(args.model)
    mask = _load_mask(args.mask)
    if isinstance(graph, CnnGraph):
        if not isinstance(mask, ChannelMask):
            raise ParameterError("cnn model needs a channel mask")
        container.save_cnn(args.out, _bake_cnn(graph, mask))
    else:
        if not isinstance(mask, PruneMask):
            raise ParameterError("transformer model needs a prune mask")
        container.save_model(args.out, _bake_transformer(graph, mask))
    out = {"pruned": args.out}
    if isinstance(mask, PruneMask) and mask.token_counts is not None:
        # baking covers heads/neurons; the schedule stays runtime config
        out["token_counts"] = mask.token_counts
    sys.stdout.write(json.dumps(out, sort_keys=True) + "\n")
    return 0


def random_feasible_mask(model: ModelGraph, cost: CostModel, budget: int,
                         rng: np.random.Generator) -> PruneMask:
    """Random mask that fills the budget the same way the search does: a
    random feasible head count with per-block coverage, then random neurons
    until the budget is exhausted."""
    n_blocks, nh = model.n_blocks, model.n_heads
    t = cost.seq_len
    fixed = cost.flops(PruneMask(heads=[[] for _ in range(n_blocks)],
                                 neurons=[[] for _ in range(n_blocks)]))
    k_max = min(n_blocks * nh, (budget - fixed) // cost.head_unit(t))
    if k_max < n_blocks:
        raise ParameterError("budget below the one-head-per-block floor")
    k = int(rng.integers(n_blocks, k_max + 1))
    heads = [[int(rng.integers(0, nh))] for _ in range(n_blocks)]
    pool = [(i, h) for i in range(n_blocks) for h in range(nh)
            if h != heads[i][0]]
    extra = rng.permutation(len(pool))[: k - n_blocks]
    for idx in extra:
        i, h = pool[int(idx)]
        heads[i].append(h)
    mask = PruneMask(heads=[sorted(r) for r in heads],
                     neurons=[[] for _ in range(n_blocks)])
    rem = budget - cost.flops(mask)
    npool = [(i, n) for i in range(n_blocks) for n in range(model.ffn_dims[i])]
    order = rng.permutation(len(npool))
    unit = cost.neuron_unit(t)
    take = min(int(rem // unit), len(npool))
    for idx in order[:take]:
        i, n = npool[int(idx)]
        mask.neurons[i].append(n)
    mask.neurons = [sorted(r) for r in mask.neurons]
    return mask


def _eval_transformer(model, batch, mask, args) -> dict:
    cost = CostModel(model, seq_len=batch.seq_len)
    base = forward(model, batch)
    pruned = forward(model, batch, mask)
    out = {
        "schema": "eval-report/1",
        "flops_ratio": cost.flops(mask) / cost.baseline,
        "agreement": float(np.mean(base.logits.argmax(1) == pruned.logits.argmax(1))),
        "logit_kl": kd_loss(base.logits, pruned.logits, 1.0),
        "logit_max_abs": float(np.abs(base.logits - pruned.logits).max()),
    }
    if batch.labels is not None:
        out["accuracy_base"] = float(np.mean(base.logits.argmax(1) == batch.labels))
        out["accuracy_pruned"] = float(np.mean(pruned.logits.argmax(1) == batch.labels))
    if args.random_masks:
        budget = cost.flops(mask)
        rng = np.random.default_rng(args.seed)
        kls = []
        for _ in range(args.random_masks):
            rnd = random_feasible_mask(model, cost, budget, rng)
            kls.append(kd_loss(base.logits, forward(model, batch, rnd).logits, 1.0))
        out["random_baseline"] = {
            "n": args.random_masks,
            "mean_logit_kl": float(np.mean(kls)),
            "min_logit_kl": float(np.min(kls)),
            "max_logit_kl": float(np.max(kls)),
            "beats_mean": out["logit_kl"] < float(np.mean(kls)),
        }
    return out


def _eval_cnn(g, feats, labels, mask) -> dict:
    cost = CnnCostModel(g, input_hw=feats.shape[2:])
    base = cnn_forward(g, feats)
    pruned = cnn_forward(g, feats, mask)
    out = {
        "schema": "eval-report/1",
        "flops_ratio": cost.flops(mask) / cost.baseline,
        "agreement": float(np.mean(base.logits.argmax(1) == pruned.logits.argmax(1))),
        "logit_kl": kd_loss(base.logits, pruned.logits, 1.0),
        "logit_max_abs": float(np.abs(base.logits - pruned.logits).max()),
    }
    if labels is not None:
        out["accuracy_base"] = float(np.mean(base.logits.argmax(1) == labels))
        out["accuracy_pruned"] = float(np.mean(pruned.logits.argmax(1) == labels))
    return out


def cmd_eval(args) -> int:
    graph = container.load_container(args.model)
    mask = _load_mask(args.mask)
    if isinstance(graph, CnnGraph):
        feats, labels = container.load_batch(args.batch)
        report = _eval_cnn(graph, feats, labels, mask)
    else:
        batch = container.load_batch(args.batch)
        report = _eval_transformer(graph, batch, mask, args)
    _emit(report, args.out)
    return 0


def cmd_report(args) -> int:
    graph = container.load_container(args.model)
    if isinstance(graph, CnnGraph):
        raise ParameterError("budget-sweep reports cover transformer models")
    batch = container.load_batch(args.batch)
    cfg = _cfg(args)
    with_tokens = args.mode in ("tau", "tau-inf")
    table = score_all(graph, batch, cfg, with_tokens=with_tokens)
    cost = CostModel(graph, seq_len=batch.seq_len)
    base = forward(graph, batch)
    rows = []
    for ratio in args.budgets:
        budget = cost.budget_from_ratio(ratio)
        if args.mode == "beta":
            res = mask_search(table, cost, budget)
            mask, cum = res.mask, res.cumulative_importance
        elif args.mode == "tau":
            mask = _tau_mask(table, cost, graph, ratio, args.head_keep_ratio)
            cum = sum(table.head_scores[i][h]
                      for i in range(graph.n_blocks) for h in mask.heads[i])
            cum += sum(table.neuron_scores[i][n]
                       for i in range(graph.n_blocks) for n in mask.neurons[i])
        else:
            mask = PruneMask.full(graph)
            counts, _ = token_schedule_steps(table.token_scores, cost, graph,
                                             mask, budget)
            mask.token_counts = counts
            cum = 0.0
        pruned = forward(graph, batch, mask)
        rows.append({
            "budget_ratio": f"{ratio:.6g}",
            "achieved_ratio": f"{cost.flops(mask) / cost.baseline:.6g}",
            "agreement": f"{float(np.mean(base.logits.argmax(1) == pruned.logits.argmax(1))):.6g}",
            "logit_kl": f"{kd_loss(base.logits, pruned.logits, 1.0):.6g}",
            "cum_importance": f"{cum:.6g}",
        })
    fields = ["budget_ratio", "achieved_ratio", "agreement", "logit_kl",
              "cum_importance"]
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            w.writerows(rows)
    else:
        w = csv.DictWriter(sys.stdout, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)
    return 0


def _ratio(s: str) -> float:
    v = float(s)
    if not 0.0 < v <= 1.0:
        raise argparse.ArgumentTypeError("keep ratio must be in (0,1]")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="trajprune",
        description="Retraining-free structured pruning via downstream-"
                    "trajectory importance under a FLOPs budget.")
    p.add_argument("--config", help="key=value RunConfig file; CLI flags win")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="write a seeded toy model + batch")
    sp.add_argument("--arch", choices=("language", "vision", "cnn"),
                    default="vision")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--blocks", type=int, default=2)
    sp.add_argument("--heads", type=int, default=4)
    sp.add_argument("--head-dim", type=int, default=8)
    sp.add_argument("--ffn-dim", type=int, default=16)
    sp.add_argument("--classes", type=int, default=4)
    sp.add_argument("--seq-len", type=int, default=16)
    sp.add_argument("--batch", type=int, default=32)
    sp.add_argument("--vocab", type=int, default=64)
    sp.add_argument("--pooling", choices=("first", "mean"), default="first")
    sp.add_argument("--channels", type=int, nargs="+", default=[4, 8])
    sp.add_argument("--hw", type=int, default=8)
    sp.set_defaults(fn=cmd_synth)

    sp = sub.add_parser("score", help="emit the importance table as JSON")
    sp.add_argument("--model", required=True)
    sp.add_argument("--batch", required=True)
    sp.add_argument("--out")
    sp.add_argument("--with-tokens", action="store_true",
                    help="also score token positions (vision models)")
    sp.add_argument("--seed", type=int, default=0)
    _add_score_flags(sp)
    sp.set_defaults(fn=cmd_score)

    sp = sub.add_parser("search", help="table + budget -> mask JSON")
    sp.add_argument("--model", required=True)
    sp.add_argument("--batch", required=True)
    sp.add_argument("--table", required=True)
    sp.add_argument("--keep-ratio", type=_ratio, required=True)
    sp.add_argument("--out")
    sp.add_argument("--report")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_search)

    sp = sub.add_parser("schedule", help="derive a token-reduction schedule")
    sp.add_argument("--model", required=True)
    sp.add_argument("--batch", required=True)
    sp.add_argument("--table", required=True)
    sp.add_argument("--keep-ratio", type=_ratio, required=True)
    sp.add_argument("--mode", choices=("tau", "tau-inf"), default="tau")
    sp.add_argument("--head-keep-ratio", type=_ratio, default=None,
                    help="phase-1 budget for tau mode; default (1+keep)/2")
    sp.add_argument("--out")
    sp.add_argument("--report")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_schedule)

    sp = sub.add_parser("prune", help="bake a mask into a new container")
    sp.add_argument("--model", required=True)
    sp.add_argument("--mask", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_prune)

    sp = sub.add_parser("eval", help="base vs pruned on a labeled batch")
    sp.add_argument("--model", required=True)
    sp.add_argument("--batch", required=True)
    sp.add_argument("--mask", required=True)
    sp.add_argument("--random-masks", type=int, default=0,
                    help="compare against N feasibility-matched random masks")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("report", help="budget-sweep CSV")
    sp.add_argument("--model", required=True)
    sp.add_argument("--batch", required=True)
    sp.add_argument("--budgets", type=lambda s: [_ratio(x) for x in s.split(",")],
                    required=True)
    sp.add_argument("--mode", choices=("beta", "tau", "tau-inf"), default="beta")
    sp.add_argument("--head-keep-ratio", type=_ratio, default=None)
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int, default=0)
    _add_score_flags(sp)
    sp.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    pre, _ = parser.parse_known_args(argv)
    if getattr(pre, "config", None):
        try:
            defaults = _load_runconfig(pre.config)
        except EngineError as e:
            sys.stderr.write(json.dumps(
                {"error": e.code, "message": str(e)}) + "\n")
            return 1
        parser.set_defaults(**defaults)
        for sp_action in parser._subparsers._group_actions:
            for sub in sp_action.choices.values():
                known = {a.dest for a in sub._actions}
                sub.set_defaults(**{k: v for k, v in defaults.items()
                                    if k in known})
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except EngineError as e:
        sys.stderr.write(json.dumps({"error": e.code, "message": str(e)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
