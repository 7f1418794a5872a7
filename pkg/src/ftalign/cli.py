"""Command-line entry point: gen-data -> train -> index -> search/eval,
plus transport-inequality and per-step-cost diagnostics.

JSON results go to stdout, progress logs to stderr. Exit codes: 0 success,
1 IO error, 2 bad flags/config, 3 evaluation precondition, 4 property failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .datagen import (
    SyntheticConfig,
    generate_catalog,
    generate_interactions,
    load_dataset,
    serialize_dataset,
)
from .encoder import encode, load_model, save_model
from .errors import (
    ConfigError,
    EmptyIndexError,
    FormatError,
    FtalignError,
    MissingViewError,
    NumericalFailureError,
    TooFewViewsError,
    UnknownListingError,
)
from .fusion import WeightScheme
from .index import (
    VIEW_ROLES,
    build_index,
    cross_view_eval,
    knn,
    load_index,
    recall_at_k,
    save_index,
)
from .training import TrainConfig, train
from .transport import coupling_cost, exact_ot, factorized_coupling, negative_dot_cost

SEED_ENV_VAR = "FTX_SEED"

OT_CHECK_TOL = 1e-9

_MODALITY_FLAGS = {"multimodal": "multimodal", "text": "text_only", "image": "image_only"}


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get(SEED_ENV_VAR)
    if env is None:
        return 0
    return int(env)


def _parse_int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part.strip()]


def _synthetic_config(args) -> SyntheticConfig:
    base: dict = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            base = json.load(fh)
        if not isinstance(base, dict):
            raise ConfigError("config file must hold a JSON object")
    overrides = {
        "num_listings": args.num_listings,
        "num_categories": args.num_categories,
        "image_views_n": args.image_views,
        "text_views_m": args.text_views,
        "latent_core_dim": args.core_dim,
        "latent_detail_dim": args.detail_dim,
        "raw_dim": args.raw_dim,
        "view_noise": args.view_noise,
        "query_noise": args.query_noise,
        "interactions_per_listing_rate": args.rate,
        "seed": args.seed,
    }
    for key, value in overrides.items():
        if value is not None:
            base[key] = value
    base.setdefault("seed", _resolve_seed(None))
    return SyntheticConfig.from_dict(base)


def cmd_gen_data(args) -> int:
    config = _synthetic_config(args)
    catalog = generate_catalog(config)
    interactions = generate_interactions(config, catalog)
    serialize_dataset(catalog, interactions, args.out)
    _log(f"wrote {len(catalog)} listings and {len(interactions)} interactions to {args.out}")
    print(json.dumps({
        "listings": len(catalog),
        "interactions": len(interactions),
        "out": str(args.out),
    }))
    return 0


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        scheme=WeightScheme(args.alpha),
        temperature=args.tau,
        batch_size=args.batch,
        grad_accum=args.accum,
        learning_rate=args.lr,
        weight_decay=args.wd,
        epochs=args.epochs,
        seed=_resolve_seed(args.seed),
        embed_dim=args.embed_dim,
        hidden_dim=args.hidden_dim,
        multiview=args.mode == "multiview",
        sampling=args.sampling,
    )


def cmd_train(args) -> int:
    catalog, _ = load_dataset(args.data)
    if not catalog:
        raise ConfigError(f"no listings found under {args.data}")
    config = _train_config(args)
    encoders, stats = train(catalog, config)
    save_model(encoders, args.out)
    stats_lines = [json.dumps({
        "step": rec["step"],
        "loss": rec["loss"],
        "fwd_calls": rec["fwd_calls"],
        "ms_per_step": rec["ms_per_step"],
    }) for rec in stats.steps]
    if args.stats:
        with open(args.stats, "w", encoding="utf-8") as fh:
            fh.write("\n".join(stats_lines) + ("\n" if stats_lines else ""))
    else:
        for line in stats_lines:
            print(line)
    _log(
        f"trained {config.epochs} epoch(s), {len(stats.steps)} steps; "
        f"model saved to {args.out}"
    )
    return 0


def cmd_index(args) -> int:
    catalog, _ = load_dataset(args.data)
    encoders = load_model(args.model)
    index = build_index(
        catalog,
        encoders,
        WeightScheme(args.alpha),
        modality=_MODALITY_FLAGS[args.modality],
        primary_only=args.views == "single",
    )
    save_index(index, args.out)
    _log(f"indexed {len(index)} listings (dim {index.dim}) to {args.out}")
    print(json.dumps({"entries": len(index), "dim": index.dim, "out": str(args.out)}))
    return 0


def cmd_search(args) -> int:
    index = load_index(args.index)
    encoders = load_model(args.model)
    if args.query_file == "-":
        raw = json.load(sys.stdin)
    else:
        with open(args.query_file, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    embedded = encode(encoders.text, np.asarray(raw, dtype=np.float64))
    hits = knn(index, embedded, args.k)
    print(json.dumps([{"id": lid, "score": score} for lid, score in hits]))
    return 0


def cmd_eval_q2i(args) -> int:
    ks = _parse_int_list(args.k)
    index = load_index(args.index)
    encoders = load_model(args.model)
    catalog, interactions = load_dataset(args.data)
    if args.by_category:
        index.categories = {listing.id: listing.category for listing in catalog}
    report = recall_at_k(index, encoders, interactions, ks)
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def cmd_eval_crossview(args) -> int:
    catalog, _ = load_dataset(args.data)
    encoders = load_model(args.model)
    recall = cross_view_eval(catalog, encoders, args.source, args.target, args.k)
    print(json.dumps({
        "source": args.source,
        "target": args.target,
        "k": args.k,
        "recall": recall,
        "num_listings": len(catalog),
    }, indent=2))
    return 0


def cmd_ot_check(args) -> int:
    rng = np.random.default_rng(_resolve_seed(args.seed))
    failed = 0
    worst_gap = 0.0
    for _ in range(args.trials):
        image_views = rng.normal(size=(args.n, args.dim))
        text_views = rng.normal(size=(args.m, args.dim))
        w = rng.dirichlet(np.ones(args.n))
        v = rng.dirichlet(np.ones(args.m))
        cost = negative_dot_cost(image_views, text_views)
        _, optimal = exact_ot(w, v, cost)
        product_cost = coupling_cost(factorized_coupling(w, v), cost)
        gap = optimal - product_cost
        worst_gap = max(worst_gap, gap)
        if gap > OT_CHECK_TOL:
            failed += 1
    print(json.dumps({
        "trials": args.trials,
        "passed": args.trials - failed,
        "failed": failed,
        "n": args.n,
        "m": args.m,
        "worst_violation": worst_gap,
    }))
    return 4 if failed else 0


def cmd_bench(args) -> int:
    view_counts = _parse_int_list(args.views)
    if not view_counts or any(v < 2 for v in view_counts):
        raise ConfigError(f"--views needs counts >= 2, got {args.views!r}")
    seed = _resolve_seed(args.seed)
    results = []
    for views in view_counts:
        data_config = SyntheticConfig(
            num_listings=args.batch * args.steps,
            image_views_n=views,
            text_views_m=views,
            seed=seed,
        )
        catalog = generate_catalog(data_config)
        train_config = TrainConfig(batch_size=args.batch, epochs=1, seed=seed)
        _, stats = train(catalog, train_config)
        fwd_counts = {rec["fwd_calls"] for rec in stats.steps}
        timings = [rec["ms_per_step"] for rec in stats.steps]
        results.append({
            "views": views,
            "steps": len(stats.steps),
            "fwd_calls_per_step": sorted(fwd_counts)[0] if len(fwd_counts) == 1 else sorted(fwd_counts),
            "ms_per_step_median": float(np.median(timings)),
        })
    print(json.dumps(results, indent=2))
    return 0


def _add_seed(parser) -> None:
    parser.add_argument(
        "--seed", type=int, default=None,
        help=f"random seed (falls back to ${SEED_ENV_VAR}, then 0)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ftalign",
        description="Multi-view multimodal fused-embedding training and retrieval at desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a synthetic catalog and interaction log")
    gen.add_argument("--config", help="JSON file with SyntheticConfig fields")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--num-listings", type=int, default=None)
    gen.add_argument("--num-categories", type=int, default=None)
    gen.add_argument("--image-views", type=int, default=None)
    gen.add_argument("--text-views", type=int, default=None)
    gen.add_argument("--core-dim", type=int, default=None)
    gen.add_argument("--detail-dim", type=int, default=None)
    gen.add_argument("--raw-dim", type=int, default=None)
    gen.add_argument("--view-noise", type=float, default=None)
    gen.add_argument("--query-noise", type=float, default=None)
    gen.add_argument("--rate", type=float, default=None,
                     help="interactions per listing (coverage fraction)")
    _add_seed(gen)
    gen.set_defaults(handler=cmd_gen_data)

    tr = sub.add_parser("train", help="train the two encoders on a dataset directory")
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True, help="model file to write (.ftam)")
    tr.add_argument("--alpha", type=float, default=0.6)
    tr.add_argument("--tau", type=float, default=0.07)
    tr.add_argument("--epochs", type=int, default=3)
    tr.add_argument("--batch", type=int, default=32)
    tr.add_argument("--accum", type=int, default=1)
    tr.add_argument("--lr", type=float, default=1e-3)
    tr.add_argument("--wd", type=float, default=0.0)
    tr.add_argument("--embed-dim", type=int, default=16)
    tr.add_argument("--hidden-dim", type=int, default=None)
    tr.add_argument("--mode", choices=("multiview", "singleview"), default="multiview")
    tr.add_argument("--sampling", choices=("independent", "round_robin"), default="independent")
    tr.add_argument("--stats", default=None, help="write step stats JSONL here instead of stdout")
    _add_seed(tr)
    tr.set_defaults(handler=cmd_train)

    ix = sub.add_parser("index", help="build and save a fused-embedding index")
    ix.add_argument("--data", required=True)
    ix.add_argument("--model", required=True)
    ix.add_argument("--out", required=True, help="index file to write (.ftai)")
    ix.add_argument("--alpha", type=float, default=0.6)
    ix.add_argument("--modality", choices=sorted(_MODALITY_FLAGS), default="multimodal")
    ix.add_argument("--views", choices=("multi", "single"), default="multi",
                    help="'single' uses only the primary view per modality")
    ix.set_defaults(handler=cmd_index)

    se = sub.add_parser("search", help="query an index with raw text features")
    se.add_argument("--index", required=True)
    se.add_argument("--model", required=True)
    se.add_argument("--query-file", required=True,
                    help="JSON array of raw query features ('-' for stdin)")
    se.add_argument("-k", type=int, default=10)
    se.set_defaults(handler=cmd_search)

    ev = sub.add_parser("eval", help="retrieval evaluation harnesses")
    ev_sub = ev.add_subparsers(dest="eval_command", required=True)

    q2i = ev_sub.add_parser("q2i", help="query-to-item recall at cutoffs")
    q2i.add_argument("--index", required=True)
    q2i.add_argument("--model", required=True)
    q2i.add_argument("--data", required=True)
    q2i.add_argument("--k", default="10,100,500", help="comma-separated ascending cutoffs")
    q2i.add_argument("--by-category", action="store_true")
    q2i.set_defaults(handler=cmd_eval_q2i)

    cv = ev_sub.add_parser("crossview", help="one view retrieves another, recall@k")
    cv.add_argument("--data", required=True)
    cv.add_argument("--model", required=True)
    cv.add_argument("--source", choices=sorted(VIEW_ROLES), required=True)
    cv.add_argument("--target", choices=sorted(VIEW_ROLES), required=True)
    cv.add_argument("--k", type=int, default=1)
    cv.set_defaults(handler=cmd_eval_crossview)

    ot = sub.add_parser("ot-check", help="exact transport cost <= product-coupling cost trials")
    ot.add_argument("--n", type=int, default=8)
    ot.add_argument("--m", type=int, default=8)
    ot.add_argument("--dim", type=int, default=16)
    ot.add_argument("--trials", type=int, default=500)
    _add_seed(ot)
    ot.set_defaults(handler=cmd_ot_check)

    be = sub.add_parser("bench", help="per-step training cost across view counts")
    be.add_argument("--views", default="2,4,8,16", help="comma-separated view counts")
    be.add_argument("--batch", type=int, default=32)
    be.add_argument("--steps", type=int, default=20)
    _add_seed(be)
    be.set_defaults(handler=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else int(exc.code)
    try:
        return args.handler(args)
    except (UnknownListingError, MissingViewError, TooFewViewsError, EmptyIndexError) as exc:
        _log(f"error: {exc}")
        return 3
    except NumericalFailureError as exc:
        _log(f"error: {exc}")
        return 4
    except (FormatError, OSError) as exc:
        _log(f"error: {exc}")
        return 1
    except (FtalignError, ValueError) as exc:
        _log(f"error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
