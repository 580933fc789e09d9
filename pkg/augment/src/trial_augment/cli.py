"""Command line for the augmentation tool.

`generate` builds prompts per drug/disease and fills a resumable response
cache; `export-names` embeds entity names / criteria text; `export-llm`
embeds cached paragraphs.  Every export lands in the pipeline's embedding
store directory format.
"""

import argparse
import logging
import os
import sys

from .encode import (
    DEFAULT_ENCODER,
    TransformerEncoder,
    embed_and_export,
    read_entity_inventory,
)
from .generate import DEFAULT_MODEL_ID, HttpChatClient, generate_all, load_cached_records
from .prompts import build_prompt

log = logging.getLogger(__name__)

EXPORT_TARGETS = {
    # CLI name -> (store kind, default pooling)
    "drugs": ("DrugName", "mean"),
    "diseases": ("DiseaseName", "mean"),
    "words": ("Word", "mean"),
    "sentences": ("CriterionSentence", "cls"),
}

LLM_KINDS = {"drug": "LlmDrug", "disease": "LlmDisease"}


def _build_encoder(args) -> TransformerEncoder:
    return TransformerEncoder(
        model_name=args.encoder,
        pooling=args.pooling,
        batch_size=args.batch_size,
    )


def cmd_generate(args) -> int:
    inventory = read_entity_inventory(args.records)
    names = inventory["drugs"] if args.kind == "drug" else inventory["diseases"]
    if args.limit:
        names = names[: args.limit]
    client = HttpChatClient(
        endpoint=args.endpoint,
        model_id=args.model,
        api_key=os.environ.get(args.api_key_env) if args.api_key_env else None,
    )
    pairs = [build_prompt(args.kind, name) for name in names]
    records = generate_all(pairs, client, args.cache_dir, workers=args.workers)
    over = sum(r.over_length for r in records)
    print(f"generated/cached {len(records)} paragraphs ({over} over length)", file=sys.stderr)
    return 0


def cmd_export_names(args) -> int:
    inventory = read_entity_inventory(args.records)
    texts = inventory[args.what]
    kind, default_pooling = EXPORT_TARGETS[args.what]
    args.pooling = args.pooling or default_pooling
    encoder = _build_encoder(args)
    count = embed_and_export({t: t for t in texts}, kind, args.out_dir, encoder)
    print(f"exported {count} {kind} vectors (dim {encoder.dimension})", file=sys.stderr)
    return 0


def cmd_export_llm(args) -> int:
    records = load_cached_records(args.cache_dir, kind=args.kind)
    if not records:
        raise ValueError(f"no cached {args.kind} generations under {args.cache_dir}")
    args.pooling = args.pooling or "cls"
    encoder = _build_encoder(args)
    texts = {r.name: r.paragraph for r in records}
    count = embed_and_export(texts, LLM_KINDS[args.kind], args.out_dir, encoder)
    print(f"exported {count} {LLM_KINDS[args.kind]} vectors", file=sys.stderr)
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trial-augment", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate")
    p.add_argument("--records", required=True)
    p.add_argument("--kind", choices=("drug", "disease"), required=True)
    p.add_argument("--cache-dir", required=True)
    p.add_argument("--endpoint", required=True)
    p.add_argument("--model", default=DEFAULT_MODEL_ID)
    p.add_argument("--api-key-env")
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--limit", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("export-names")
    p.add_argument("--records", required=True)
    p.add_argument("--what", choices=tuple(EXPORT_TARGETS), required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--encoder", default=DEFAULT_ENCODER)
    p.add_argument("--pooling", choices=("cls", "mean"))
    p.add_argument("--batch-size", type=int, default=16)
    p.set_defaults(func=cmd_export_names)

    p = sub.add_parser("export-llm")
    p.add_argument("--cache-dir", required=True)
    p.add_argument("--kind", choices=("drug", "disease"), required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--encoder", default=DEFAULT_ENCODER)
    p.add_argument("--pooling", choices=("cls", "mean"))
    p.add_argument("--batch-size", type=int, default=16)
    p.set_defaults(func=cmd_export_llm)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except OSError as exc:
        print(f"trial-augment: I/O error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError) as exc:
        print(f"trial-augment: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
