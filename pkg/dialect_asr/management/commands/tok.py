from ...file_parsers import InputParser
from ...tokenizer import (
    TokenizerConfig,
    build_tokenizer,
    decode,
    encode,
    register_dialect,
    save_model,
    vocab_breakdown,
)
from ..base import DolphinCommand


class Command(DolphinCommand):
    help = "Build, inspect and extend the hybrid CJK-character / BPE tokenizer."

    def add_verbs(self, subparsers):
        build = self.verb(subparsers, "build", "Train a tokenizer on a text corpus.")
        build.add_argument("--corpus", required=True, help="UTF-8 text, one sentence per line.")
        build.add_argument("--out", required=True, help="Where to write the model JSON.")
        build.add_argument("--vocab-size", dest="target_vocab_size", type=int)
        build.add_argument("--reserved", dest="reserved_dialect_count", type=int)
        build.add_argument("--min-pair-frequency", type=int, default=1)

        for verb, helptext in (("encode", "Text to token ids."), ("decode", "Token ids to text.")):
            sub = self.verb(subparsers, verb, helptext)
            sub.add_argument("--model", required=True)
            if verb == "encode":
                sub.add_argument("--text", required=True)
            else:
                sub.add_argument("--ids", required=True, help='e.g. "5,9,12"')

        register = self.verb(subparsers, "register", "Claim a reserved slot for a new dialect token.")
        register.add_argument("--model", required=True)
        register.add_argument("--name", required=True, help="e.g. <MINNAN>")
        register.add_argument("--out", help="Write the updated model here (default: overwrite --model).")

        stats = self.verb(subparsers, "stats", "Vocabulary breakdown by token kind.")
        stats.add_argument("--model", required=True)

    def handle_build(self, options):
        corpus = InputParser.parse_lines(options["corpus"])
        model = build_tokenizer(corpus, TokenizerConfig(
            target_vocab_size=self.config.target_vocab_size,
            reserved_dialect_count=self.config.reserved_dialect_count,
            min_pair_frequency=options["min_pair_frequency"],
        ))
        save_model(model, options["out"])
        self.emit({"model": options["out"], "breakdown": vocab_breakdown(model)})

    def handle_encode(self, options):
        model = self.model_from(options)
        sequence = encode(options["text"], model)
        self.emit({"ids": sequence.to_list(), "kinds": [kind.value for kind in sequence.kinds]})

    def handle_decode(self, options):
        model = self.model_from(options)
        self.emit({"text": decode(InputParser.parse_id_list(options["ids"]), model)})

    def handle_register(self, options):
        model = self.model_from(options)
        token_id = register_dialect(model, options["name"])
        save_model(model, options["out"] or options["model"])
        self.emit({"name": options["name"], "id": token_id, "free_slots": model.free_slots})

    def handle_stats(self, options):
        self.emit(vocab_breakdown(self.model_from(options)))
