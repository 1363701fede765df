from ...biasing import Posteriorgram
from ...decoder import NgramScorer, attention_rescore, build_context_trie, ctc_prefix_beam_search
from ...file_parsers import InputParser
from ...tokenizer import PROMPT_END, PROMPT_START, decode, encode
from ..base import DolphinCommand


class Command(DolphinCommand):
    help = "CTC prefix beam search with hotword fusion, and n-best rescoring."

    def add_verbs(self, subparsers):
        ctc = self.verb(subparsers, "ctc", "Beam-search a posteriorgram.")
        ctc.add_argument("--pg", required=True)
        ctc.add_argument("--beam", dest="beam", type=int)
        ctc.add_argument("--token-beam", dest="token_beam", type=int, help="Tokens expanded per frame; 0 for all.")
        ctc.add_argument("--hotwords", help="One phrase per line (token ids without --model).")
        ctc.add_argument("--model", help="Tokenizer model; also adds decoded text to the output.")
        ctc.add_argument("--lambda", dest="bias_weight", type=float, help="Per-token hotword bonus.")
        ctc.add_argument("--blank", dest="blank_id", type=int)
        ctc.add_argument("--out", help="Also write the n-best JSON here.")

        rescore = self.verb(subparsers, "rescore", "Re-rank an n-best list with a prompt-aware scorer.")
        rescore.add_argument("--nbest", required=True)
        rescore.add_argument("--prompt", default="", help="Prompt text (needs --model) or token ids.")
        rescore.add_argument("--model")
        rescore.add_argument("--ctc-weight", dest="ctc_weight", type=float)
        rescore.add_argument("--train-text", help="Fit the bigram scorer on these lines (needs --model).")
        rescore.add_argument("--min-match", dest="prompt_min_match", type=int)
        rescore.add_argument("--prompt-bonus", dest="prompt_bonus", type=float)

    def handle_ctc(self, options):
        model = self.model_from(options, required=False)
        pg = Posteriorgram.load(options["pg"], blank=self.config.blank_id)
        hotwords = self.hotwords_from(options, model)
        trie = build_context_trie(hotwords, self.config.bias_weight) if hotwords else None
        nbest = ctc_prefix_beam_search(pg, self.config.beam, trie, self.config.token_beam or None)
        if options["out"]:
            InputParser.write_nbest(options["out"], nbest)
        for rank, hypothesis in enumerate(nbest):
            payload = {"rank": rank, **hypothesis.to_dict()}
            if model is not None:
                payload["text"] = decode(hypothesis.tokens, model)
            self.emit(payload)

    def handle_rescore(self, options):
        model = self.model_from(options, required=False)
        nbest = InputParser.parse_nbest(options["nbest"])
        delimiters = ()
        if model is not None:
            start, end = model.token_id(PROMPT_START), model.token_id(PROMPT_END)
            delimiters = (start, end)
            prompt = encode(options["prompt"], model).to_list() if options["prompt"] else []
            if prompt and prompt[0] != start:
                prompt = [start] + prompt + [end]
            vocab = model.size
        else:
            prompt = InputParser.parse_id_list(options["prompt"]) if options["prompt"] else []
            vocab = 1 + max([token for hypothesis in nbest for token in hypothesis.tokens] + prompt + [0])

        scorer_options = {"prompt_bonus": self.config.prompt_bonus, "min_match": self.config.prompt_min_match,
                          "delimiters": delimiters}
        if options["train_text"] and model is not None:
            sequences = [encode(line, model).to_list() for line in InputParser.parse_lines(options["train_text"])]
            scorer = NgramScorer.from_sequences(sequences, vocab, **scorer_options)
        else:
            scorer = NgramScorer.random(vocab, self.config.seed, **scorer_options)

        for rank, hypothesis in enumerate(attention_rescore(nbest, scorer, prompt, self.config.ctc_weight)):
            payload = {"rank": rank, **hypothesis.to_dict()}
            if model is not None:
                payload["text"] = decode(hypothesis.tokens, model)
            self.emit(payload)
