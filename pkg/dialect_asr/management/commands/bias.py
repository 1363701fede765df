import numpy as np

from ...biasing import (
    ContextFusionParams,
    FilterConfig,
    Posteriorgram,
    build_prompt,
    context_fuse,
    filter_scores,
    select_prompt_hotwords,
)
from ...exceptions import BiasingError
from ...tokenizer import decode
from ..base import DolphinCommand


class Command(DolphinCommand):
    help = "Hotword filtering, prompt construction and the context fusion layer."

    def add_verbs(self, subparsers):
        check = self.verb(subparsers, "filter", "Two-stage PSC/SOC hotword filtering against a posteriorgram.")
        check.add_argument("--pg", required=True, help="DOLPPOST posteriorgram file.")
        check.add_argument("--hotwords", required=True, help="One phrase per line (token ids without --model).")
        check.add_argument("--model", help="Tokenizer model used to encode the phrases.")
        check.add_argument("--psc", dest="psc_threshold", type=float)
        check.add_argument("--soc", dest="soc_threshold", type=float)
        check.add_argument("--blank", dest="blank_id", type=int)

        select = self.verb(subparsers, "select", "Prompt-time selection at a single confidence threshold.")
        select.add_argument("--pg", required=True)
        select.add_argument("--hotwords", required=True)
        select.add_argument("--model")
        select.add_argument("--threshold", dest="prompt_threshold", type=float)
        select.add_argument("--blank", dest="blank_id", type=int)

        prompt = self.verb(subparsers, "prompt", "Build a prompt prefix of present hotwords and distractors.")
        prompt.add_argument("--model", required=True)
        prompt.add_argument("--transcript", required=True)
        prompt.add_argument("--hotwords", required=True)
        prompt.add_argument("--distractors", dest="n_distractors", type=int)
        prompt.add_argument("--separator", help="Special token placed between phrases, e.g. <eos>.")

        init = self.verb(subparsers, "init-params", "Write seeded random fusion-layer weights.")
        init.add_argument("--model", required=True, help="Tokenizer model; sets the embedding table size.")
        init.add_argument("--width", type=int, default=64, help="Encoder width d.")
        init.add_argument("--context-width", type=int, default=32, help="Context embedding width d_c.")
        init.add_argument("--heads", type=int, default=4)
        init.add_argument("--out", required=True, help=".npz output path.")

        fuse = self.verb(subparsers, "fuse", "Run the context fusion layer over encoder states.")
        fuse.add_argument("--params", required=True, help=".npz written by init-params.")
        fuse.add_argument("--hidden", required=True, help=".npy matrix of shape (T, d).")
        fuse.add_argument("--hotwords", required=True)
        fuse.add_argument("--model", required=True)
        fuse.add_argument("--out", required=True, help=".npy output path.")

    def _posteriorgram(self, options):
        return Posteriorgram.load(options["pg"], blank=self.config.blank_id)

    def handle_filter(self, options):
        model = self.model_from(options, required=False)
        hotwords = self.hotwords_from(options, model)
        config = FilterConfig(self.config.psc_threshold, self.config.soc_threshold, self.config.length_normalize)
        scores = filter_scores(self._posteriorgram(options), hotwords, config)
        for score in scores:
            self.emit({"phrase": score.text, "psc": score.psc, "soc": score.soc,
                       "stage1": score.kept_by_psc, "kept": score.kept})
        self.emit({"kept": [score.text for score in scores if score.kept], "total": len(scores)})

    def handle_select(self, options):
        model = self.model_from(options, required=False)
        hotwords = self.hotwords_from(options, model)
        selected = select_prompt_hotwords(self._posteriorgram(options), hotwords,
                                          self.config.prompt_threshold, self.config.length_normalize)
        self.emit({"selected": selected.texts, "total": len(hotwords)})

    def handle_prompt(self, options):
        model = self.model_from(options)
        hotwords = self.hotwords_from(options, model)
        prompt = build_prompt(options["transcript"], hotwords, self.config.n_distractors,
                              self.config.seed, model, options["separator"])
        self.emit({"ids": prompt.to_list(), "text": decode(prompt, model)})

    def handle_init_params(self, options):
        model = self.model_from(options)
        params = ContextFusionParams.random_init(model.size, options["width"], options["context_width"],
                                                 options["heads"], self.config.seed)
        params.save(options["out"])
        self.emit({"params": options["out"], "vocab": model.size, "width": params.width,
                   "context_width": params.context_width, "heads": params.n_heads})

    def handle_fuse(self, options):
        model = self.model_from(options)
        hotwords = self.hotwords_from(options, model)
        params = ContextFusionParams.load(options["params"])
        try:
            hidden = np.load(options["hidden"])
        except (OSError, ValueError) as exc:
            raise BiasingError(f"cannot read encoder states from {options['hidden']}: {exc}") from exc
        result = context_fuse(hidden, hotwords, params, return_attention=True)
        try:
            np.save(options["out"], result.output)
        except OSError as exc:
            raise BiasingError(f"cannot write fused states to {options['out']}: {exc}") from exc
        context_mass = result.attention[..., 1:].sum(axis=-1).mean() if len(hotwords) else 0.0
        self.emit({"out": options["out"], "frames": int(result.output.shape[0]), "phrases": len(hotwords),
                   "mean_context_attention": float(context_mass)})
