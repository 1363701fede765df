from ...exceptions import MetricsError
from ...file_parsers import InputParser
from ...metrics import RerReport, evaluate_corpus, rer, scoring_units
from ...tokenizer import encode
from ..base import DolphinCommand


def _rates(text: str):
    try:
        values = [float(part) for part in text.split(",")]
    except ValueError as exc:
        raise MetricsError(f"cannot parse error rates from {text!r}") from exc
    if len(values) not in (1, 3):
        raise MetricsError("give one rate (WER) or three (WER,BWER,UWER)")
    return values


class Command(DolphinCommand):
    help = "WER / BWER / UWER scoring and relative error reduction."

    def add_verbs(self, subparsers):
        wer = self.verb(subparsers, "wer", "Score hypotheses against references, line by line.")
        wer.add_argument("--ref", required=True)
        wer.add_argument("--hyp", required=True)
        wer.add_argument("--hotwords")
        wer.add_argument("--model", help="Score over tokenizer units instead of characters/words.")
        wer.add_argument("--format", choices=("json", "table"), default="json")

        reduction = self.verb(subparsers, "rer", "Relative error reduction from before to after.")
        reduction.add_argument("--before", required=True, help='"1.94" or "1.94,18.76,1.48"')
        reduction.add_argument("--after", required=True)
        reduction.add_argument("--format", choices=("json", "table"), default="json")

    def handle_wer(self, options):
        refs = InputParser.parse_lines(options["ref"])
        hyps = InputParser.parse_lines(options["hyp"])
        if len(refs) != len(hyps):
            raise MetricsError(f"{len(refs)} references but {len(hyps)} hypotheses")
        model = self.model_from(options, required=False)

        def units(text):
            return encode(text, model).to_list() if model is not None else scoring_units(text)

        phrases = InputParser.parse_hotwords(options["hotwords"]) if options["hotwords"] else []
        hotwords = [units(phrase) for phrase in phrases]
        report = evaluate_corpus(((units(ref), units(hyp)) for ref, hyp in zip(refs, hyps)), hotwords)
        self._report(report, options)

    def handle_rer(self, options):
        before, after = _rates(options["before"]), _rates(options["after"])
        if len(before) != len(after):
            raise MetricsError("--before and --after must give the same number of rates")
        values = [rer(before[0], after[0])]
        values += [rer(old, new) if old > 0 else None for old, new in zip(before[1:], after[1:])]
        report = RerReport(*(values + [None, None])[:3])
        self._report(report, options)

    def _report(self, report, options):
        if options["format"] == "table" and not options["json"]:
            self.stdout.write(report.format_table())
        else:
            self.emit(report.to_dict())
