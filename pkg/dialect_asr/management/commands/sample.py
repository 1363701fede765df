import json
import os
from dataclasses import replace

from ...exceptions import SamplingError
from ...file_parsers import InputParser
from ...sampler import STRATEGIES, SamplingPlan, SamplingSpec, draw_stream, plan_from_records, sampling_probabilities, strategy_alpha
from ..base import DolphinCommand


class Command(DolphinCommand):
    help = "Temperature-based sampling plans across datasets."

    def add_verbs(self, subparsers):
        plan = self.verb(subparsers, "plan", "Compute per-dataset sampling probabilities.")
        source = plan.add_mutually_exclusive_group(required=True)
        source.add_argument("--sizes", help='e.g. "kespeech=1000,aishell=120"')
        source.add_argument("--manifest", help="JSON-lines manifest; sizes are counted per dataset field.")
        source.add_argument("--manifest-dir", help="Directory of *.jsonl manifests, one dataset per file.")
        plan.add_argument("--alpha", type=float)
        plan.add_argument("--strategy", choices=STRATEGIES, default="temperature")
        plan.add_argument("--size-unit", dest="size_unit", choices=("utterances", "hours"))
        plan.add_argument("--out", help="Also write the plan JSON here.")

        draw = self.verb(subparsers, "draw", "Draw a (dataset, item) stream from a saved plan.")
        draw.add_argument("--plan", required=True)
        draw.add_argument("--length", type=int, required=True)
        draw.add_argument("--counts", help="Items per dataset (default: the plan sizes, rounded).")

    def handle_plan(self, options):
        alpha = strategy_alpha(options["strategy"], self.config.alpha)
        if options["sizes"]:
            sizes = InputParser.parse_sizes(options["sizes"])
            spec = SamplingSpec.from_sizes(list(sizes.values()), alpha, list(sizes))
            plan = sampling_probabilities(spec, seed=self.config.seed)
        else:
            records = self._records(options)
            plan = plan_from_records(records, alpha, self.config.size_unit, self.config.seed)
        if options["out"]:
            try:
                with open(options["out"], "w", encoding="utf-8") as handle:
                    json.dump(plan.to_dict(), handle, indent=1)
            except OSError as exc:
                raise SamplingError(f"cannot write plan {options['out']}: {exc}") from exc
        self.emit(plan.to_dict())

    def handle_draw(self, options):
        try:
            with open(options["plan"], encoding="utf-8") as handle:
                plan = SamplingPlan.from_dict(json.load(handle))
        except (OSError, ValueError) as exc:
            raise SamplingError(f"cannot read plan {options['plan']}: {exc}") from exc
        if options["seed"] is not None:
            plan = replace(plan, seed=options["seed"])
        if options["counts"]:
            counts = [int(count) for count in InputParser.parse_id_list(options["counts"])]
        else:
            counts = [max(1, round(size)) for size in plan.sizes]
        for dataset, item in draw_stream(plan, counts, options["length"]):
            self.emit({"dataset": plan.names[dataset] if plan.names else dataset, "item": item})

    @staticmethod
    def _records(options):
        if options["manifest"]:
            return InputParser.parse_manifest(options["manifest"])
        directory = options["manifest_dir"]
        try:
            names = sorted(name for name in os.listdir(directory) if name.endswith(".jsonl"))
        except OSError as exc:
            raise SamplingError(f"cannot list {directory}: {exc}") from exc
        records = []
        for name in names:
            dataset = name[: -len(".jsonl")]
            for record in InputParser.parse_manifest(os.path.join(directory, name)):
                records.append(record if record.dataset else replace(record, dataset=dataset))
        return records
