"""End-to-end run on synthetic data: manifest, validation, augmentation,
sampling, sharding, tokenizer, hotword filtering, unbiased and biased
decoding, prompt rescoring and evaluation."""
import io
from collections import Counter

import numpy as np

from ...biasing import FilterConfig, HotwordList, select_prompt_hotwords, two_stage_filter, wrap_prompt
from ...datapipe import ShardWriter, augment_all, iter_records, oversample_short, read_shards, validate, write_shards
from ...decoder import NgramScorer, attention_rescore, build_context_trie, decode_many
from ...metrics import evaluate_corpus, rer_report
from ...sampler import draw_stream, plan_from_records
from ...synth import CJK_SYLLABARY, plant_hotword, synthetic_manifest
from ...tokenizer import PROMPT_END, PROMPT_START, TokenizerConfig, build_tokenizer, register_dialect, vocab_breakdown
from ..base import DolphinCommand

HOTWORDS = ("北京", "上海", "广州", "深圳", "天津", "重庆", "成都", "武汉", "南昌", "杭州", "苏州", "方言")
CONTEXT_TOKENS = 3


class Command(DolphinCommand):
    help = "Run the whole toolkit on synthetic data and report each stage as a JSON line."
    has_verbs = False

    def add_options(self, parser):
        parser.add_argument("--threads", type=int, default=1, help="Decode workers; output order is fixed.")
        parser.add_argument("--out", help="Also write the shard set into this directory.")
        parser.add_argument("--records", type=int, default=400, help="Synthetic manifest size.")
        parser.add_argument("--utterances", type=int, default=24, help="Synthetic posteriorgrams to decode.")
        parser.add_argument("--lambda", dest="bias_weight", type=float)
        parser.add_argument("--beam", dest="beam", type=int)

    def handle_run(self, options):
        config = self.config
        seed = config.seed

        records = synthetic_manifest(options["records"], seed)
        checked = validate(records, config.max_duration)
        self.emit({"stage": "validate", "accepted": len(checked.accepted), "rejected": len(checked.rejected),
                   "reasons": checked.reason_counts()})

        train = augment_all(checked.accepted, config.truncate_prob, config.truncate_fraction, seed)
        train = oversample_short(train, config.short_threshold, config.short_fraction, seed)
        self.emit({"stage": "augment", "records": len(train),
                   "short": sum(1 for record in train if record.duration_s < config.short_threshold)})

        plan = plan_from_records(train, config.alpha, config.size_unit, seed)
        counts = Counter(record.dataset for record in train)
        draws = draw_stream(plan, [counts[name] for name in plan.names], 10_000)
        drawn = Counter(plan.names[dataset] for dataset, _ in draws)
        self.emit({"stage": "sample", "plan": plan.to_dict(),
                   "drawn": {name: drawn[name] / len(draws) for name in plan.names}})

        self.emit({"stage": "shard", **self._shard(train, options["out"])})

        model = build_tokenizer(
            [record.text for record in checked.accepted] + [CJK_SYLLABARY] + list(HOTWORDS),
            TokenizerConfig(target_vocab_size=config.target_vocab_size,
                            reserved_dialect_count=config.reserved_dialect_count),
        )
        for dialect in sorted({record.dialect for record in records if record.dialect}):
            register_dialect(model, f"<{dialect}>")
        self.emit({"stage": "tokenizer", "breakdown": vocab_breakdown(model), "dialects": model.reserved_used})

        hotwords = HotwordList.from_texts(HOTWORDS, model)
        refs, pgs = self._utterances(model, hotwords, options["utterances"], seed)

        filter_config = FilterConfig(config.psc_threshold, config.soc_threshold, config.length_normalize)
        kept = [two_stage_filter(pg, hotwords, filter_config) for pg in pgs]
        tries = [build_context_trie(phrases, config.bias_weight) if phrases else None for phrases in kept]
        self.emit({"stage": "filter", "hotwords": len(hotwords),
                   "kept_per_utterance": [len(phrases) for phrases in kept]})

        token_beam = config.token_beam or None
        unbiased = decode_many(pgs, config.beam, None, options["threads"], token_beam)
        biased = decode_many(pgs, config.beam, tries, options["threads"], token_beam)

        delimiters = (model.token_id(PROMPT_START), model.token_id(PROMPT_END))
        scorer = NgramScorer.random(model.size, seed, prompt_bonus=config.prompt_bonus,
                                    min_match=config.prompt_min_match, delimiters=delimiters)
        rescored = []
        for pg, nbest in zip(pgs, unbiased):
            prompt = wrap_prompt(select_prompt_hotwords(pg, hotwords, config.prompt_threshold,
                                                        config.length_normalize), model)
            rescored.append(attention_rescore(nbest, scorer, prompt.to_list(), config.ctc_weight))

        phrases = [list(phrase.tokens) for phrase in hotwords]
        reports = {}
        for mode, results in (("unbiased", unbiased), ("biased", biased), ("prompt-rescore", rescored)):
            best = [list(nbest[0].tokens) for nbest in results]
            reports[mode] = evaluate_corpus(zip(refs, best), phrases)
            self.emit({"stage": "eval", "mode": mode, "table": reports[mode].format_table(),
                       "recovered": sum(1 for ref, hyp in zip(refs, best) if ref == hyp),
                       "report": reports[mode].to_dict()})

        reduction = rer_report(reports["unbiased"], reports["biased"])
        self.emit({"stage": "rer", "from": "unbiased", "to": "biased", "table": reduction.format_table(),
                   **reduction.to_dict()})

    def _shard(self, records, out_dir):
        """Write and re-read the shard set, on disk when ``out_dir`` is set, else in memory."""
        if out_dir:
            shards = write_shards(records, self.config.shard_size, out_dir, self.config.n_buckets)
            with read_shards([shard.path for shard in shards], self.config.n_readers) as stream:
                read_back = sorted(record.id for record in stream)
            sizes = [shard.record_count for shard in shards]
            total = sum(shard.byte_length for shard in shards)
        else:
            read_back, sizes, total = [], [], 0
            size = self.config.shard_size
            for start in range(0, len(records), size):
                buffer = io.BytesIO()
                writer = ShardWriter(buffer)
                for record in records[start:start + size]:
                    writer.write(record)
                buffer.seek(0)
                read_back.extend(record.id for record in iter_records(buffer))
                sizes.append(writer.record_count)
                total += writer.byte_length
            read_back.sort()
        return {"shards": len(sizes), "records": sum(sizes), "bytes": total,
                "roundtrip": read_back == sorted(record.id for record in records)}

    @staticmethod
    def _utterances(model, hotwords, count, seed):
        """Plant one hotword per utterance behind a few confident context tokens.

        Context and competitor tokens never share a character with a hotword.
        """
        generator = np.random.default_rng([seed, 1])
        hotword_ids = {token_id for phrase in hotwords for token_id in phrase.tokens}
        pool = sorted({model.token_id(char) for char in CJK_SYLLABARY if model.has_token(char)} - hotword_ids)
        refs, pgs = [], []
        for index in range(count):
            phrase = hotwords.phrases[index % len(hotwords)]
            planted = list(phrase.tokens)
            competitor = generator.choice(pool, size=len(planted), replace=False).tolist()
            context = []
            while len(context) < CONTEXT_TOKENS:
                token_id = int(generator.choice(pool))
                if token_id not in competitor and (not context or context[-1] != token_id):
                    context.append(token_id)
            margin = float(generator.uniform(0.05, 0.45))
            pgs.append(plant_hotword(planted, competitor, model.size, margin, context, blank=model.blank_id))
            refs.append(context + planted)
        return refs, pgs
