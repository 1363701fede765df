from ...datapipe import (
    augment_all,
    benchmark_read,
    bucket,
    list_shards,
    manifest_stats,
    oversample_short,
    read_shards,
    validate,
    write_shards,
)
from ...file_parsers import InputParser
from ...synth import synthetic_manifest
from ..base import DolphinCommand


class Command(DolphinCommand):
    help = "Manifest validation, augmentation, bucketing and sharded storage."

    def add_verbs(self, subparsers):
        check = self.verb(subparsers, "validate", "Reject over-long, empty or unknown-dialect records.")
        check.add_argument("--manifest", "--in", dest="manifest", required=True)
        check.add_argument("--max-duration", "--max-dur", dest="max_duration", type=float)
        check.add_argument("--dialects", help='Registered dialect names, e.g. "CANTONESE,WU".')
        check.add_argument("--model", help="Take the registered dialect names from a tokenizer model.")
        check.add_argument("--out", help="Write the accepted records here.")

        augment = self.verb(subparsers, "augment", "End truncation and short-utterance oversampling.")
        augment.add_argument("--manifest", "--in", dest="manifest", required=True)
        augment.add_argument("--out", required=True)
        augment.add_argument("--truncate-prob", dest="truncate_prob", type=float)
        augment.add_argument("--truncate-fraction", dest="truncate_fraction", type=float)
        augment.add_argument("--short-threshold", dest="short_threshold", type=float)
        augment.add_argument("--short-fraction", dest="short_fraction", type=float)

        shard = self.verb(subparsers, "shard", "Write records into length-prefixed shard files.")
        shard.add_argument("--manifest", "--in", dest="manifest", required=True)
        shard.add_argument("--out-dir", "--out", dest="out_dir", required=True)
        shard.add_argument("--shard-size", dest="shard_size", type=int)
        shard.add_argument("--buckets", dest="n_buckets", type=int)

        read = self.verb(subparsers, "read", "Stream the records of a shard set.")
        read.add_argument("--shards", "--dir", dest="shards", required=True, help="Shard directory.")
        read.add_argument("--readers", dest="n_readers", type=int)

        bench = self.verb(subparsers, "bench", "Measure shard read throughput.")
        bench.add_argument("--shards", "--dir", dest="shards", required=True, help="Shard directory.")
        bench.add_argument("--readers", default=None, help='Reader counts to try, e.g. "1,2,4".')
        bench.add_argument("--generate-mb", type=float,
                           help="First fill --shards with about this many MB of synthetic records.")

        stats = self.verb(subparsers, "stats", "Counts per dialect and dataset, duration histogram.")
        stats.add_argument("--manifest", "--in", dest="manifest", required=True)
        stats.add_argument("--bin", type=float, default=5.0, help="Histogram bin width in seconds.")

        buckets = self.verb(subparsers, "bucket", "Duration bucket of every record.")
        buckets.add_argument("--manifest", "--in", dest="manifest", required=True)
        buckets.add_argument("--buckets", dest="n_buckets", type=int)

    def handle_validate(self, options):
        records = InputParser.parse_manifest(options["manifest"])
        dialects = None
        if options["dialects"]:
            dialects = {name.strip().strip("<>") for name in options["dialects"].split(",") if name.strip()}
        elif options["model"]:
            model = self.model_from(options)
            dialects = {name.strip("<>") for name in model.specials.get("dialect", []) + model.reserved_used}
        result = validate(records, self.config.max_duration, dialects)
        if options["out"]:
            InputParser.write_manifest(options["out"], result.accepted)
        for record, reason in result.rejected:
            self.emit({"id": record.id, "rejected": reason.value})
        self.emit({"accepted": len(result.accepted), "rejected": len(result.rejected),
                   "reasons": result.reason_counts()})

    def handle_augment(self, options):
        records = InputParser.parse_manifest(options["manifest"])
        config = self.config
        records = augment_all(records, config.truncate_prob, config.truncate_fraction, config.seed)
        records = oversample_short(records, config.short_threshold, config.short_fraction, config.seed)
        InputParser.write_manifest(options["out"], records)
        short = sum(1 for record in records if record.duration_s < config.short_threshold)
        self.emit({"records": len(records), "short": short, "out": options["out"]})

    def handle_shard(self, options):
        records = InputParser.parse_manifest(options["manifest"])
        shards = write_shards(records, self.config.shard_size, options["out_dir"], self.config.n_buckets)
        for shard in shards:
            self.emit({"path": shard.path, "records": shard.record_count,
                       "bytes": shard.byte_length, "bucket": shard.bucket_id})

    def handle_read(self, options):
        with read_shards(list_shards(options["shards"]), self.config.n_readers) as stream:
            for record in stream:
                payload = record.to_payload()
                payload["audio_bytes"] = len(record.audio) if record.audio is not None else 0
                self.emit(payload)

    def handle_bench(self, options):
        directory = options["shards"]
        if options["generate_mb"]:
            self._generate(directory, options["generate_mb"])
        paths = list_shards(directory)
        counts = InputParser.parse_id_list(options["readers"]) if options["readers"] else [1, self.config.n_readers]
        for readers in counts:
            result = benchmark_read(paths, readers)
            self.emit({"readers": readers, "shards": result.shards, "records": result.records,
                       "bytes": result.bytes, "seconds": round(result.seconds, 4),
                       "mb_per_s": round(result.mb_per_s, 2)})

    def _generate(self, directory, megabytes):
        # synthetic durations average about 4.4 s, roughly 140 kB of 16 kHz PCM
        per_record = 140_000
        count = max(1, int(megabytes * 1e6 // per_record))
        records = synthetic_manifest(count, self.config.seed, long_share=0.0, empty_share=0.0, sample_rate=16_000)
        records = [record for record in records if record.audio is not None]
        write_shards(records, self.config.shard_size, directory)

    def handle_stats(self, options):
        records = InputParser.parse_manifest(options["manifest"])
        self.emit(manifest_stats(records, options["bin"]))

    def handle_bucket(self, options):
        records = InputParser.parse_manifest(options["manifest"])
        for record, bucket_id in zip(records, bucket(records, self.config.n_buckets)):
            self.emit({"id": record.id, "duration_s": record.duration_s, "bucket": bucket_id})
