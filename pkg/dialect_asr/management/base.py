"""Shared plumbing for the dolphin management commands."""
import argparse
import json
import logging
import math
from dataclasses import fields

from django.core.management.base import BaseCommand, CommandError

from ..biasing import HotwordList
from ..conf import Config, load_config
from ..exceptions import ConfigError, DolphinError
from ..file_parsers import InputParser
from ..tokenizer import load_model

logger = logging.getLogger(__name__)

CONFIG_FIELDS = frozenset(f.name for f in fields(Config))


def jsonable(value):
    """Replace non-finite floats (e.g. the -inf order-score sentinel) with None."""
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {key: jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(item) for item in value]
    return value


class DolphinCommand(BaseCommand):
    """A command whose first positional argument picks a verb.

    Subclasses implement ``add_verbs(subparsers)`` and one
    ``handle_<verb>(options)`` method per verb, or set ``has_verbs = False``
    and implement ``add_options(parser)`` and ``handle_run(options)``. Any
    option whose dest is a Config field overrides the configured value.
    """

    requires_system_checks = []
    has_verbs = True
    config: Config

    def add_arguments(self, parser):
        parser.add_argument("--seed", type=int, help="Seed for every random choice (default from config).")
        parser.add_argument("--json", action="store_true", help="Force JSON output where a table is the default.")
        parser.add_argument("--config", help="KEY=value override file (default: $DOLPHIN_CONFIG).")
        if not self.has_verbs:
            self.add_options(parser)
            return
        subparsers = parser.add_subparsers(dest="verb", metavar="VERB")
        subparsers.required = True
        self.add_verbs(subparsers)

    def add_verbs(self, subparsers):
        raise NotImplementedError

    def add_options(self, parser):
        """Options of a command without verbs."""

    def verb(self, subparsers, name: str, helptext: str):
        """Add a verb parser that also accepts the global flags after the verb."""
        parser = subparsers.add_parser(name, help=helptext)
        parser.add_argument("--seed", type=int, default=argparse.SUPPRESS)
        parser.add_argument("--json", action="store_true", default=argparse.SUPPRESS)
        parser.add_argument("--config", default=argparse.SUPPRESS)
        return parser

    def handle(self, *args, **options):
        try:
            overrides = {key: value for key, value in options.items() if key in CONFIG_FIELDS}
            self.config = load_config(options.get("config"), **overrides)
            verb = options.get("verb") or "run"
            handler = getattr(self, "handle_" + verb.replace("-", "_"))
            handler(options)
        except ConfigError as exc:
            raise CommandError(str(exc), returncode=1) from exc
        except DolphinError as exc:
            logger.debug("%s failed", options.get("verb"), exc_info=True)
            raise CommandError(str(exc), returncode=2) from exc

    def emit(self, payload) -> None:
        """Write one JSON line to stdout."""
        self.stdout.write(json.dumps(jsonable(payload), ensure_ascii=False, sort_keys=True))

    @staticmethod
    def model_from(options, required: bool = True):
        path = options.get("model")
        if not path:
            if required:
                raise ConfigError("--model is required here")
            return None
        return load_model(path)

    @staticmethod
    def hotwords_from(options, model=None) -> HotwordList:
        """Hotword file as a HotwordList: text encoded with ``model``, or id lists without one."""
        path = options.get("hotwords")
        if not path:
            return HotwordList()
        lines = InputParser.parse_hotwords(path)
        if model is not None:
            return HotwordList.from_texts(lines, model)
        return HotwordList.from_token_lists(InputParser.parse_id_list(line) for line in lines)
