"""``dolphin [global flags] <command> <verb> [options]``: the toolkit's single entry point.

Global flags (--seed, --config, --json) may come before the command or after
the verb. Exit codes: 0 success, 1 usage or configuration error, 2 data error.
"""
import importlib
import os
import sys
from typing import List, Optional, TextIO, Tuple

COMMANDS = ("tok", "sample", "pipe", "bias", "decode", "eval", "demo")

# flag -> takes a value
GLOBAL_FLAGS = {"--seed": True, "--config": True, "--json": False}


def _usage(stream: TextIO) -> None:
    stream.write("usage: dolphin [--seed N] [--config FILE] [--json] <command> [options]\n\n"
                 "available commands:\n")
    for name in COMMANDS:
        stream.write(f"  {name}\n")


def _leading_globals(argv: List[str]) -> Tuple[List[str], List[str]]:
    """Split global flags given before the command from the rest of argv."""
    leading = []
    index = 0
    while index < len(argv):
        flag, has_inline_value, _ = argv[index].partition("=")
        if flag not in GLOBAL_FLAGS:
            break
        width = 2 if GLOBAL_FLAGS[flag] and not has_inline_value else 1
        leading.extend(argv[index:index + width])
        index += width
    return leading, argv[index:]


def run(argv: List[str], stdout: Optional[TextIO] = None, stderr: Optional[TextIO] = None) -> int:
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "dolphin_platform.settings")
    import django
    from django.core.management.base import CommandError

    django.setup()
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr

    leading, argv = _leading_globals(list(argv))
    if not argv or argv[0] not in COMMANDS:
        if argv and argv[0] not in ("-h", "--help", "help"):
            stderr.write(f"unknown command {argv[0]!r}\n")
            _usage(stderr)
            return 1
        _usage(stderr)
        return 0 if argv else 1

    name = argv[0]
    module = importlib.import_module(f"dialect_asr.management.commands.{name}")
    command = module.Command(stdout=stdout, stderr=stderr)
    parser = command.create_parser("dolphin", name)
    try:
        options = vars(parser.parse_args(argv[1:] + leading))
        args = options.pop("args", ())
        command.execute(*args, **options)
    except CommandError as exc:
        stderr.write(f"error: {exc}\n")
        return exc.returncode
    except SystemExit as exc:
        # argparse exits on --help (0) and on usage errors (2)
        return 0 if not exc.code else 1
    return 0
