import argparse
import logging
from dataclasses import dataclass, field
from typing import Callable

from pydantic import ValidationError

from models.configs import SETTING_NAMES, CliConfig
from utils import read_json

logger = logging.getLogger(__name__)

Handler = Callable[[CliConfig], int]


def arg(*flags: str, **kwargs) -> tuple[tuple[str, ...], dict]:
    """Argument declaration for `Blueprint.command`; absent flags stay None."""
    if kwargs.get("action") == "store_true":
        kwargs.setdefault("default", None)
    return flags, kwargs


def csv_list(value: str) -> list[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def setting_list(value: str) -> list[str]:
    settings = csv_list(value)
    unknown = [s for s in settings if s not in SETTING_NAMES]
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown setting(s) {', '.join(unknown)}; choose from {', '.join(SETTING_NAMES)}")
    return settings


def float_list(value: str) -> list[float] | None:
    if value == "default":
        return None
    try:
        return [float(item) for item in csv_list(value)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers or 'default', got {value!r}") from None


@dataclass
class Command:
    name: str
    help: str
    arguments: list[tuple[tuple[str, ...], dict]]
    handler: Handler


@dataclass
class Blueprint:
    """Collects subcommands by decorator, registered on the app later."""

    commands: list[Command] = field(default_factory=list)

    def command(self: "Blueprint", name: str, help: str, arguments: list | None = None):
        def decorator(handler: Handler) -> Handler:
            self.commands.append(Command(name, help, list(arguments or []), handler))
            return handler

        return decorator


class CliApp:
    def __init__(self: "CliApp", prog: str, description: str = "") -> None:
        self.prog = prog
        self.description = description
        self.__commands: list[Command] = []

    def register_commands(self: "CliApp", bp: Blueprint) -> None:
        self.__commands.extend(bp.commands)

    def build_parser(self: "CliApp") -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(prog=self.prog, description=self.description)
        subparsers = parser.add_subparsers(dest="_group", metavar="command", required=True)
        groups: dict[str, argparse._SubParsersAction] = {}

        for command in self.__commands:
            group, _, leaf = command.name.partition(" ")
            if leaf:
                if group not in groups:
                    group_parser = subparsers.add_parser(group, help=f"{group} subcommands")
                    groups[group] = group_parser.add_subparsers(dest="_leaf", metavar="action", required=True)
                sub = groups[group].add_parser(leaf, help=command.help)
            else:
                sub = subparsers.add_parser(group, help=command.help)
            sub.add_argument("--config", type=str, default=None, help="JSON file with the same keys as the flags")
            for flags, kwargs in command.arguments:
                sub.add_argument(*flags, **kwargs)
            sub.set_defaults(_handler=command.handler, command=command.name)
        return parser

    def run(self: "CliApp", argv: list[str] | None = None) -> int:
        args = self.build_parser().parse_args(argv)
        options = {k: v for k, v in vars(args).items() if not k.startswith("_") and v is not None}
        config_path = options.pop("config", None)
        try:
            values = read_json(config_path) if config_path else {}
            cfg = CliConfig(**{**values, **options})
        except (OSError, ValueError, ValidationError) as e:
            logger.error("invalid configuration: %s", e)
            return 1

        logger.info("resolved config: %s", cfg.model_dump_json())
        return args._handler(cfg)


MULTIPLICITY_ARGUMENTS = [
    arg("--m-t", dest="m_t", type=int, help="minimum controls per treated unit"),
    arg("--m-c", dest="m_c", type=int, help="minimum treated units per control"),
    arg("--M-t", dest="M_t", type=int, help="maximum controls per treated unit"),
    arg("--M-c", dest="M_c", type=int, help="maximum treated units per control"),
]

FOREST_ARGUMENTS = [
    arg("--trees", type=int, help="forest size (default MATCHVAL_FOREST_TREES or 500)"),
    arg("--min-leaf", dest="min_leaf", type=int, help="minimum leaf size"),
]
