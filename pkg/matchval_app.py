import sys

from blueprints.cli_cv_bp import bp as cv_bp
from blueprints.cli_experiment_bp import bp as experiment_bp
from blueprints.cli_match_bp import bp as match_bp
from blueprints.cli_simulate_bp import bp as simulate_bp
from blueprints.registry import CliApp
from utils import configure_logging

app = CliApp(prog="matchval", description="matching-based validation of treatment effect estimators")

app.register_commands(simulate_bp)
app.register_commands(match_bp)
app.register_commands(cv_bp)
app.register_commands(experiment_bp)


def main(argv: list[str] | None = None) -> int:
    configure_logging()
    return app.run(argv)


if __name__ == "__main__":
    sys.exit(main())
