import datetime as dt
import sys

from dotenv import load_dotenv

# .env must be loaded before the logger reads OWSOL_LOG_FILE / OWSOL_LOG_LEVEL
load_dotenv()

from cli import run  # noqa: E402
from libraries.sentry import sentry_setup  # noqa: E402
from libraries.utils import default_logger  # noqa: E402


@sentry_setup
def main(argv=None):

    start_process = dt.datetime.now()
    default_logger.info(f"Running owsol {' '.join(sys.argv[1:] if argv is None else argv)}")

    code = run(argv)

    end_process = dt.datetime.now()
    default_logger.info(f"Process duration: {end_process - start_process} (exit {code})")

    return code


if __name__ == '__main__':
    sys.exit(main())
