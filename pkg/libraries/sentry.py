"""Configure sentry"""

from functools import wraps
import os
import sentry_sdk


def sentry_setup(func):
    """Decorator, to configure sentry when a DSN is available"""

    @wraps(func)
    def sentry_setup_wrap(*args, **kwargs):
        dsn = os.getenv("OWSOL_SENTRY_DSN")
        if dsn:
            sentry_sdk.init(
                dsn=dsn,
                environment=os.getenv("OWSOL_ENVIRONMENT", "local"),
                traces_sample_rate=1.0,
                profiles_sample_rate=1.0
            )
        result = func(*args, **kwargs)

        return result

    return sentry_setup_wrap


def report_exception(err):
    """Forward a handled exception to sentry (no-op when sentry is not initialised)"""

    sentry_sdk.capture_exception(err)
