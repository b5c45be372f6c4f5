"""
Rudimentary logger setup that sends formatted text to stdout.

Library modules and the solver classes ask for child loggers of the
``levypide`` logger, so a single handler on the parent formats everything.
"""
import logging
import sys

from levypide.utils.settings import get_settings

ROOT_LOGGER = 'levypide'
LOG_FORMAT = '%(asctime)s|%(name)s|%(levelname)s|%(message)s'


def get_logger(name=None):
    """
    :param name: child logger name, e.g. 'pide_solver'. Optional.
    :type name: str
    :return: python logger object
    """
    root = logging.getLogger(ROOT_LOGGER)
    if not root.handlers:
        level = getattr(logging, get_settings()['log_level'], logging.INFO)
        root.setLevel(level)
        handler = logging.StreamHandler(sys.stdout)
        handler.setLevel(level)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)
    if name:
        return root.getChild(name)
    return root


class EventLogMixin:
    """
    log(level, message) for classes that carry ``logger`` and ``log_events``.
    Messages go to the logger when one is set and to stderr otherwise.
    """
    logger = None
    log_events = True

    def log(self, level, message):
        if self.log_events:
            if self.logger:
                log_level = getattr(self.logger, level)
                log_level(message)
            else:
                print(f"{level}: {message}", file=sys.stderr)
