import logging

from cqstream import config

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

_VERBOSITY_LEVELS = {0: logging.WARNING, 1: logging.INFO}


def setup_logging(verbosity=0):
    """Attach a single stderr handler to the ``cqstream`` logger.

    ``verbosity`` counts -v flags. CQSTREAM_LOG_LEVEL, when set, wins.
    Calling this twice does not stack handlers.
    """
    logger = logging.getLogger("cqstream")
    level = _VERBOSITY_LEVELS.get(verbosity, logging.DEBUG)
    if config.LOG_LEVEL:
        level = logging.getLevelName(config.LOG_LEVEL.upper())
        if not isinstance(level, int):
            level = logging.WARNING
    logger.setLevel(level)

    if not any(getattr(h, "_cqstream", False) for h in logger.handlers):
        formatter = logging.Formatter(LOG_FORMAT)
        channel = logging.StreamHandler()
        channel.setFormatter(formatter)
        channel._cqstream = True
        logger.addHandler(channel)
    return logger
