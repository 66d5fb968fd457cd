import os

from cqstream.errors import ManifestParseError

# Defaults can be overridden from the environment, e.g.
#   CQSTREAM_OUTPUT_DIR=/tmp/runs python -m cqstream simulate scenarios/three_clients.spec
OUTPUT_DIR = os.environ.get("CQSTREAM_OUTPUT_DIR", "results")
LOG_LEVEL = os.environ.get("CQSTREAM_LOG_LEVEL", None)

# Reported PSNR for a lossless segment (mse == 0)
PSNR_CAP_DB = float(os.environ.get("CQSTREAM_PSNR_CAP_DB", "100.0"))

# Nominal number of buffer bins over [B_L, B_H]
DEFAULT_BINS = 50

# Exhaustive search guard for the planner oracle
BRUTE_FORCE_MAX_PATHS = 10_000_000

MBPS = 1_000_000.0
KBPS = 1_000.0


def default_output_dir():
    """Re-read the environment so tests can monkeypatch it."""
    return os.environ.get("CQSTREAM_OUTPUT_DIR", OUTPUT_DIR)


def read_key_values(path):
    """Parse a ``key = value`` file into (line_no, key, value) tuples.

    ``#`` starts a comment; ``key,value`` is accepted too. Order and
    repeated keys are preserved.
    """
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            sep = "=" if "=" in text else ","
            if sep not in text:
                raise ManifestParseError(f"expected 'key = value', got {text!r}",
                                         path=path, line=line_no)
            key, value = text.split(sep, 1)
            key, value = key.strip(), value.strip()
            if not key:
                raise ManifestParseError("empty key", path=path, line=line_no)
            entries.append((line_no, key, value))
    return entries
