"""
Module providing utility functions: console logging, seeding, hashing and JSON artifact helpers.
"""

import datetime
import hashlib
import json
import os
import textwrap
import threading
import zlib
from pathlib import Path
from typing import Any

import numpy as np
from dotenv import load_dotenv

from sxtypes import PROJECT_ROOT, ParameterError


# ------------------------------
#    DECLARATIONS
# ------------------------------


# Define ANSI escape code constants for clarity in the print commands below
BOLD_B = '\x1b[1;34m'   # blue
BOLD_G = '\x1b[1;32m'   # green
BOLD_R = '\x1b[1;31m'   # red
BOLD_Y = '\x1b[1;33m'   # yellow
RESET  = '\x1b[0m'

CONSOLE_WIDTH = 175

THREADS_ENV_VAR = 'SIGNX_THREADS'

# Thread-safe print lock
_print_lock = threading.Lock()


# ------------------------------
#    PRIVATE METHODS
# ------------------------------

def _print_log(message: str, prefix: str = '', color: str = '', output: str = '', duration: str = '', show_time: bool = False, blank_above: bool = False, blank_below: bool = False, wrap_lines: bool = False) -> None:
    """
    Print a formatted log message with optional prefix, color, output, duration, and time.
    Handles blank lines above and below the message for readability.

    Args:
        message (str): The message to print.
        prefix (str, optional): Prefix for the message.
        color (str, optional): ANSI color code.
        output (str, optional): Additional output to append.
        duration (str, optional): Duration string to append.
        show_time (bool, optional): Whether to show the current time.
        blank_above (bool, optional): Whether to print a blank line above.
        blank_below (bool, optional): Whether to print a blank line below.
        wrap_lines (bool, optional): Whether to wrap lines to fit console width.
    """
    time_str    = f' ⌚ {datetime.datetime.now().time()}' if show_time else ''
    output_str  = f' {output}' if output else ''

    # Split on explicit newlines so that each line is wrapped on its own
    full_message = f'{prefix}{color}{message}{RESET}{time_str} {duration}{output_str}'
    lines = full_message.splitlines(keepends = False)

    with _print_lock:
        if blank_above:
            print()

        for line in lines:
            if (wrap_lines):
                print(textwrap.fill(line, width = CONSOLE_WIDTH))
            else:
                print(line)

        if blank_below:
            print()


# ------------------------------
#    PUBLIC METHODS
# ------------------------------

print_error     = lambda msg, output = '', duration = ''                        : _print_log(msg, '⛔ ', BOLD_R, output, duration, True)
print_info      = lambda msg, blank_above = False                               : _print_log(msg, '👉🏽 ', BOLD_B, blank_above = blank_above)
print_ok        = lambda msg, output = '', duration = '', blank_above = True    : _print_log(msg, '✅ ', BOLD_G, output, duration, True, blank_above)
print_warning   = lambda msg, output = '', duration = ''                        : _print_log(msg, '⚠️ ', BOLD_Y, output, duration, True)
print_val       = lambda name, value, val_below = False                         : _print_log(f"{name:<25}:{chr(10) if val_below else ' '}{value}", '👉🏽 ', BOLD_B)
print_header    = lambda msg                                                    : _print_log(f"\n{'=' * len(msg)}\n{msg}\n{'=' * len(msg)}", '', BOLD_G, blank_above=True, blank_below=True)


def format_duration(seconds: float) -> str:
    """
    Format a duration the way the console helpers show it, e.g. '[1m:05s]'.
    """
    minutes, secs = divmod(seconds, 60)
    return f'[{int(minutes)}m:{int(secs):02d}s]'

def load_environment() -> None:
    """
    Load `.env` from the project root (if present) without overriding existing variables.
    """
    env_file = PROJECT_ROOT / '.env'
    if env_file.exists():
        load_dotenv(env_file, override = False)

def get_thread_count() -> int:
    """
    Read the stage-internal parallelism cap from SIGNX_THREADS.

    Returns:
        int: Number of worker threads (at least 1).
    """
    raw = os.getenv(THREADS_ENV_VAR, '1').strip() or '1'

    try:
        count = int(raw)
    except ValueError:
        raise ParameterError(f'{THREADS_ENV_VAR} must be an integer, got {raw!r}')

    return max(1, count)

def stream_id(name: str) -> int:
    """
    Stable 32-bit id of a named random stream.
    """
    return zlib.crc32(name.encode('utf-8'))

def make_rng(seed: int, stream: str, *keys: int) -> np.random.Generator:
    """
    Create an independent generator for a named child stream of the root seed.

    Args:
        seed (int): Root seed.
        stream (str): Stream name, e.g. 'corpus', 'dropout', 'frame-drop', 'augmentation'.
        *keys (int): Further integers (sample id, fold, epoch ...) that index the stream.

    Returns:
        np.random.Generator: A PCG64 generator fully determined by the arguments.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), stream_id(stream), *[int(k) for k in keys]])))

def sha256_file(path: str | Path) -> str:
    """
    Return the hex SHA-256 digest of a file.
    """
    digest = hashlib.sha256()

    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            digest.update(chunk)

    return digest.hexdigest()

def write_json(path: str | Path, data: Any) -> None:
    """
    Write a JSON document with stable key order and UTF-8 encoding.
    """
    with open(path, 'w', encoding = 'utf-8') as f:
        json.dump(data, f, indent = 2, sort_keys = True)
        f.write('\n')

def read_json(path: str | Path) -> Any:
    with open(path, 'r', encoding = 'utf-8') as f:
        return json.load(f)

def append_jsonl(path: str | Path, record: dict) -> None:
    """
    Append one JSON object as a line to a line-delimited stream.
    """
    with open(path, 'a', encoding = 'utf-8') as f:
        f.write(json.dumps(record, sort_keys = True) + '\n')

def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, 'r', encoding = 'utf-8') as f:
        return [json.loads(line) for line in f if line.strip()]

