import os
import copy
import hashlib
import logging
import concurrent.futures as futures

import numpy as np
import colorama
from tqdm import tqdm

class Progress(object):
    """Progress bar over a known number of work items (sweep cells, dictionary blocks)."""

    class StreamProxy(object):

        def write(self, text):
            # tqdm.write appends its own newline
            if text.rstrip():
                tqdm.write(text.rstrip("\n"))

        def flush(self):
            pass

    @staticmethod
    def logstream():
        """Stream for logging handlers that keeps active bars intact."""
        return Progress.StreamProxy()

    def __init__(self, description: str, total: int):
        self._bar = tqdm(total=total, desc=description, unit="cell",
            bar_format=" {desc:16.16} |{bar}| {n_fmt}/{total_fmt} [{elapsed}<{remaining}]")

    def relative(self, n: int = 1):
        self._bar.update(n)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        self.close()

    def close(self):
        self._bar.close()

def file_hash(filename: str, algorithm: str = "md5", blocksize: int = 1 << 16) -> str:
    digest = hashlib.new(algorithm)
    with open(filename, "rb") as handle:
        for block in iter(lambda: handle.read(blocksize), b""):
            digest.update(block)
    return digest.hexdigest()

def arg_hash(*args, **kwargs) -> str:
    """SHA-1 over the string forms of positional and (sorted) keyword arguments."""
    sha1 = hashlib.sha1()
    for arg in args:
        sha1.update("({})".format(arg).encode("utf-8"))
    for key, value in sorted(kwargs.items()):
        sha1.update("({}:{})".format(key, value).encode("utf-8"))
    return sha1.hexdigest()

def array_hash(*arrays) -> str:
    """Hash of the contents of numerical arrays as little-endian float64, stable across runs."""
    sha1 = hashlib.sha1()
    for array in arrays:
        data = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
        sha1.update(str(data.shape).encode("utf-8"))
        sha1.update(data.tobytes())
    return sha1.hexdigest()

def normalize_path(path: str, root: str = None) -> str:
    if os.path.isabs(path):
        return path
    return os.path.normpath(os.path.join(root or os.getcwd(), path))

def to_string(value) -> str:
    return "" if value is None else str(value)

def to_number(value, max_n=None, min_n=None, conversion=int):
    from blip.utilities.attributes import AttributeException

    try:
        number = conversion(value)
    except (TypeError, ValueError) as e:
        raise AttributeException("Number conversion error: {}".format(e))
    if max_n is not None and number > max_n:
        raise AttributeException("Value {} above the allowed maximum {}".format(number, max_n))
    if min_n is not None and number < min_n:
        raise AttributeException("Value {} below the allowed minimum {}".format(number, min_n))
    return number

def to_logical(value) -> bool:
    if isinstance(value, str):
        return value.strip().lower() in ("true", "1", "t", "y", "yes", "on")
    return bool(value)

def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0

class ColoredFormatter(logging.Formatter):
    """Colors the message by level, the record passed to other handlers stays untouched."""

    _STYLES = {
        logging.DEBUG: colorama.Fore.GREEN,
        logging.WARNING: colorama.Fore.YELLOW,
        logging.ERROR: colorama.Fore.RED,
        logging.CRITICAL: colorama.Fore.RED + colorama.Style.BRIGHT,
    }

    def __init__(self, **kwargs):
        super().__init__(**kwargs)
        colorama.init()

    def format(self, record: logging.LogRecord) -> str:
        style = self._STYLES.get(record.levelno, "")
        if not style:
            return super().format(record)
        colored = copy.copy(record)
        colored.msg = style + str(record.msg) + colorama.Style.RESET_ALL
        return super().format(colored)

class ThreadPoolExecutor(futures.ThreadPoolExecutor):
    """Thread pool that cancels queued sweep cells on shutdown instead of draining them."""

    def shutdown(self, wait=True, *, cancel_futures=True):
        super().shutdown(wait=wait, cancel_futures=cancel_futures)
