import os
import shlex
import shutil

from datetime import datetime, timezone

DATE_FORMAT = '%Y-%m-%d %H:%M:%S'

# longest stderr excerpt kept in a Failed reason
EXCERPT_BYTES = 2048


def now_str():
    """
    Return the current day and time as a string.

    in the UTC timezone

    EXAMPLES::

        In [3]: now_str()
        Out[3]: '2025-03-02 09:00:08'
    """
    return datetime.now(timezone.utc).strftime(DATE_FORMAT)


def excerpt(data, limit=EXCERPT_BYTES):
    """
    Return the tail of ``data`` (bytes or text) as text, at most ``limit``
    bytes long once encoded.
    """
    if data is None:
        return ''
    if isinstance(data, str):
        data = data.encode('utf-8', 'replace')
    return data[-limit:].decode('utf-8', 'replace').strip()


def split_template(template):
    """
    Split a command template into an argument vector.

    The template is never given to a shell; placeholders such as
    ``{input}`` stay inside their argument.

    EXAMPLES::

        >>> split_template('opt -passes={pipeline} {input} -o {output}')
        ['opt', '-passes={pipeline}', '{input}', '-o', '{output}']
    """
    if isinstance(template, (list, tuple)):
        return list(template)
    try:
        return shlex.split(template)
    except ValueError as msg:
        raise ConfigException("malformed command {!r}: {}".format(template, msg))


def fill_template(argv, **values):
    """
    Substitute ``{name}`` placeholders inside every argument of ``argv``.

    Only the given names are replaced, so pipeline text with braces or
    angle brackets passes through untouched.
    """
    filled = []
    for arg in argv:
        for key, value in values.items():
            arg = arg.replace('{' + key + '}', str(value))
        filled.append(arg)
    return filled


def check_template(template, placeholders, name):
    """
    Check that each placeholder occurs exactly once in the template.
    """
    argv = split_template(template)
    if not argv:
        raise ConfigException("the {} command is empty".format(name))
    joined = ' '.join(argv)
    for key in placeholders:
        count = joined.count('{' + key + '}')
        if count != 1:
            msg = "the {} command must contain {{{}}} exactly once (found {})"
            raise ConfigException(msg.format(name, key, count))
    return argv


def check_executable(argv, name):
    """
    Raise ``ConfigException`` if the program of ``argv`` cannot be found.
    """
    program = argv[0]
    if os.path.sep in program:
        if os.path.isfile(program) and os.access(program, os.X_OK):
            return program
    else:
        found = shutil.which(program)
        if found is not None:
            return found
    raise ConfigException("{} command not found: {}".format(name, program))


class ConfigException(Exception):
    """
    An exception to raise to abort the tuner without implicating a partition.
    """


class UsageError(ConfigException):
    """
    Raised by the command-line parser in place of exiting.
    """


class InfrastructureError(RuntimeError):
    """
    The environment failed while tuning a partition (a scorer could not be
    spawned, the baseline could not be produced, ...).

    Unlike a rejected recipe this aborts the partition.
    """
