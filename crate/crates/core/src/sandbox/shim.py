"""Minimal interpreter-side sandbox agent.

Reads length-prefixed UTF-8 JSON frames {id, code} on stdin, executes each
code string in one persistent namespace and answers with
{id, stdout, stderr, exit, timed_out}. SIGINT aborts the running block only.
"""
import contextlib
import io
import json
import os
import signal
import struct
import sys
import traceback

PROTOCOL_ERROR = 3

_proto_in = os.fdopen(os.dup(0), "rb", buffering=0)
_proto_out = os.fdopen(os.dup(1), "wb", buffering=0)
_null = os.open(os.devnull, os.O_RDONLY)
os.dup2(_null, 0)
os.dup2(2, 1)
sys.stdin = open(os.devnull)

if os.environ.get("SANDBOX_ALLOW_NETWORK") != "1":
    import socket

    def _blocked(*_args, **_kwargs):
        raise OSError("network access is disabled in this sandbox")

    socket.socket.connect = _blocked
    socket.socket.connect_ex = _blocked
    socket.create_connection = _blocked
    socket.getaddrinfo = _blocked

_executing = False


def _on_sigint(_signum, _frame):
    if _executing:
        raise KeyboardInterrupt


signal.signal(signal.SIGINT, _on_sigint)


def _read_exact(n):
    buf = b""
    while len(buf) < n:
        chunk = _proto_in.read(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def _send(payload):
    data = json.dumps(payload, ensure_ascii=False).encode("utf-8", "replace")
    _proto_out.write(struct.pack(">I", len(data)) + data)
    _proto_out.flush()


def _user_traceback(exc):
    tb = exc.__traceback__
    # drop the supervisor frame so only the block's own frames remain
    while tb is not None and tb.tb_frame.f_code.co_filename == _serve.__code__.co_filename:
        tb = tb.tb_next
    return "".join(traceback.format_exception(type(exc), exc, tb))


def _serve():
    global _executing
    namespace = {"__name__": "__main__", "__builtins__": __builtins__}
    while True:
        header = _read_exact(4)
        if header is None:
            return 0
        (length,) = struct.unpack(">I", header)
        body = _read_exact(length)
        if body is None:
            return PROTOCOL_ERROR
        try:
            request = json.loads(body.decode("utf-8"))
            rid = request["id"]
            code = request["code"]
            if not isinstance(code, str):
                raise TypeError("code must be a string")
        except Exception:
            return PROTOCOL_ERROR

        out, err = io.StringIO(), io.StringIO()
        exit_code, timed_out = 0, False
        try:
            with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
                try:
                    compiled = compile(code, "<block>", "exec")
                    _executing = True
                    exec(compiled, namespace)
                finally:
                    _executing = False
        except KeyboardInterrupt:
            timed_out = True
            exit_code = 124
            err.write("Execution interrupted: time limit exceeded\n")
        except SystemExit as e:
            if e.code is None:
                exit_code = 0
            elif isinstance(e.code, int):
                exit_code = e.code
            else:
                exit_code = 1
                err.write(str(e.code) + "\n")
        except BaseException as e:
            exit_code = 1
            err.write(_user_traceback(e))
        _send(
            {
                "id": rid,
                "stdout": out.getvalue(),
                "stderr": err.getvalue(),
                "exit": exit_code,
                "timed_out": timed_out,
            }
        )


if __name__ == "__main__":
    os._exit(_serve())
