"""Python bindings for the agynlite control plane."""

import json
import tempfile

from ._core import Error, check, parse_definitions as _parse_definitions
from ._core import LocalPlatform as _LocalPlatform

__all__ = ["ApiError", "Error", "Platform", "check", "parse_definitions"]


class ApiError(Exception):
    """A non-2xx answer from the gateway."""

    def __init__(self, status, body):
        self.status = status
        self.code = body.get("code", "Error") if isinstance(body, dict) else "Error"
        self.body = body
        super().__init__(f"{status} {self.code}: {body}")


def parse_definitions(files):
    """Parse definition files given as {name: text}; secret values are left out."""
    return json.loads(_parse_definitions(list(files.items())))


class Platform:
    """An in-process control plane.

    users is a list of {"user", "token", "admin"} dicts. Without data_dir the
    store and volumes live in a temporary directory removed on close().
    """

    def __init__(self, users, data_dir=None, durable=False, master_key_hex="",
                 provisioning_token="", sweep_period_ms=0, start=True):
        self._tmp = None
        if data_dir is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="agynlite-")
            data_dir = self._tmp.name
        self._core = _LocalPlatform(str(data_dir), json.dumps(users), durable, master_key_hex,
                                    provisioning_token, sweep_period_ms)
        if start:
            self._core.start()

    def serve(self, host="127.0.0.1", port=0):
        """Start the HTTP listener and return its base URL."""
        return self._core.serve(host, port)

    def request(self, token, method, path, body=None):
        status, text = self._core.call(token, method, path,
                                       "" if body is None else json.dumps(body))
        data = json.loads(text) if text else None
        if status >= 300:
            raise ApiError(status, data)
        return data

    def instances(self):
        return json.loads(self._core.instances())

    def close(self):
        self._core.stop()
        if self._tmp is not None:
            self._tmp.cleanup()
            self._tmp = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
