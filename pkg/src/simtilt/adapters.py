"""JSON-lines wire protocol for out-of-process models and oracles.

One request, one response, one JSON object per line, strictly sequential
per endpoint (no pipelining). The default transport spawns the peer as a
child process on stdio; TCP is optional. See docs/protocol.md for the full
schema and ``serve`` for the reference server.
"""

from __future__ import annotations

import json
import math
import socket
import subprocess
import sys

import numpy as np

from .policy import PolicyModel
from .smiles import Vocab

PROTOCOL_VERSION = 1


class ProtocolError(RuntimeError):
    pass


class VersionMismatchError(ProtocolError):
    pass


class MalformedHandshakeError(ProtocolError):
    pass


class LengthMismatchError(ProtocolError):
    pass


class TransportError(ProtocolError):
    pass


class EndpointTimeoutError(TransportError):
    pass


class ConnectError(TransportError):
    pass


class StdioEndpoint:
    """Child process speaking the protocol on its stdin/stdout."""

    def __init__(self, argv: list[str]):
        try:
            self._proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, bufsize=1)
        except OSError as exc:
            raise ConnectError(f"cannot spawn {argv!r}: {exc}") from exc

    def request(self, obj: dict) -> dict:
        proc = self._proc
        if proc.poll() is not None:
            raise TransportError("server process has exited")
        try:
            proc.stdin.write(json.dumps(obj) + "\n")
            proc.stdin.flush()
            line = proc.stdout.readline()
        except (BrokenPipeError, OSError) as exc:
            raise TransportError(f"transport failure: {exc}") from exc
        if not line:
            raise TransportError("server closed the connection")
        return _decode_reply(line)

    def close(self) -> None:
        proc = self._proc
        if proc.poll() is None:
            try:
                proc.stdin.close()
            except OSError:
                pass
            try:
                proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()


class TcpEndpoint:
    """TCP connection speaking one JSON object per line."""

    def __init__(self, host: str, port: int, timeout: float | None = 10.0):
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except socket.timeout as exc:
            raise EndpointTimeoutError(f"connect timed out: {host}:{port}") from exc
        except OSError as exc:
            raise ConnectError(f"cannot connect to {host}:{port}: {exc}") from exc
        self._file = self._sock.makefile("rw", encoding="utf-8", newline="\n")

    def request(self, obj: dict) -> dict:
        try:
            self._file.write(json.dumps(obj) + "\n")
            self._file.flush()
            line = self._file.readline()
        except socket.timeout as exc:
            raise EndpointTimeoutError("request timed out") from exc
        except OSError as exc:
            raise TransportError(f"transport failure: {exc}") from exc
        if not line:
            raise TransportError("server closed the connection")
        return _decode_reply(line)

    def close(self) -> None:
        try:
            self._file.close()
        finally:
            self._sock.close()


def _decode_reply(line: str) -> dict:
    try:
        reply = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"response is not valid JSON: {line!r}") from exc
    if not isinstance(reply, dict):
        raise ProtocolError(f"response is not an object: {reply!r}")
    if "error" in reply:
        raise ProtocolError(f"server error: {reply['error']}")
    return reply


def connect(spec) -> StdioEndpoint | TcpEndpoint:
    """Open an endpoint from an argv list, a dict, or 'tcp:host:port'."""
    if isinstance(spec, (list, tuple)):
        return StdioEndpoint(list(spec))
    if isinstance(spec, dict):
        transport = spec.get("transport", "stdio")
        if transport == "stdio":
            return StdioEndpoint(list(spec["argv"]))
        if transport == "tcp":
            return TcpEndpoint(spec["host"], int(spec["port"]),
                               timeout=spec.get("timeout", 10.0))
        raise ValueError(f"unknown transport {transport!r}")
    if isinstance(spec, str) and spec.startswith("tcp:"):
        host, _, port = spec[4:].rpartition(":")
        return TcpEndpoint(host, int(port))
    raise ValueError(f"cannot interpret endpoint spec {spec!r}")


def handshake(endpoint) -> dict:
    """Exchange versions and (for models) the vocabulary and embed_dim."""
    reply = endpoint.request({"op": "handshake", "version": PROTOCOL_VERSION})
    version = reply.get("version")
    if version != PROTOCOL_VERSION:
        raise VersionMismatchError(
            f"server speaks version {version!r}, expected {PROTOCOL_VERSION}")
    kind = reply.get("kind", "model")
    info = {"kind": kind, "name": reply.get("name", "")}
    if kind == "model":
        tokens = reply.get("tokens")
        bos = reply.get("bos")
        eos = reply.get("eos")
        embed_dim = reply.get("embed_dim")
        if (not isinstance(tokens, list) or not tokens
                or not isinstance(bos, int) or not isinstance(eos, int)
                or not isinstance(embed_dim, int) or embed_dim < 1):
            raise MalformedHandshakeError(f"incomplete model handshake: {reply}")
        try:
            info["vocab"] = Vocab.from_wire(tokens, bos, eos)
        except ValueError as exc:
            raise MalformedHandshakeError(str(exc)) from exc
        info["embed_dim"] = embed_dim
    return info


def _check_vector(values, expected_len: int, what: str) -> np.ndarray:
    if not isinstance(values, list):
        raise ProtocolError(f"{what} missing from response")
    if len(values) != expected_len:
        raise LengthMismatchError(
            f"{what} has length {len(values)}, expected {expected_len}")
    arr = np.asarray(values, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ProtocolError(f"{what} contains non-finite values")
    return arr


class RemotePolicyModel(PolicyModel):
    """PolicyModel served by a remote endpoint; one exclusive session."""

    def __init__(self, endpoint):
        self._endpoint = endpoint
        info = handshake(endpoint)
        if info["kind"] != "model":
            raise MalformedHandshakeError(
                f"endpoint is a {info['kind']!r}, not a model")
        self.vocab = info["vocab"]
        self.embed_dim = info["embed_dim"]

    def logits(self, prefix_ids) -> np.ndarray:
        reply = self._endpoint.request(
            {"op": "logits", "tokens": [int(i) for i in prefix_ids]})
        return _check_vector(reply.get("logits"), len(self.vocab), "logits")

    def embed(self, prefix_ids) -> np.ndarray:
        reply = self._endpoint.request(
            {"op": "embed", "tokens": [int(i) for i in prefix_ids]})
        return _check_vector(reply.get("vector"), self.embed_dim, "vector")

    def close(self) -> None:
        self._endpoint.close()


def serve(model=None, oracle=None, lines_in=None, lines_out=None,
          version: int = PROTOCOL_VERSION) -> None:
    """Reference server: answers protocol requests until EOF on input."""
    lines_in = lines_in if lines_in is not None else sys.stdin
    lines_out = lines_out if lines_out is not None else sys.stdout

    def reply(obj: dict) -> None:
        lines_out.write(json.dumps(obj) + "\n")
        lines_out.flush()

    for line in lines_in:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
            op = req.get("op")
            if op == "handshake":
                out = {"version": version}
                if model is not None:
                    out.update({
                        "kind": "model",
                        "tokens": model.vocab.texts,
                        "bos": model.vocab.bos_id,
                        "eos": model.vocab.eos_id,
                        "embed_dim": model.embed_dim,
                    })
                elif oracle is not None:
                    out.update({"kind": "oracle", "name": oracle.name})
                reply(out)
            elif op == "logits" and model is not None:
                reply({"logits": model.logits(req["tokens"]).tolist()})
            elif op == "embed" and model is not None:
                reply({"vector": model.embed(req["tokens"]).tolist()})
            elif op == "score" and oracle is not None:
                value = oracle.score(req["smiles"])
                if not (isinstance(value, (int, float))
                        and math.isfinite(value)):
                    raise ValueError(f"oracle returned {value!r}")
                reply({"score": float(value)})
            else:
                reply({"error": f"unsupported op {op!r}"})
        except Exception as exc:  # noqa: BLE001 - report, keep serving
            reply({"error": f"{type(exc).__name__}: {exc}"})
