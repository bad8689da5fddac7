"""
JSON-RPC clients of the control plane.

Agents reach the server only through these: ``InProcessClient`` round-trips
real JSON text through a ControlPlane in the same process, ``HttpClient``
posts to a running server's /rpc endpoint.
"""

import itertools
import json
import logging
from typing import Any, Dict, List, Optional

import httpx

from scheduler.errors import SchedCPError

logger = logging.getLogger(__name__)


class RemoteError(SchedCPError):
    """A JSON-RPC error envelope raised on the client side; ``kind`` is the server's."""

    def __init__(self, envelope: Dict[str, Any]):
        data = envelope.get("data") or {}
        super().__init__(envelope.get("message", ""), data.get("details") or {})
        self.kind = data.get("kind", "RemoteError")
        self.rpc_code = envelope.get("code", -32000)


class RpcClient:
    def __init__(self):
        self._ids = itertools.count(1)

    def _send(self, payload: str) -> Optional[str]:
        raise NotImplementedError

    def request(self, method: str, params: Optional[Dict[str, Any]] = None) -> Any:
        message = {"jsonrpc": "2.0", "id": next(self._ids), "method": method, "params": params or {}}
        reply = self._send(json.dumps(message))
        if reply is None:
            raise RemoteError({"message": f"no response to {method}", "data": {"kind": "NoResponse"}})
        response = json.loads(reply)
        if "error" in response:
            raise RemoteError(response["error"])
        return response["result"]

    def initialize(self) -> Dict[str, Any]:
        return self.request("initialize")

    def list_tools(self) -> List[Dict[str, Any]]:
        return self.request("tools/list")["tools"]

    def open_session(self, workload: Optional[Dict[str, Any]] = None, **params) -> str:
        if workload is not None:
            params["workload"] = workload
        return self.request("session/open", params)["session_id"]

    def close_session(self, session_id: str) -> Dict[str, Any]:
        return self.request("session/close", {"session_id": session_id})

    def call(self, name: str, session_id: str, /, **arguments) -> Any:
        arguments["session_id"] = session_id
        return self.request("tools/call", {"name": name, "arguments": arguments})


class InProcessClient(RpcClient):
    def __init__(self, plane):
        super().__init__()
        self.plane = plane

    def _send(self, payload: str) -> Optional[str]:
        return self.plane.handle_text(payload)


class HttpClient(RpcClient):
    def __init__(self, base_url: str = "http://127.0.0.1:8765", timeout: float = 120.0,
                 client: Optional[httpx.Client] = None):
        super().__init__()
        self.http = client or httpx.Client(base_url=base_url, timeout=timeout)

    def _send(self, payload: str) -> Optional[str]:
        response = self.http.post("/rpc", content=payload, headers={"content-type": "application/json"})
        response.raise_for_status()
        if response.status_code == 204:
            return None
        return response.text

    def close(self) -> None:
        self.http.close()
