"""
Client sessions: the bound workload source, the cost counter with its cap,
the context budget and the per-session audit log.
"""

import logging
import threading
import uuid
from dataclasses import dataclass
from typing import Dict, List, Optional

from scheduler.errors import BudgetExhausted, UnknownSession
from services.probes import ProbeSource

logger = logging.getLogger(__name__)

# Cost classes, in abstract units.
COST_SUMMARY = 1
COST_PROBE = 5
COST_SIMULATE = 20
COST_VERIFY = 50
COST_DEPLOY = 50
COST_LIGHT = 1


@dataclass(frozen=True)
class CallLogEntry:
    seq: int
    tool: str
    cost: int


class Session:
    """
    One client's view of the control plane.

    Requests on one session are serialized through ``lock``; cost state is
    never shared between sessions.
    """

    def __init__(
        self,
        session_id: str,
        source: Optional[ProbeSource] = None,
        cost_cap: int = 1000,
        context_budget: int = 2048,
    ):
        self.id = session_id
        self.source = source
        self.cost_cap = cost_cap
        self.context_budget = context_budget
        self.cost_used = 0
        self.call_log: List[CallLogEntry] = []
        self.deployments: List[str] = []
        self.active_policy: Optional[str] = None
        # last WorkloadProfile classified on this session
        self.profile = None
        self.lock = threading.RLock()

    @property
    def workload(self):
        return self.source.workload if self.source is not None else None

    def charge(self, tool: str, cost: int) -> None:
        """Add ``cost`` to the counter or raise BudgetExhausted without charging."""
        with self.lock:
            if self.cost_used + cost > self.cost_cap:
                raise BudgetExhausted(
                    f"session {self.id} cost cap {self.cost_cap} reached",
                    {"used": self.cost_used, "requested": cost, "cap": self.cost_cap, "tool": tool},
                )
            self.cost_used += cost
            self.call_log.append(CallLogEntry(seq=len(self.call_log), tool=tool, cost=cost))

    def tools_called(self) -> List[str]:
        return [entry.tool for entry in self.call_log]

    def status(self) -> Dict[str, object]:
        return {
            "session_id": self.id,
            "workload": self.workload.name if self.workload is not None else None,
            "cost_used": self.cost_used,
            "cost_cap": self.cost_cap,
            "context_budget": self.context_budget,
            "deployments": list(self.deployments),
            "active_policy": self.active_policy,
            "calls": [{"seq": e.seq, "tool": e.tool, "cost": e.cost} for e in self.call_log],
        }


class SessionManager:
    """Thread-safe registry of open sessions."""

    def __init__(self, cost_cap: int = 1000, context_budget: int = 2048):
        self.cost_cap = cost_cap
        self.context_budget = context_budget
        self._sessions: Dict[str, Session] = {}
        self._lock = threading.Lock()

    def open(
        self,
        source: Optional[ProbeSource] = None,
        cost_cap: Optional[int] = None,
        context_budget: Optional[int] = None,
    ) -> Session:
        session = Session(
            session_id=uuid.uuid4().hex[:12],
            source=source,
            cost_cap=self.cost_cap if cost_cap is None else cost_cap,
            context_budget=self.context_budget if context_budget is None else context_budget,
        )
        with self._lock:
            self._sessions[session.id] = session
        logger.info("opened session %s (cap %d)", session.id, session.cost_cap)
        return session

    def get(self, session_id: str) -> Session:
        with self._lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise UnknownSession(f"no open session '{session_id}'", {"session_id": session_id})
        return session

    def close(self, session_id: str) -> Dict[str, object]:
        with self._lock:
            session = self._sessions.pop(session_id, None)
        if session is None:
            raise UnknownSession(f"no open session '{session_id}'", {"session_id": session_id})
        logger.info("closed session %s after %d cost units", session_id, session.cost_used)
        return session.status()

    def __len__(self) -> int:
        return len(self._sessions)
