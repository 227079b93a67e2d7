"""Python access to the optbench workbench.

Every method maps onto one service endpoint and returns the same JSON body,
decoded to Python objects. Errors raise OptbenchError.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable

from ._optbench import Session, suite_dir, suite_query_ids

__all__ = ["OptbenchError", "Workbench", "suite_dir", "suite_query_ids"]


class OptbenchError(RuntimeError):
    def __init__(self, status: int, body: dict[str, Any]):
        self.status = status
        self.code = body.get("code", "Internal")
        self.detail = body.get("detail", "")
        super().__init__(f"{self.code}: {body.get('message', '')}")


class Workbench:
    def __init__(self, seed: int = 7, scale: float = 1.0, work_dir: str | Path | None = None):
        self._session = Session(seed, scale, None if work_dir is None else Path(work_dir))

    def request(self, method: str, path: str, params: dict[str, str] | None = None, body: Any = None) -> Any:
        text = "" if body is None else (body if isinstance(body, str) else json.dumps(body))
        status, payload = self._session.request(method, path, params or {}, text)
        decoded = json.loads(payload)
        if status >= 400:
            raise OptbenchError(status, decoded)
        return decoded

    def health(self) -> dict[str, Any]:
        return self.request("GET", "/health")

    def queries(self) -> list[dict[str, Any]]:
        return self.request("GET", "/queries")["queries"]

    def actions(self) -> list[dict[str, Any]]:
        return self.request("GET", "/actions")["actions"]

    def optimizers(self) -> list[dict[str, Any]]:
        return self.request("GET", "/optimizers")["optimizers"]

    def plan(self, query: str, optimizer: str | None = None) -> dict[str, Any]:
        params = {} if optimizer is None else {"optimizer": optimizer}
        return self.request("GET", f"/queries/{query}/plan", params)

    def stats(self, query: str) -> dict[str, Any]:
        return self.request("GET", f"/stats/{query}")

    def diff(self, query: str, left: str, right: str) -> dict[str, Any]:
        return self.request("GET", "/plans/diff", {"query": query, "left": left, "right": right})

    def upload_optimizer(self, doc: dict[str, Any] | str, replace: bool = False) -> dict[str, Any]:
        params = {"replace": "true"} if replace else {}
        return self.request("POST", "/optimizers", params, doc)["optimizer"]

    def upload_action(self, doc: dict[str, Any] | str, replace: bool = False) -> dict[str, Any]:
        params = {"replace": "true"} if replace else {}
        return self.request("POST", "/actions", params, doc)["action"]

    def submit_bench(self, **request: Any) -> str:
        return self.request("POST", "/bench", body=request)["job_id"]

    def job(self, job_id: str) -> dict[str, Any]:
        return self.request("GET", f"/bench/{job_id}")

    def bench(self, queries: Iterable[str], optimizers: Iterable[str], repetitions: int = 5, **extra: Any) -> dict[str, Any]:
        """Runs a benchmark to completion and returns the report."""
        job_id = self.submit_bench(queries=list(queries), optimizers=list(optimizers), repetitions=repetitions, **extra)
        status = json.loads(self._session.wait_job(job_id))
        if status["status"] != "done":
            raise OptbenchError(500, status.get("error") or {"code": "Internal", "message": "benchmark failed"})
        return status["report"]
