"""Launch the session gateway against a scripted mock backend.

Test harness for the frontend's end-to-end suite. Starts the mock
completion server with a fixed rule set, starts the gateway on an
ephemeral port, prints one JSON line {"gateway": ..., "backend": ...}
once both accept connections, then serves until killed.

Run with PYTHONPATH pointing at the backend package sources:

    PYTHONPATH=../src python3 scripts/run_gateway.py
"""
import json
import sys
import threading
import time

import uvicorn

from turnwise.backend import BackendConfig
from turnwise.config import ServiceConfig
from turnwise.controller import SessionConfig
from turnwise.gateway import create_app
from turnwise.testing.mock_backend import MockBackendServer, Rule

ADD_PROBLEM = "Add 19 and 23."
ADD_PLAN = (
    "<think>19 plus 23: 19 and 1 makes 20, then 22 more is 42.</think>"
    "The sum is \\boxed{42}"
    "<think>Recheck by flipping it: 23 plus 19 is also 42.</think>"
    "Confirmed, the sum is \\boxed{42}"
)

TIMES_PROBLEM = "What is 7 times 8?"
TIMES_PLAN = (
    "<think>7 times 8 is 56 from the times table.</think>"
    "I get \\boxed{56}"
    "<think>Check: 7 times 8 = 7 times 10 minus 7 times 2 = 70 - 14 = 56.</think>"
    "Still \\boxed{56}"
    "<think>One more pass: 8, 16, 24, 32, 40, 48, 56.</think>"
    "Counting by eights agrees, \\boxed{56}"
    "<think>No further checks needed.</think>"
    "Final answer \\boxed{56}"
)

PRIMES_PROBLEM = "List the product of the first three primes."
PRIMES_PLAN = (
    "<think>The first three primes are 2, 3, and 5.</think>"
    "So far I have 2, 3, 5; the product is \\boxed{30}"
    "<think>Multiply step by step: 2 times 3 is 6, times 5 is 30.</think>"
    "The product is \\boxed{30}"
    "<think>30 factors back into 2, 3, 5, so nothing was missed.</think>"
    "Final answer \\boxed{30}"
)

RULES = [
    Rule(contains=(ADD_PROBLEM,), transcript=ADD_PLAN, chunk_size=16),
    Rule(contains=(TIMES_PROBLEM,), transcript=TIMES_PLAN, chunk_size=16),
    # slow enough that a simulated disconnect lands mid-session
    Rule(
        contains=(PRIMES_PROBLEM,),
        transcript=PRIMES_PLAN,
        chunk_size=8,
        delay_ms=60,
        chunk_delay_ms=15,
    ),
]


def main() -> int:
    backend_server = MockBackendServer(rules=RULES).start()
    service = ServiceConfig(
        backend=BackendConfig(
            base_url=backend_server.base_url,
            model="mock-model",
            timeout_s=30.0,
            max_retries=1,
            backoff_base_s=0.01,
        ),
        session=SessionConfig(),
        capacity=16,
        replay_ttl_s=600.0,
    )
    app = create_app(service)
    server = uvicorn.Server(
        uvicorn.Config(app, host="127.0.0.1", port=0, log_level="warning")
    )
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 15
    while not server.started:
        if time.monotonic() > deadline:
            print(json.dumps({"error": "gateway did not start"}), flush=True)
            return 1
        if not thread.is_alive():
            print(json.dumps({"error": "gateway thread died"}), flush=True)
            return 1
        time.sleep(0.02)
    port = server.servers[0].sockets[0].getsockname()[1]
    print(
        json.dumps(
            {
                "gateway": f"http://127.0.0.1:{port}",
                "backend": backend_server.base_url,
            }
        ),
        flush=True,
    )
    try:
        thread.join()
    except KeyboardInterrupt:
        pass
    finally:
        backend_server.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())
