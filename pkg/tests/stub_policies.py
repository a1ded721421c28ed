#!/usr/bin/env python3
"""Stdio stub policies for wire-protocol tests.

Usage: stub_policies.py {conform|garbage|extra_field|sleep|quit}

The conform stub is strict in both directions: if an incoming observe
message does not have exactly the documented fields it answers with a
deliberately broken reply, which shows up as a failed trial in the tests.
"""
import json
import sys
import time

OBSERVE_FIELDS = {"type", "instruction", "raster_base64", "step"}


def main() -> int:
    behavior = sys.argv[1] if len(sys.argv) > 1 else "conform"
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
        except ValueError:
            print('{"type":"error"}', flush=True)
            continue
        if msg.get("type") == "reset":
            if set(msg.keys()) != {"type"}:
                print('{"type":"error"}', flush=True)
            continue
        if behavior == "quit":
            return 0
        if behavior == "sleep":
            time.sleep(5.0)
        if behavior == "garbage":
            print("%%% this is not json", flush=True)
            continue
        if behavior == "extra_field":
            reply = {
                "type": "act",
                "delta_position": [0.0, 0.0, 0.0],
                "gripper": "HOLD",
                "debug": "should not be here",
            }
            print(json.dumps(reply), flush=True)
            continue
        if set(msg.keys()) != OBSERVE_FIELDS:
            print('{"type":"error"}', flush=True)
            continue
        reply = {
            "type": "act",
            "delta_position": [0.01, 0.0, 0.0],
            "gripper": "HOLD",
        }
        print(json.dumps(reply), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
