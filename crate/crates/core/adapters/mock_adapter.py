#!/usr/bin/env python3
"""Mock engine for the sembar adapter protocol.

Usage: mock_adapter.py [MODE] [ARG]

Modes:
  ok          answer detect_bars and ocr requests (default)
  error       answer every request with an error object
  malformed   answer with a line that is not JSON
  badshape    answer with JSON of the wrong shape
  wrongid     answer with an id that does not match the request
  slow        sleep ARG seconds (default 10) before answering
  crash       exit without answering
  crash_once  exit without answering if file ARG is absent (creating it),
              otherwise behave like ok

In ok mode, detect_bars reports one "rect" detection over the top-left
quarter of the image, and ocr returns the text in $MOCK_OCR_TEXT
(default "10 µm") with confidence $MOCK_OCR_CONFIDENCE (default 0.8).
"""

import json
import os
import struct
import sys
import time


def png_size(path):
    with open(path, "rb") as f:
        head = f.read(24)
    if len(head) < 24 or head[:8] != b"\x89PNG\r\n\x1a\n":
        raise ValueError("not a PNG file: " + path)
    return struct.unpack(">II", head[16:24])


def answer(req):
    task = req.get("task")
    if task == "detect_bars":
        w, h = png_size(req["image"])
        box = [0, 0, max(1, w // 2), max(1, h // 2)]
        return {"detections": [{"bbox": box, "confidence": 0.9, "class": "rect"}]}
    if task == "ocr":
        png_size(req["image"])
        return {
            "text": os.environ.get("MOCK_OCR_TEXT", "10 µm"),
            "confidence": float(os.environ.get("MOCK_OCR_CONFIDENCE", "0.8")),
        }
    raise ValueError("unknown task: %r" % (task,))


def emit(obj):
    sys.stdout.write(json.dumps(obj, ensure_ascii=False) + "\n")
    sys.stdout.flush()


def main():
    mode = sys.argv[1] if len(sys.argv) > 1 else "ok"
    arg = sys.argv[2] if len(sys.argv) > 2 else None
    if mode == "crash_once":
        if arg and not os.path.exists(arg):
            open(arg, "w").close()
            mode = "crash"
        else:
            mode = "ok"

    for line in sys.stdin:
        if not line.strip():
            continue
        req = json.loads(line)
        rid = req.get("id")
        if mode == "crash":
            sys.exit(3)
        if mode == "slow":
            time.sleep(float(arg or 10))
        if mode == "error":
            emit({"id": rid, "error": "mock failure"})
        elif mode == "malformed":
            sys.stdout.write("this is not json\n")
            sys.stdout.flush()
        elif mode == "badshape":
            emit({"id": rid, "detections": "none", "text": 5})
        elif mode == "wrongid":
            emit({"id": (rid or 0) + 1000, "detections": []})
        else:
            try:
                reply = answer(req)
            except Exception as e:  # reported to the caller, not fatal
                emit({"id": rid, "error": str(e)})
                continue
            reply["id"] = rid
            emit(reply)


if __name__ == "__main__":
    main()
