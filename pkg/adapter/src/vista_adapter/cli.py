"""vista-adapter entry point: serve a mock tracker over stdin/stdout."""

from __future__ import annotations

import argparse
import sys

from .mock import MockError, build_mock_session
from .serve import serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="vista-adapter",
        description="Bridge a tracker to the vista-eval subprocess protocol.",
    )
    parser.add_argument("--mock", required=True,
                        help="echo | perfect | offset:DX,DY")
    parser.add_argument("--gt-dir", default=None,
                        help="directory of <seq>.<view>.jsonl annotation files")
    parser.add_argument("--strict", action="store_true",
                        help="abort on model exceptions instead of "
                             "predicting absent")
    args = parser.parse_args(argv)
    try:
        session = build_mock_session(args.mock, args.gt_dir, args.strict)
    except MockError as exc:
        parser.error(str(exc))
    return serve(session)


if __name__ == "__main__":
    sys.exit(main())
