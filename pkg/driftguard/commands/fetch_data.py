import argparse
import logging

from driftguard import fetch_client
from driftguard.settings import get_settings

logger = logging.getLogger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("fetch-data", help="Show or download the UCI source data")
    parser.add_argument("--dataset", required=True, choices=sorted(fetch_client.DEFAULT_URLS))
    parser.add_argument("--out", default=None, help="Target directory (default DRIFTGUARD_DATA_DIR)")
    parser.add_argument("--download", action="store_true", help="Download instead of only printing the source")
    parser.add_argument("--expect-sha256", default=None, help="Reject a download whose CSV hash differs")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    out_dir = args.out or get_settings().data_dir
    if args.download:
        result = fetch_client.download(args.dataset, out_dir, expect_sha256=args.expect_sha256)
    else:
        result = fetch_client.describe(args.dataset, out_dir)
    print(f"dataset: {result.dataset}")
    print(f"url:     {result.url}")
    print(f"path:    {result.path or 'not downloaded'}")
    print(f"sha256:  {result.sha256 or 'not available'}")
    if result.sha256:
        print(f"checked: {'matches --expect-sha256' if result.verified else 'not verified'}")
    return 0
