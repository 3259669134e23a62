"""uflow-extract: turn an image manifest into a dataset directory."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .extract import ExtractJob, extract_features


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="uflow-extract",
        description="Encode screenshot sequences into a uflow dataset directory",
    )
    parser.add_argument("--manifest", required=True, help="input manifest JSON")
    parser.add_argument("--out", required=True, help="output dataset directory")
    parser.add_argument(
        "--encoder", choices=["stub", "dinov2-vitl14-reg"], default="stub"
    )
    parser.add_argument("--text-provider", choices=["toy", "http"], default="toy")
    parser.add_argument("--provider-url")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        summary = extract_features(
            ExtractJob(
                manifest_path=args.manifest,
                out_dir=args.out,
                encoder=args.encoder,
                text_provider=args.text_provider,
                provider_url=args.provider_url,
            )
        )
    except Exception as exc:  # surfaced as a single parseable line
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(summary, sort_keys=True, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
