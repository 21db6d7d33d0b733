#!/usr/bin/env python3

"""
Cross-platform PYTHONPATH setup for SignX.

Detects the project root, puts shared/python on the import path and writes a
.env file that the pipeline (via python-dotenv) and editors read.
"""

import sys
import argparse
import os
from pathlib import Path


DEFAULT_THREADS = 1


def get_project_root() -> Path:
    """
    Get the absolute path to the project root directory.

    Returns:
        Path: Absolute path to project root directory
    """

    start_path = Path(__file__).resolve().parent.parent

    # Files that exist at the project root
    indicators = ['README.md', 'requirements.txt', 'shared']
    current_path = start_path

    while current_path != current_path.parent:
        if all((current_path / indicator).exists() for indicator in indicators):
            return current_path
        current_path = current_path.parent

    return Path(__file__).resolve().parent.parent


def setup_python_path() -> None:
    """
    Add shared Python modules to sys.path for the current session.
    """

    shared_python_path = get_project_root() / 'shared' / 'python'

    if shared_python_path.exists():
        shared_path_str = str(shared_python_path)

        if shared_path_str not in sys.path:
            sys.path.insert(0, shared_path_str)
            print(f"Added to PYTHONPATH: {shared_path_str}")


def generate_env_file(threads: int | None = None) -> Path:
    """
    Generate the .env file with absolute paths and the stage thread cap.

    Args:
        threads (int, optional): Value for SIGNX_THREADS. Defaults to the current environment value or 1.

    Returns:
        Path: The .env file written.
    """

    project_root = get_project_root()
    shared_python_path = project_root / 'shared' / 'python'

    if threads is None:
        threads = int(os.getenv('SIGNX_THREADS', DEFAULT_THREADS))

    env_content = f"""# Auto-generated - Run 'python setup/setup_python_path.py --generate-env' to regenerate
PROJECT_ROOT={project_root}
PYTHONPATH={shared_python_path}
SIGNX_THREADS={max(1, threads)}
"""

    env_file_path = project_root / '.env'

    with open(env_file_path, 'w', encoding='utf-8') as f:
        f.write(env_content)

    print()
    print(f"Generated .env file   : {env_file_path}")
    print(f"PROJECT_ROOT          : {project_root}")
    print(f"PYTHONPATH            : {shared_python_path}")
    print(f"SIGNX_THREADS         : {max(1, threads)}\n")

    return env_file_path


def main(argv: list[str] | None = None) -> None:
    """
    Main entry point for command-line usage.
    """

    parser = argparse.ArgumentParser(description = 'SignX Python environment setup')
    group = parser.add_mutually_exclusive_group()
    group.add_argument('--generate-env', action = 'store_true', help = 'Write .env (PROJECT_ROOT, PYTHONPATH, SIGNX_THREADS)')
    group.add_argument('--run-only', action = 'store_true', help = "Only modify the current session's sys.path")
    parser.add_argument('--threads', type = int, default = None, help = 'SIGNX_THREADS value (default: current environment or 1)')
    args = parser.parse_args(argv)

    if args.generate_env:
        generate_env_file(args.threads)
    elif args.run_only:
        setup_python_path()
    else:
        parser.print_help()


if __name__ == "__main__":
    main()
