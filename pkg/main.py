# main.py - Entry point for Cloud Functions deployment and the command line
# Cloud Functions requires main.py in the root directory

import sys

# Import the actual implementation from src/
from src.main import cloud_function_entrypoint

# Re-export the function for Cloud Functions to find
__all__ = ['cloud_function_entrypoint']

if __name__ == "__main__":
    from src.cli import main
    sys.exit(main())
