import sys
from pathlib import Path

# Make the reference oracles importable from any test module.
sys.path.insert(0, str(Path(__file__).resolve().parent))
