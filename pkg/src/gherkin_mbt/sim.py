"""``python -m gherkin_mbt.sim --spec file`` runs the simulator executor."""
import sys

from .sim_harness import main

if __name__ == "__main__":
    sys.exit(main())
