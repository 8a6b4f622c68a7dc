"""CLI entry point: dispatches to subcommands."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

COMMANDS = ("generate-data", "train", "probe", "eval", "viz", "report")

if __name__ == "__main__":
    if len(sys.argv) < 2:
        print("Usage: python -m cli <command>")
        print(f"Commands: {', '.join(COMMANDS)}")
        sys.exit(1)

    cmd = sys.argv[1]
    # Remove the subcommand from argv so argparse in each module works
    sys.argv = [sys.argv[0]] + sys.argv[2:]

    if cmd == "generate-data":
        from cli.generate_data import main
        main()
    elif cmd == "train":
        from cli.train import main
        main()
    elif cmd == "probe":
        from cli.probe import main
        main()
    elif cmd == "eval":
        from cli.evaluate import main
        main()
    elif cmd == "viz":
        from cli.viz import main
        main()
    elif cmd == "report":
        from cli.report import main
        main()
    else:
        print(f"Unknown command: {cmd}")
        sys.exit(1)
