# Subcommands of the driftguard CLI. Each module exposes register(subparsers).
