"""`python -m mcgraph` dispatches to the command-line front end."""

from .cli import main

raise SystemExit(main())
