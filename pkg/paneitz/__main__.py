from paneitz.cli import main

raise SystemExit(main())
