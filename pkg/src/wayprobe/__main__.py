from wayprobe.cli import main

raise SystemExit(main())
