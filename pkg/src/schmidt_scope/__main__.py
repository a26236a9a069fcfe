import sys

from schmidt_scope.expcli import main

sys.exit(main())
