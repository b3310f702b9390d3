"""Allow running as python3 -m mf_varopt."""
from mf_varopt.main import main
main()
