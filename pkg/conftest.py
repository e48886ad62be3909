import os
import sys

# common/ and utils/ are imported from the project root, the way app.py runs.
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
