# Makes shared/python a package for imports
