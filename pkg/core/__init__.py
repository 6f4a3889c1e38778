"""
ShapeFlow Core — geometric primitives, file formats and error types shared by
the services, the CLI and the tests.
"""
