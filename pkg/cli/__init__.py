from cli.parser import EXIT_CONFIG, EXIT_IO, EXIT_OK, build_parser, run
