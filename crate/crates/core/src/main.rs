fn main() { std::process::exit(fedsilo::harness::run_cli(std::env::args_os())); }
