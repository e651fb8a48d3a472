fn main() {
    std::process::exit(scbf::harness::main_with_args(std::env::args_os()));
}
