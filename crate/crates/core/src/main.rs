fn main() {
    std::process::exit(dibqc::harness::main_with_args(std::env::args_os()));
}
