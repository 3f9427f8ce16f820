fn main() {
    std::process::exit(planb::cli::main_with(std::env::args_os()));
}
