fn main() {
    std::process::exit(cgplvm_cli::run(std::env::args_os()));
}
